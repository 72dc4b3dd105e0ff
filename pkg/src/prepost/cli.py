"""Command-line entry point: ``prepost <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from . import analytics
from .config import CONFIG_IDS, ConfigError, Scenario, builtin_configuration, load_experiment
from .dgp import dataset_to_csv, make_dataset
from .harness import replication_log_csv, reproduce_table, run_mc
from .lmm import Approach, Estimator, ModelSpec
from .report import render_summary, write_atomic

log = logging.getLogger("prepost")

DEFAULT_DELTA = math.log(0.2 / 0.8)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _specs(args) -> list[ModelSpec]:
    estimator = Estimator(args.estimator)
    means = (False, True) if args.with_cluster_mean else (False,)
    return [ModelSpec(a, m, estimator) for a in Approach for m in means]


def _write_outputs(out: Path, stem: str, summaries, outcomes=None) -> None:
    write_atomic(out / f"{stem}.csv", render_summary(summaries, "csv"))
    write_atomic(out / f"{stem}.txt", render_summary(summaries, "text"))
    write_atomic(out / f"{stem}.json", render_summary(summaries, "json"))
    if outcomes is not None:
        write_atomic(out / f"{stem}_replications.csv", replication_log_csv(outcomes))


def cmd_simulate(args) -> int:
    out = Path(args.out)
    if args.experiment:
        plan = load_experiment(Path(args.experiment))
        runs = [(e.name, e.config, [ModelSpec.parse(s) for s in e.specs], e.k, e.seed) for e in plan]
    else:
        config = builtin_configuration(args.scenario, args.config, args.n)
        runs = [(f"s{config.scenario.number}_{config.label}_n{args.n}", config, _specs(args), args.k, args.seed)]
    all_summaries = []
    all_outcomes = []
    for name, config, specs, k, seed in runs:
        log.info("running %s: K=%d seed=%d specs=%s", name, k, seed, ",".join(s.label for s in specs))
        summaries, outcomes = run_mc(config, specs, k, seed, args.jobs, return_outcomes=True)
        all_summaries.extend(summaries)
        all_outcomes.extend(outcomes)
    _write_outputs(out, "summary", all_summaries, all_outcomes)
    sys.stdout.write(render_summary(all_summaries, "text"))
    return 0


def cmd_reproduce(args) -> int:
    result = reproduce_table(args.table, args.n, args.k, args.seed, args.jobs)
    stem = f"table{args.table}_n{args.n}"
    _write_outputs(Path(args.out), stem, result.summaries)
    sys.stdout.write(render_summary(result.summaries, "text"))
    return 0


def cmd_bias(args) -> int:
    f = args.formula
    if f in ("eq5", "eq13"):
        lam2 = 0.0 if f == "eq5" else args.lambda2
        pred = analytics.bias_conditioning_continuous(
            args.tau, args.alpha, args.beta1, args.beta2, args.lambda1, lam2, args.var_z
        )
    elif f in ("eq10", "eq14"):
        lam2 = 0.0 if f == "eq10" else args.lambda2
        pred = analytics.bias_conditioning_binary(
            args.tau, args.alpha, args.delta, args.beta1, args.beta2, args.lambda1, lam2
        )
    else:
        pred = analytics.bias_gain_binary(args.tau, args.alpha, args.delta, args.beta1, args.beta2)
    print(f"formula: {pred.formula_id.value}")
    print(f"expected_coefficient: {pred.expected_coefficient:.12g}")
    print(f"bias: {pred.bias:.12g}")
    if f in ("eq10", "eq14", "gain"):
        m = analytics.treated_ability_moments(args.alpha, args.delta)
        print(f"pi: {m.pi:.12g}")
        print(f"mean_ability_treated: {m.mean_ability_treated:.12g}")
    return 0


def cmd_reliability(args) -> int:
    from .config import DgpConfig

    if args.cluster_mean:
        beta_b = args.beta_b if args.beta_b is not None else args.beta1 + args.psi1
        cfg = DgpConfig(beta1=beta_b, psi1=0.0, lambda1=args.lambda1, var_u1=args.var_u1, var_e=args.var_e)
        value = analytics.reliability_cluster_mean(cfg, args.n, args.var_b)
        kind = "cluster_mean"
    elif args.overall:
        cfg = DgpConfig(beta1=args.beta1, psi1=args.psi1, lambda1=args.lambda1,
                        var_u1=args.var_u1, var_e=args.var_e)
        value = analytics.reliability_overall_multilevel(cfg, args.var_w, args.var_b)
        kind = "overall"
    else:
        value = analytics.reliability_pretest(args.beta1, args.lambda1, args.var_a, args.var_e)
        kind = "pretest"
    print(f"reliability ({kind}): {value:.12g}")
    return 0


def cmd_dump(args) -> int:
    config = builtin_configuration(args.scenario, args.config, args.n)
    dataset = make_dataset(config, args.seed)
    out = Path(args.out)
    if out.suffix.lower() != ".csv":
        out = out / f"dataset_s{config.scenario.number}_{config.label}_n{args.n}_seed{args.seed}.csv"
    write_atomic(out, dataset_to_csv(dataset))
    print(str(out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="prepost", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common_sim(p):
        p.add_argument("--k", type=int, default=1000, help="Monte Carlo replications")
        p.add_argument("--seed", type=int, default=20240101, help="master seed")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        p.add_argument("--out", default="results", help="output directory")

    def population(p):
        p.add_argument("--scenario", default="1", help="1/individual or 2/cluster treatment")
        p.add_argument("--config", default="I", choices=CONFIG_IDS, help="builtin configuration")
        p.add_argument("--n", type=int, default=100, help="cluster size (must divide 10000)")

    p = sub.add_parser("simulate", help="run MC replications for one configuration", formatter_class=fmt)
    population(p)
    common_sim(p)
    p.add_argument("--estimator", choices=("ols", "ml"), default="ml", help="estimator family")
    p.add_argument("--with-cluster-mean", action="store_true", help="also fit specs including the cluster-mean pre-test")
    p.add_argument("--experiment", default=None, help="TOML experiment file (overrides population flags)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reproduce-table", help="reproduce result table 3 or 4", formatter_class=fmt)
    p.add_argument("--table", type=int, choices=(3, 4), default=3, help="table number")
    p.add_argument("--n", type=int, default=100, help="cluster size (table 4: 100 or 4)")
    common_sim(p)
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("bias", help="expected OLS treatment coefficient", formatter_class=fmt)
    p.add_argument("--formula", choices=("eq5", "eq10", "eq13", "eq14", "gain"), default="eq10",
                   help="eq5/eq13 continuous treatment, eq10/eq14 binary, gain = gain-score binary")
    for name, default in (("tau", 2.0), ("alpha", 1.0), ("delta", DEFAULT_DELTA), ("beta1", 16.0),
                          ("beta2", 16.0), ("lambda1", 6.0), ("lambda2", 0.0), ("var-z", 1.0)):
        p.add_argument(f"--{name}", type=float, default=default, help=f"{name} parameter")
    p.set_defaults(func=cmd_bias)

    p = sub.add_parser("reliability", help="pre-test, overall or cluster-mean reliability", formatter_class=fmt)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--pretest", action="store_true", help="single-level pre-test reliability (default)")
    mode.add_argument("--overall", action="store_true", help="overall multilevel reliability")
    mode.add_argument("--cluster-mean", action="store_true", help="reliability of the cluster-mean pre-test")
    for name, default in (("beta1", 16.0), ("lambda1", 6.0), ("psi1", 0.0), ("var-a", 1.0), ("var-e", 1.0),
                          ("var-w", 0.44), ("var-b", 0.56), ("var-u1", 1.0), ("n", 100.0)):
        p.add_argument(f"--{name}", type=float, default=default, help=f"{name} parameter")
    p.add_argument("--beta-b", type=float, default=None, help="between effect (default beta1 + psi1)")
    p.set_defaults(func=cmd_reliability)

    p = sub.add_parser("dump-dataset", help="write one simulated population as CSV", formatter_class=fmt)
    population(p)
    p.add_argument("--seed", type=int, default=20240101, help="dataset seed")
    p.add_argument("--out", default="results", help="output directory or .csv path")
    p.set_defaults(func=cmd_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        if getattr(args, "k", 1) < 1:
            raise UsageError("--k must be >= 1")
        if hasattr(args, "scenario"):
            Scenario.parse(args.scenario)
        return args.func(args)
    except UsageError as exc:
        print(f"prepost: error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"prepost: configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"prepost: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
