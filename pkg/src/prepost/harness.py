"""Seeded Monte Carlo runs over configurations and model specifications."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import analytics
from .config import CONFIG_IDS, DgpConfig, Scenario, builtin_configuration
from .dgp import make_dataset
from .lmm import Approach, Estimator, FitError, ModelSpec, fit

__all__ = [
    "AnalyticComparison",
    "McSummary",
    "ReplicationOutcome",
    "TableResult",
    "compare_to_analytics",
    "derive_seed",
    "replication_log_csv",
    "reproduce_table",
    "run_mc",
    "run_replication",
    "table_specs",
]

MASK64 = (1 << 64) - 1


def _mix64(x: int) -> int:
    # splitmix64 finaliser: a bijection on 64-bit integers
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(master_seed: int, replication: int) -> int:
    """64-bit seed of replication ``r`` under ``master_seed``.

    Packs ``(master_seed, r)`` into one word (32 bits each) and applies the
    splitmix64 finaliser, so distinct pairs below ``2**32`` never collide.
    """
    if not (0 <= master_seed < 2**32 and 0 <= replication < 2**32):
        raise ValueError("master_seed and replication index must lie in [0, 2**32)")
    return _mix64((master_seed << 32) | replication)


@dataclass(frozen=True)
class ReplicationOutcome:
    replication: int
    seed: int
    spec: ModelSpec
    tau_hat: float
    converged: bool
    error: str = ""


@dataclass(frozen=True)
class McSummary:
    config_id: str
    scenario: Scenario
    cluster_size: int
    model_spec: ModelSpec
    k: int
    tau: float
    tau_hat_mean: float
    tau_hat_sd: float
    mc_se: float
    pct_err: float
    n_converged: int
    valid: bool = True

    @property
    def sort_key(self):
        order = CONFIG_IDS.index(self.config_id) if self.config_id in CONFIG_IDS else len(CONFIG_IDS)
        return (self.scenario.number, self.cluster_size, order, self.config_id, self.model_spec)


def run_replication(
    config: DgpConfig, specs, seed: int, replication: int = 0
) -> dict[ModelSpec, ReplicationOutcome]:
    """Generate one dataset and fit every spec on it; fit failures are recorded, not raised."""
    specs = [ModelSpec.parse(s) for s in specs]
    if not specs:
        raise ValueError("at least one model spec required")
    dataset = make_dataset(config, seed)
    out = {}
    for spec in specs:
        try:
            result = fit(dataset, spec)
            out[spec] = ReplicationOutcome(replication, seed, spec, result.tau_hat, result.converged)
        except (FitError, np.linalg.LinAlgError, ValueError) as exc:
            out[spec] = ReplicationOutcome(replication, seed, spec, math.nan, False, str(exc))
    return out


def _replicate_chunk(args):
    config, specs, master_seed, indices = args
    rows = []
    for r in indices:
        res = run_replication(config, specs, derive_seed(master_seed, r), r)
        rows.extend(res[s] for s in specs)
    return rows


def _run_outcomes(config, specs, k, master_seed, max_parallelism):
    indices = list(range(k))
    if max_parallelism <= 1 or k == 1:
        return _replicate_chunk((config, specs, master_seed, indices))
    n_chunks = min(k, 4 * max_parallelism)
    chunks = [indices[i::n_chunks] for i in range(n_chunks)]
    rows = []
    with ProcessPoolExecutor(max_workers=max_parallelism) as pool:
        for part in pool.map(_replicate_chunk, [(config, specs, master_seed, c) for c in chunks]):
            rows.extend(part)
    return rows


def _summarise(config: DgpConfig, spec: ModelSpec, outcomes: list[ReplicationOutcome], k: int) -> McSummary:
    ordered = sorted(outcomes, key=lambda o: o.replication)
    values = [o.tau_hat for o in ordered if o.converged and math.isfinite(o.tau_hat)]
    n_ok = len(values)
    if n_ok == 0:
        nan = math.nan
        return McSummary(config.label, config.scenario, config.cluster_size, spec, k,
                         config.tau, nan, nan, nan, nan, 0, valid=False)
    mean = math.fsum(values) / n_ok
    sd = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (n_ok - 1)) if n_ok > 1 else 0.0
    pct = (mean - config.tau) / config.tau * 100.0 if config.tau != 0 else math.nan
    return McSummary(
        config.label, config.scenario, config.cluster_size, spec, k, config.tau,
        mean, sd, sd / math.sqrt(n_ok), pct, n_ok,
    )


def run_mc(
    config: DgpConfig, specs, k: int, master_seed: int, max_parallelism: int = 1,
    return_outcomes: bool = False,
):
    """MC summaries per spec; identical for every ``max_parallelism``.

    Replication ``r`` uses :func:`derive_seed` ``(master_seed, r)`` and the
    reduction runs in replication order after all results are in.
    """
    if k < 1:
        raise ValueError("K must be >= 1")
    specs = [ModelSpec.parse(s) for s in specs]
    outcomes = _run_outcomes(config, specs, k, master_seed, max_parallelism)
    summaries = [_summarise(config, s, [o for o in outcomes if o.spec == s], k) for s in specs]
    if return_outcomes:
        return summaries, sorted(outcomes, key=lambda o: (o.replication, specs.index(o.spec)))
    return summaries


def replication_log_csv(outcomes: list[ReplicationOutcome]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["replication", "seed", "spec", "tau_hat", "converged", "error"])
    for o in outcomes:
        writer.writerow([o.replication, o.seed, o.spec.label, f"{o.tau_hat:.12g}", int(o.converged), o.error])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# tables

@dataclass
class TableResult:
    table_id: int
    cluster_size: int
    k: int
    master_seed: int
    specs: tuple[ModelSpec, ...]
    summaries: list[McSummary] = field(default_factory=list)

    def cell(self, config_id: str, spec) -> McSummary:
        spec = ModelSpec.parse(spec)
        for s in self.summaries:
            if s.config_id == config_id and s.model_spec == spec:
                return s
        raise KeyError((config_id, spec.label))


def table_specs(table_id: int) -> tuple[ModelSpec, ...]:
    if table_id == 3:
        labels = ("conditioning-ml", "gain-ml")
    elif table_id == 4:
        labels = ("conditioning-ml", "conditioning-ml+ybar", "gain-ml", "gain-ml+ybar")
    else:
        raise ValueError(f"unknown table {table_id}; expected 3 or 4")
    return tuple(ModelSpec.parse(x) for x in labels)


def reproduce_table(
    table_id: int, cluster_size: int = 100, k: int = 1000, master_seed: int = 20240101,
    max_parallelism: int = 1, config_ids=CONFIG_IDS,
) -> TableResult:
    """Table 3: individual treatment, two specs. Table 4: cluster treatment, four specs."""
    specs = table_specs(table_id)
    if table_id == 4 and cluster_size not in (100, 4):
        raise ValueError("table 4 is defined for cluster sizes 100 and 4")
    scenario = Scenario.INDIVIDUAL if table_id == 3 else Scenario.CLUSTER
    result = TableResult(table_id, cluster_size, k, master_seed, specs)
    for cid in config_ids:
        config = builtin_configuration(scenario, cid, cluster_size)
        result.summaries.extend(run_mc(config, specs, k, master_seed, max_parallelism))
    return result


# ---------------------------------------------------------------------------
# analytic cross-check

@dataclass(frozen=True)
class AnalyticComparison:
    prediction: analytics.BiasPrediction
    mc_mean: float
    mc_se: float
    discrepancy: float  # (mc_mean - expected) / mc_se
    single_level: bool  # only single-level comparisons are meant to be asserted

    @property
    def within_3se(self) -> bool:
        return abs(self.discrepancy) < 3.0


def compare_to_analytics(config: DgpConfig, summary: McSummary) -> AnalyticComparison:
    """Single-level prediction for the spec next to the MC mean, in MC-SE units.

    The prediction treats the data as one level; for multilevel configurations
    the report is descriptive.
    """
    spec = summary.model_spec
    if spec.include_cluster_mean:
        raise ValueError("no single-level formula for specs including the cluster mean")
    if spec.approach is Approach.CONDITIONING:
        pred = analytics.bias_conditioning_binary(
            config.tau, config.alpha, config.delta, config.beta1, config.beta2,
            config.lambda1, config.lambda2,
        )
    else:
        pred = analytics.bias_gain_binary(
            config.tau, config.alpha, config.delta, config.beta1, config.beta2,
        )
    if summary.mc_se > 0:
        disc = (summary.tau_hat_mean - pred.expected_coefficient) / summary.mc_se
    else:
        disc = 0.0 if summary.tau_hat_mean == pred.expected_coefficient else math.copysign(math.inf, summary.tau_hat_mean - pred.expected_coefficient)
    single = (
        config.n_clusters == 1
        and config.psi1 == 0 and config.psi2 == 0
        and config.var_u1 == 0 and config.var_u2 == 0
    )
    return AnalyticComparison(pred, summary.tau_hat_mean, summary.mc_se, disc, single)


def single_level_config(base: DgpConfig, n_total: int) -> DgpConfig:
    """One cluster, no contextual effects and no cluster errors."""
    return base.replace(
        n_clusters=1, cluster_size=n_total, psi1=0.0, psi2=0.0,
        var_u1=0.0, var_u2=0.0, cov_u12=0.0, scenario=Scenario.INDIVIDUAL,
    )
