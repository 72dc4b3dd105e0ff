"""Experiment configurations: structural parameters, builtin registry, TOML plans."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any

import tomli
import tomli_w

__all__ = [
    "CONFIG_IDS",
    "ConfigError",
    "DgpConfig",
    "Experiment",
    "ExperimentPlan",
    "Scenario",
    "builtin_configuration",
    "dump_experiment",
    "load_experiment",
    "validate",
]

TOTAL_POPULATION = 10_000
CONFIG_IDS = ("I", "II", "III", "IV", "V", "VI", "VII", "VIII")

# (beta2, psi1, psi2, lambda1, lambda2) per configuration
_PATTERNS: dict[str, tuple[float, float, float, float, float]] = {
    "I": (16.0, 0.0, 0.0, 0.0, 0.0),
    "II": (16.0, 0.0, 0.0, 6.0, 0.0),
    "III": (24.0, 0.0, 0.0, 0.0, 0.0),
    "IV": (16.0, 0.0, 8.0, 0.0, 0.0),
    "V": (24.0, 0.0, 0.0, 6.0, 0.0),
    "VI": (16.0, 0.0, 8.0, 6.0, 0.0),
    "VII": (24.0, 8.0, 4.0, 0.0, 0.0),
    "VIII": (16.0, 0.0, 0.0, 6.0, 6.0),
}

_DESCRIPTIONS = {
    "I": "No meas. error; common trend",
    "II": "Meas. error on Y1; common trend",
    "III": "No meas. error; common trend lev 2",
    "IV": "No meas. error; common trend lev 1",
    "V": "Meas. error on Y1; common trend lev 2",
    "VI": "Meas. error on Y1; common trend lev 1",
    "VII": "No meas. error; no common trend",
    "VIII": "Same meas. error on Y1, Y2; common trend",
}


class ConfigError(ValueError):
    """Raised for malformed configurations or experiment documents."""


class Scenario(str, Enum):
    INDIVIDUAL = "individual"
    CLUSTER = "cluster"

    @classmethod
    def parse(cls, value: "str | int | Scenario") -> "Scenario":
        if isinstance(value, Scenario):
            return value
        key = str(value).strip().lower()
        aliases = {
            "1": cls.INDIVIDUAL,
            "scenario1": cls.INDIVIDUAL,
            "individual": cls.INDIVIDUAL,
            "individualtreatment": cls.INDIVIDUAL,
            "2": cls.CLUSTER,
            "scenario2": cls.CLUSTER,
            "cluster": cls.CLUSTER,
            "clustertreatment": cls.CLUSTER,
        }
        try:
            return aliases[key.replace("_", "").replace("-", "")]
        except KeyError:
            raise ConfigError(f"unknown scenario {value!r}") from None

    @property
    def number(self) -> int:
        return 1 if self is Scenario.INDIVIDUAL else 2


@dataclass(frozen=True)
class DgpConfig:
    """Structural parameters of the two-level pre-test/post-test generating model.

    Scores follow

        Y1 = mu1 + beta1*A + psi1*Abar + u1 + lambda1*e
        Y2 = mu2 + beta2*A + psi2*Abar + tau*Z + u2 + lambda2*e + v

    where ``Z`` is individual (``Scenario.INDIVIDUAL``) or cluster level
    (``Scenario.CLUSTER``) and assignment is logistic in ``delta + alpha*A``
    (or ``Abar``).
    """

    scenario: Scenario = Scenario.INDIVIDUAL
    n_clusters: int = 100
    cluster_size: int = 100
    mu1: float = 60.0
    mu2: float = 60.0
    tau: float = 2.0
    beta1: float = 16.0
    beta2: float = 16.0
    psi1: float = 0.0
    psi2: float = 0.0
    lambda1: float = 0.0
    lambda2: float = 0.0
    alpha: float = 1.0
    delta: float = math.log(0.2 / 0.8)
    var_ability: float = 1.0
    var_e: float = 1.0
    var_v: float = 1.0
    var_u1: float = 1.0
    var_u2: float = 1.0
    cov_u12: float = 0.8
    sorted_fraction: float = 0.75
    label: str = ""

    @property
    def n_total(self) -> int:
        return self.n_clusters * self.cluster_size

    def replace(self, **changes: Any) -> "DgpConfig":
        if "scenario" in changes:
            changes["scenario"] = Scenario.parse(changes["scenario"])
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["scenario"] = self.scenario.value
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DgpConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown parameter(s): {', '.join(unknown)}")
        kwargs = dict(data)
        if "scenario" in kwargs:
            kwargs["scenario"] = Scenario.parse(kwargs["scenario"])
        return cls(**kwargs)


def validate(config: DgpConfig) -> list[str]:
    """Return the list of invariant violations; empty means the config is usable."""
    problems: list[str] = []
    if not isinstance(config.n_clusters, int) or config.n_clusters <= 0:
        problems.append("J must be positive (n_clusters)")
    if not isinstance(config.cluster_size, int) or config.cluster_size <= 0:
        problems.append("n must be positive (cluster_size)")
    for name in ("lambda1", "lambda2"):
        if getattr(config, name) < 0:
            problems.append(f"{name} < 0")
    if config.var_ability <= 0:
        problems.append("var_ability must be > 0")
    for name in ("var_e", "var_v", "var_u1", "var_u2"):
        if getattr(config, name) < 0:
            problems.append(f"{name} must be >= 0")
    if config.cov_u12**2 > config.var_u1 * config.var_u2 * (1 + 1e-12):
        problems.append("Σ not positive semidefinite (cov_u12² > var_u1·var_u2)")
    if not 0.0 <= config.sorted_fraction <= 1.0:
        problems.append("sorted_fraction must lie in [0, 1]")
    elif isinstance(config.cluster_size, int) and config.cluster_size > 0:
        block = config.cluster_size * config.sorted_fraction
        if abs(block - round(block)) > 1e-9:
            problems.append(
                f"cluster_size*sorted_fraction = {block:g} is not an integer"
            )
    numeric = [f.name for f in fields(config) if f.name not in ("scenario", "label")]
    for name in numeric:
        value = getattr(config, name)
        if isinstance(value, float) and not math.isfinite(value):
            problems.append(f"{name} is not finite")
    return problems


def _check(config: DgpConfig, where: str = "") -> DgpConfig:
    problems = validate(config)
    if problems:
        prefix = f"{where}: " if where else ""
        raise ConfigError(prefix + "; ".join(problems))
    return config


def builtin_configuration(
    scenario: "Scenario | str | int", config_id: str, cluster_size: int = 100
) -> DgpConfig:
    """One of the eight canonical configurations with N = 10,000 individuals."""
    scenario = Scenario.parse(scenario)
    key = str(config_id).strip().upper()
    if key.startswith("CONFIG"):
        key = key[len("CONFIG"):]
    if key not in _PATTERNS:
        raise ConfigError(
            f"unknown configuration {config_id!r}; expected one of {', '.join(CONFIG_IDS)}"
        )
    if cluster_size <= 0 or TOTAL_POPULATION % cluster_size:
        raise ConfigError(
            f"cluster_size={cluster_size} does not divide N={TOTAL_POPULATION}; "
            "builtin configurations keep N fixed, so n must be a divisor of 10000"
        )
    beta2, psi1, psi2, lambda1, lambda2 = _PATTERNS[key]
    config = DgpConfig(
        scenario=scenario,
        n_clusters=TOTAL_POPULATION // cluster_size,
        cluster_size=cluster_size,
        beta2=beta2,
        psi1=psi1,
        psi2=psi2,
        lambda1=lambda1,
        lambda2=lambda2,
        label=key,
    )
    return _check(config, f"builtin {key}")


def describe(config_id: str) -> str:
    return _DESCRIPTIONS[config_id]


# ---------------------------------------------------------------------------
# experiment plans

@dataclass(frozen=True)
class Experiment:
    name: str
    config: DgpConfig
    k: int
    seed: int
    specs: tuple[str, ...]


@dataclass(frozen=True)
class ExperimentPlan:
    experiments: tuple[Experiment, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.experiments)

    def __iter__(self):
        return iter(self.experiments)


DEFAULT_K = 1000
DEFAULT_SEED = 20240101
DEFAULT_SPECS = ("conditioning-ml", "gain-ml")


def _parse_base(base: str, cluster_size: int) -> DgpConfig:
    # "scenario1/configII" or "scenario2/VII"
    try:
        scen, cid = base.split("/", 1)
    except ValueError:
        raise ConfigError(f"base {base!r} must look like 'scenario1/II'") from None
    return builtin_configuration(scen, cid, cluster_size)


def _resolve(entry: dict[str, Any], defaults: dict[str, Any], index: int) -> Experiment:
    where = f"experiment[{index}]"
    merged = {**defaults, **entry}
    params = dict(defaults.get("params", {}))
    params.update(entry.get("params", {}))
    cluster_size = int(merged.get("cluster_size", params.get("cluster_size", 100)))
    try:
        if "base" in merged:
            config = _parse_base(str(merged["base"]), cluster_size)
        elif "config" in merged:
            config = builtin_configuration(
                merged.get("scenario", 1), merged["config"], cluster_size
            )
        else:
            config = DgpConfig(cluster_size=cluster_size)
            if "scenario" in merged:
                config = config.replace(scenario=merged["scenario"])
        if params:
            config = config.replace(**params)
    except (ConfigError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    problems = validate(config)
    if problems:
        raise ConfigError(f"{where}.params: " + "; ".join(problems))
    k = int(merged.get("k", DEFAULT_K))
    if k < 1:
        raise ConfigError(f"{where}.k: replication count must be >= 1")
    specs = tuple(merged.get("specs", DEFAULT_SPECS))
    if not specs:
        raise ConfigError(f"{where}.specs: at least one model spec required")
    name = str(merged.get("name", config.label or f"experiment{index}"))
    return Experiment(name, config, k, int(merged.get("seed", DEFAULT_SEED)), specs)


def load_experiment(source: "str | Path | dict[str, Any]") -> ExperimentPlan:
    """Parse a TOML experiment document (text, path, or parsed mapping).

    Recognised layout::

        [defaults]            # optional, inherited by every experiment
        k = 1000
        seed = 20240101

        [[experiment]]
        base = "scenario1/II" # or: scenario = 1, config = "II"
        cluster_size = 100
        specs = ["conditioning-ml", "gain-ml"]
        [experiment.params]   # any DgpConfig field overrides
        tau = 0.0
    """
    if isinstance(source, Path):
        source = source.read_text(encoding="utf-8")
    if isinstance(source, str):
        try:
            doc = tomli.loads(source)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"parse error: {exc}") from None
    else:
        doc = source
    entries = doc.get("experiment", [])
    if isinstance(entries, dict):
        entries = [entries]
    if not entries:
        raise ConfigError("no experiments defined")
    defaults = doc.get("defaults", {})
    from .lmm import ModelSpec  # local import keeps config free of numpy at import

    experiments = []
    for i, entry in enumerate(entries):
        exp = _resolve(entry, defaults, i)
        for label in exp.specs:
            try:
                ModelSpec.parse(label)
            except ValueError as exc:
                raise ConfigError(f"experiment[{i}].specs: {exc}") from None
        experiments.append(exp)
    return ExperimentPlan(tuple(experiments))


def dump_experiment(plan: ExperimentPlan) -> str:
    """Serialize a resolved plan; ``load_experiment(dump_experiment(p)) == p``."""
    entries = []
    for exp in plan:
        entries.append(
            {
                "name": exp.name,
                "k": exp.k,
                "seed": exp.seed,
                "specs": list(exp.specs),
                "params": exp.config.to_dict(),
            }
        )
    return tomli_w.dumps({"experiment": entries})
