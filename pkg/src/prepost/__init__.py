"""Monte Carlo laboratory for conditioning vs gain-score treatment-effect estimation
in two-level pre-test/post-test data."""

from .config import DgpConfig, Scenario, builtin_configuration, load_experiment, validate
from .dgp import Dataset, make_dataset
from .harness import McSummary, reproduce_table, run_mc, run_replication
from .lmm import FitResult, ModelSpec, fit, fit_ols, fit_random_intercept_ml

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DgpConfig",
    "FitResult",
    "McSummary",
    "ModelSpec",
    "Scenario",
    "builtin_configuration",
    "fit",
    "fit_ols",
    "fit_random_intercept_ml",
    "load_experiment",
    "make_dataset",
    "reproduce_table",
    "run_mc",
    "run_replication",
    "validate",
]
