"""Closed-form reliabilities and expected OLS treatment coefficients.

The single-level bias formulas assume standardised ability and measurement
error (``Var(A) = Var(e) = 1``), so the pre-test reliability reduces to
``beta1^2 / (beta1^2 + lambda1^2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.special import expit, roots_hermite

from .config import DgpConfig

__all__ = [
    "BiasPrediction",
    "FormulaId",
    "QuadratureError",
    "TreatedMoments",
    "bias_conditioning_binary",
    "bias_conditioning_continuous",
    "bias_conditioning_general",
    "bias_conditioning_general_two_term",
    "bias_conditioning_reliability_form",
    "bias_gain_binary",
    "reliability_cluster_mean",
    "reliability_overall_multilevel",
    "reliability_pretest",
    "treated_ability_moments",
]

DEFAULT_NODES = 128
MAX_NODES = 2048


class QuadratureError(ArithmeticError):
    pass


class FormulaId(str, Enum):
    EQ5_CONTINUOUS = "Eq5Continuous"
    EQ8_GENERAL = "Eq8General"
    EQ10_BINARY = "Eq10Binary"
    EQ13_CONTINUOUS_COMMON_ERROR = "Eq13ContinuousCommonError"
    EQ14_BINARY_COMMON_ERROR = "Eq14BinaryCommonError"
    GAIN_BINARY_DERIVED = "GainBinaryDerived"


@dataclass(frozen=True)
class BiasPrediction:
    expected_coefficient: float
    bias: float
    formula_id: FormulaId

    @classmethod
    def from_coefficient(cls, tau: float, coefficient: float, formula: FormulaId) -> "BiasPrediction":
        return cls(coefficient, coefficient - tau, formula)


@dataclass(frozen=True)
class TreatedMoments:
    pi: float  # marginal probability of treatment
    mean_ability_treated: float  # E(A | Z = 1)


# ---------------------------------------------------------------------------
# reliability

def reliability_pretest(beta1: float, lambda1: float, var_a: float = 1.0, var_e: float = 1.0) -> float:
    true_var = beta1**2 * var_a
    total = true_var + lambda1**2 * var_e
    if total <= 0:
        raise ZeroDivisionError("pre-test has zero variance")
    return true_var / total


def reliability_overall_multilevel(
    config: DgpConfig, var_within: float, var_between: float
) -> float:
    """Var(T1)/Var(Y1) with within effect beta1 and between effect beta1 + psi1.

    ``var_within`` and ``var_between`` split the ability variance, either
    analytically or from :func:`prepost.dgp.variance_components`.
    """
    beta_w = config.beta1
    beta_b = config.beta1 + config.psi1
    true_var = beta_w**2 * var_within + beta_b**2 * var_between + config.var_u1
    total = true_var + config.lambda1**2 * config.var_e
    if total <= 0:
        raise ZeroDivisionError("pre-test has zero variance")
    return true_var / total


def reliability_cluster_mean(
    config: DgpConfig, n: float, var_between: float
) -> float:
    """Reliability of the cluster-mean pre-test for clusters of size ``n``."""
    if n < 1:
        raise ValueError("cluster size must be >= 1")
    beta_b = config.beta1 + config.psi1
    signal = beta_b**2 * var_between + config.var_u1
    total = signal + config.lambda1**2 * config.var_e / n
    if total <= 0:
        raise ZeroDivisionError("cluster mean has zero variance")
    return signal / total


# ---------------------------------------------------------------------------
# logistic-normal moments

@lru_cache(maxsize=8)
def _hermite(nodes: int):
    # scipy's recurrence stays finite well past numpy's hermgauss limit (~400)
    x, w = roots_hermite(nodes)
    return math.sqrt(2.0) * x, w / math.sqrt(math.pi)


def _moments(alpha: float, delta: float, nodes: int) -> tuple[float, float]:
    a, w = _hermite(nodes)
    p = expit(delta + alpha * a)
    return float(w @ p), float(w @ (a * p))


def treated_ability_moments(
    alpha: float, delta: float, nodes: int = DEFAULT_NODES, tol: float = 1e-10
) -> TreatedMoments:
    """P(Z=1) and E(A | Z=1) for standard normal A and logistic assignment.

    Gauss-Hermite starting at ``nodes`` points; the rule is doubled until two
    successive estimates agree to ``tol`` (steep logistics need more nodes).
    """
    if not (math.isfinite(alpha) and math.isfinite(delta)):
        raise ValueError("alpha and delta must be finite")
    pi, eaz = _moments(alpha, delta, nodes)
    while nodes < MAX_NODES:
        nodes *= 2
        pi2, eaz2 = _moments(alpha, delta, nodes)
        if abs(pi - pi2) <= tol and abs(eaz / pi - eaz2 / pi2) <= tol:
            return TreatedMoments(pi2, eaz2 / pi2)
        pi, eaz = pi2, eaz2
    raise QuadratureError(
        f"Gauss-Hermite did not settle by {MAX_NODES} nodes (alpha={alpha}, delta={delta})"
    )


# ---------------------------------------------------------------------------
# conditioning approach

def bias_conditioning_reliability_form(
    tau: float, alpha: float, beta2: float, rho: float, var_z: float
) -> BiasPrediction:
    """Continuous treatment, error on the pre-test only, written in terms of reliability."""
    denom = var_z - alpha**2 * rho
    if denom == 0:
        raise ZeroDivisionError("degenerate treatment variance")
    b = tau + alpha * beta2 * (1 - rho) / denom
    return BiasPrediction.from_coefficient(tau, b, FormulaId.EQ5_CONTINUOUS)


def bias_conditioning_general(
    tau: float, beta1: float, beta2: float, lambda1: float, lambda2: float,
    e_az: float, var_z: float,
) -> BiasPrediction:
    """Any treatment distribution, summarised by E(AZ) and Var(Z); single-fraction form."""
    var_y1 = beta1**2 + lambda1**2
    rho = beta1**2 / var_y1
    denom = (var_z - rho * e_az**2) * var_y1
    if denom == 0:
        raise ZeroDivisionError("degenerate treatment variance")
    b = tau + e_az * (beta2 * (1 - rho) * var_y1 - beta1 * lambda1 * lambda2) / denom
    return BiasPrediction.from_coefficient(tau, b, FormulaId.EQ8_GENERAL)


def bias_conditioning_general_two_term(
    tau: float, beta1: float, beta2: float, lambda1: float, lambda2: float,
    e_az: float, var_z: float,
) -> BiasPrediction:
    """Same quantity as :func:`bias_conditioning_general`, as attenuation term minus common-error term."""
    var_y1 = beta1**2 + lambda1**2
    rho = beta1**2 / var_y1
    core = var_z - rho * e_az**2
    if core == 0:
        raise ZeroDivisionError("degenerate treatment variance")
    b = (
        tau
        + beta2 * (1 - rho) * e_az / core
        - beta1 * lambda1 * lambda2 * e_az / (core * var_y1)
    )
    return BiasPrediction.from_coefficient(tau, b, FormulaId.EQ8_GENERAL)


def bias_conditioning_continuous(
    tau: float, alpha: float, beta1: float, beta2: float,
    lambda1: float, lambda2: float = 0.0, var_z: float = 1.0,
) -> BiasPrediction:
    """Treatment ``Z = alpha*A + noise``; ``lambda2 = 0`` gives the pre-test-error-only case."""
    denom = var_z * (beta1**2 + lambda1**2) - alpha**2 * beta1**2
    if denom == 0:
        raise ZeroDivisionError("degenerate treatment variance")
    b = tau + alpha * (beta2 * lambda1**2 - beta1 * lambda1 * lambda2) / denom
    formula = FormulaId.EQ5_CONTINUOUS if lambda2 == 0 else FormulaId.EQ13_CONTINUOUS_COMMON_ERROR
    return BiasPrediction.from_coefficient(tau, b, formula)


def bias_conditioning_binary(
    tau: float, alpha: float, delta: float, beta1: float, beta2: float,
    lambda1: float, lambda2: float = 0.0, moments: TreatedMoments | None = None,
) -> BiasPrediction:
    """Binary logistic treatment; ``lambda2 = 0`` gives the pre-test-error-only case."""
    m = moments or treated_ability_moments(alpha, delta)
    pi, ea = m.pi, m.mean_ability_treated
    denom = (1 - pi) * (beta1**2 + lambda1**2) - pi * ea**2 * beta1**2
    if denom == 0:
        raise ZeroDivisionError("degenerate treatment variance")
    b = tau + ea * (beta2 * lambda1**2 - beta1 * lambda1 * lambda2) / denom
    formula = FormulaId.EQ10_BINARY if lambda2 == 0 else FormulaId.EQ14_BINARY_COMMON_ERROR
    return BiasPrediction.from_coefficient(tau, b, formula)


def bias_conditioning_binary_reliability_form(
    tau: float, alpha: float, delta: float, beta2: float, rho: float,
    moments: TreatedMoments | None = None,
) -> BiasPrediction:
    m = moments or treated_ability_moments(alpha, delta)
    pi, ea = m.pi, m.mean_ability_treated
    denom = (1 - pi) - rho * pi * ea**2
    if denom == 0:
        raise ZeroDivisionError("degenerate treatment variance")
    b = tau + beta2 * (1 - rho) * ea / denom
    return BiasPrediction.from_coefficient(tau, b, FormulaId.EQ10_BINARY)


# ---------------------------------------------------------------------------
# gain score approach

def bias_gain_binary(
    tau: float, alpha: float, delta: float, beta1: float, beta2: float,
    moments: TreatedMoments | None = None,
) -> BiasPrediction:
    """OLS slope of the gain on a binary logistic treatment.

    ``Cov(G, Z)/Var(Z) = tau + (beta2 - beta1) * pi*E(A|Z=1) / (pi*(1 - pi))``.
    """
    m = moments or treated_ability_moments(alpha, delta)
    if m.pi >= 1.0:
        raise ZeroDivisionError("everyone treated")
    b = tau + (beta2 - beta1) * m.mean_ability_treated / (1 - m.pi)
    return BiasPrediction.from_coefficient(tau, b, FormulaId.GAIN_BINARY_DERIVED)
