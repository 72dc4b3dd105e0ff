"""OLS and random-intercept linear mixed models fitted by profiled maximum likelihood.

For a variance ratio ``psi = sigma2_u / sigma2_eps`` the cluster covariance is
``sigma2_eps * (I + psi*11')``, whose inverse has the closed form
``I - psi/(1 + n_j*psi) * 11'``. Splitting every cluster into its mean and
the within-cluster deviations gives, with ``c_j = n_j / (1 + n_j*psi)``,

    W + sum_j c_j m_j m_j'

as the GLS cross-product of the augmented design ``[X, y]`` (``W`` the pooled
within cross-product, ``m_j`` the cluster means). Clusters of equal size
share ``c_j``, so the between part is pre-summed per distinct size and each
likelihood evaluation costs O(#sizes * p^2 + p^3).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg

from .config import Scenario
from .dgp import Dataset

__all__ = [
    "Approach",
    "Estimator",
    "FitError",
    "FitResult",
    "ModelSpec",
    "SufficientStats",
    "build_design",
    "fit",
    "fit_ols",
    "fit_random_intercept_ml",
    "golden_section_max",
    "profile_loglik",
]

LOG_2PI = math.log(2.0 * math.pi)
PSI_MAX = 1e6
PSI_EPS = 1e-12
PRESCAN_POINTS = 20
MAX_ITER = 200
REL_TOL = 1e-10


class FitError(RuntimeError):
    """Design or numerical failure while fitting."""


class Approach(str, Enum):
    CONDITIONING = "conditioning"
    GAIN = "gain"


class Estimator(str, Enum):
    OLS = "ols"
    ML = "ml"


@dataclass(frozen=True, order=True)
class ModelSpec:
    approach: Approach = Approach.CONDITIONING
    include_cluster_mean: bool = False
    estimator: Estimator = Estimator.ML

    @property
    def label(self) -> str:
        tail = "+ybar" if self.include_cluster_mean else ""
        return f"{self.approach.value}-{self.estimator.value}{tail}"

    def __str__(self) -> str:
        return self.label

    @classmethod
    def parse(cls, text: "str | ModelSpec") -> "ModelSpec":
        """Parse labels such as ``conditioning-ml`` or ``gain-ols+ybar``."""
        if isinstance(text, ModelSpec):
            return text
        raw = text.strip().lower()
        with_mean = raw.endswith("+ybar")
        if with_mean:
            raw = raw[: -len("+ybar")]
        approach, _, estimator = raw.partition("-")
        try:
            return cls(Approach(approach), with_mean, Estimator(estimator or "ml"))
        except ValueError:
            raise ValueError(
                f"bad model spec {text!r}; expected e.g. 'conditioning-ml' or 'gain-ols+ybar'"
            ) from None


@dataclass
class FitResult:
    coefficients: dict[str, float]
    loglik: float
    converged: bool
    n_obs: int
    n_clusters: int
    sigma2_eps: float
    sigma2_u: float | None = None
    std_errors: dict[str, float] = field(default_factory=dict)
    psi: float | None = None
    at_bound: bool = False
    n_evals: int = 0
    notes: str = ""

    @property
    def tau_hat(self) -> float:
        return self.coefficients["tau_hat"]


# ---------------------------------------------------------------------------
# design

def build_design(dataset: Dataset, spec: ModelSpec):
    """Response, design matrix, column names and cluster index for ``spec``."""
    z = dataset.treatment.astype(float)
    columns = [np.ones(dataset.n_obs), z]
    names = ["intercept", "tau_hat"]
    if spec.approach is Approach.CONDITIONING:
        response = dataset.posttest
        columns.append(dataset.pretest)
        names.append("coef_Y1")
    else:
        response = dataset.gain
    if spec.include_cluster_mean:
        columns.append(dataset.pretest_cluster_mean[dataset.cluster_of])
        names.append("coef_Y1bar")
    X = np.column_stack(columns)
    if dataset.scenario is Scenario.CLUSTER:
        zc = np.bincount(dataset.cluster_of, weights=z) / np.bincount(dataset.cluster_of)
        if not np.array_equal(zc[dataset.cluster_of], z):
            raise FitError("cluster-level treatment varies within a cluster")
    return response, X, names, dataset.cluster_of


def _check_rank(X: np.ndarray, names: list[str]) -> None:
    if X.shape[0] < X.shape[1]:
        raise FitError("fewer observations than regressors")
    scale = np.linalg.norm(X, axis=0)
    if np.any(scale == 0):
        bad = names[int(np.flatnonzero(scale == 0)[0])]
        raise FitError(f"rank deficient design: column {bad!r} is identically zero")
    _, R, piv = scipy.linalg.qr(X / scale, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(X.shape) * np.finfo(float).eps * diag[0] * 1e3
    deficient = np.flatnonzero(diag <= tol)
    if deficient.size:
        bad = names[int(piv[deficient[0]])]
        raise FitError(f"rank deficient design: column {bad!r} is collinear with the others")


def _names(X: np.ndarray, names) -> list[str]:
    if names is None:
        return ["intercept", "tau_hat", "coef_Y1", "coef_Y1bar"][: X.shape[1]] if X.shape[1] <= 4 else [
            f"x{k}" for k in range(X.shape[1])
        ]
    return list(names)


# ---------------------------------------------------------------------------
# OLS

def fit_ols(response: np.ndarray, regressors: np.ndarray, names=None) -> FitResult:
    """Least squares via QR; Gaussian log-likelihood at the ML variance RSS/N."""
    X = np.asarray(regressors, dtype=float)
    y = np.asarray(response, dtype=float)
    names = _names(X, names)
    _check_rank(X, names)
    Q, R = np.linalg.qr(X)
    beta = scipy.linalg.solve_triangular(R, Q.T @ y)
    resid = y - X @ beta
    n = y.size
    rss = float(resid @ resid)
    sigma2 = rss / n
    loglik = -0.5 * n * (LOG_2PI + 1.0 + math.log(sigma2)) if sigma2 > 0 else math.inf
    rinv = scipy.linalg.solve_triangular(R, np.eye(R.shape[0]))
    dof = max(n - X.shape[1], 1)
    se = np.sqrt(np.sum(rinv**2, axis=1) * rss / dof)
    return FitResult(
        coefficients=dict(zip(names, map(float, beta))),
        std_errors=dict(zip(names, map(float, se))),
        loglik=loglik,
        converged=True,
        n_obs=n,
        n_clusters=1,
        sigma2_eps=sigma2,
    )


# ---------------------------------------------------------------------------
# random intercept ML

@dataclass
class SufficientStats:
    """Per-cluster summaries of the centred augmented design ``[X, y]``."""

    within: np.ndarray  # (p+1, p+1) pooled within-cluster cross-product
    sizes: np.ndarray  # distinct cluster sizes
    between: np.ndarray  # (n_sizes, p+1, p+1): sum over clusters of that size of n_j m_j m_j'
    counts: np.ndarray  # number of clusters per distinct size
    shift: np.ndarray  # column means removed before accumulation (0 for intercept)
    n_obs: int
    n_clusters: int
    p: int
    intercept: int = -1  # index of the constant column, -1 if none
    intercept_value: float = 1.0

    @classmethod
    def from_data(cls, response, regressors, cluster_of) -> "SufficientStats":
        X = np.asarray(regressors, dtype=float)
        y = np.asarray(response, dtype=float)
        cluster_of = np.asarray(cluster_of)
        _, cluster_of = np.unique(cluster_of, return_inverse=True)
        D = np.column_stack([X, y])
        const = np.all(X == X[:1], axis=0)
        # centring is only a reparametrisation when an intercept column is present
        if const.any():
            shift = np.append(np.where(const, 0.0, X.mean(axis=0)), y.mean())
            intercept = int(np.flatnonzero(const)[0])
        else:
            shift = np.zeros(D.shape[1])
            intercept = -1
        D = D - shift
        n_clusters = int(cluster_of.max()) + 1
        n_j = np.bincount(cluster_of, minlength=n_clusters)
        means = np.stack(
            [np.bincount(cluster_of, weights=D[:, k], minlength=n_clusters) for k in range(D.shape[1])],
            axis=1,
        ) / n_j[:, None]
        dev = D - means[cluster_of]
        within = dev.T @ dev
        sizes, size_idx, counts = np.unique(n_j, return_inverse=True, return_counts=True)
        between = np.zeros((sizes.size, D.shape[1], D.shape[1]))
        for s in range(sizes.size):
            m = means[size_idx == s]
            between[s] = sizes[s] * (m.T @ m)
        return cls(within, sizes, between, counts, shift, y.size, n_clusters, X.shape[1],
                   intercept, float(X[0, intercept]) if intercept >= 0 else 1.0)

    def cross_product(self, psi: float) -> np.ndarray:
        weights = 1.0 / (1.0 + self.sizes * psi)
        k = self.within.shape[0]
        return self.within + (weights @ self.between.reshape(weights.size, k * k)).reshape(k, k)

    def log_det_v(self, psi: float) -> float:
        # sum_j log(1 + n_j psi)
        return float(np.sum(self.counts * np.log1p(self.sizes * psi)))


def _chol(stats: SufficientStats, psi: float):
    """Cholesky factor of the augmented GLS cross-product, or None if not PD."""
    try:
        return np.linalg.cholesky(stats.cross_product(psi))
    except np.linalg.LinAlgError:
        return None


def _loglik_from_factor(L: np.ndarray, stats: SufficientStats, psi: float, reml: bool):
    p = stats.p
    rss = float(L[p, p]) ** 2
    n = stats.n_obs
    ld = stats.log_det_v(psi)
    if reml:
        m = n - p
        sigma2 = rss / m
        logdet_xx = 2.0 * float(np.sum(np.log(np.diag(L)[:p])))
        value = -0.5 * (m * (LOG_2PI + 1.0 + math.log(sigma2)) + ld + logdet_xx)
    else:
        sigma2 = rss / n
        value = -0.5 * (n * (LOG_2PI + 1.0 + math.log(sigma2)) + ld)
    return value, sigma2


def _exact_fit(stats: SufficientStats, psi: float):
    S = stats.cross_product(psi)
    p = stats.p
    try:
        beta = np.linalg.solve(S[:p, :p], S[:p, p])
    except np.linalg.LinAlgError:
        raise FitError("singular GLS normal equations") from None
    return beta


def profile_loglik(psi: float, stats: SufficientStats, reml: bool = False):
    """Profiled log-likelihood at ``psi``; returns ``(loglik, beta_hat, sigma2_eps_hat)``.

    The last diagonal entry of the Cholesky factor of the augmented
    cross-product ``[X, y]'V^-1[X, y]`` is the root of the GLS residual sum
    of squares. ``beta_hat`` is on the centred scale of ``stats``; use
    :func:`_uncentre` to map it back. An exact fit returns ``+inf``.
    """
    if psi < 0:
        raise ValueError("psi must be >= 0")
    p = stats.p
    L = _chol(stats, psi)
    if L is None or L[p, p] == 0.0:
        # either the design is singular or the response lies in its span
        beta = _exact_fit(stats, psi)
        return math.inf, beta, 0.0
    value, sigma2 = _loglik_from_factor(L, stats, psi, reml)
    beta = scipy.linalg.solve_triangular(L[:p, :p].T, L[p, :p], lower=False)
    return value, beta, sigma2


def _objective_value(psi: float, stats: SufficientStats, reml: bool) -> float:
    L = _chol(stats, psi)
    if L is None or L[stats.p, stats.p] == 0.0:
        return profile_loglik(psi, stats, reml)[0]
    return _loglik_from_factor(L, stats, psi, reml)[0]


def _uncentre(beta: np.ndarray, stats: SufficientStats) -> np.ndarray:
    beta = beta.copy()
    k = stats.intercept
    if k >= 0:
        beta[k] += (stats.shift[-1] - float(beta @ stats.shift[: stats.p])) / stats.intercept_value
    return beta


def golden_section_max(f, lo: float, hi: float, tol: float = REL_TOL, max_iter: int = MAX_ITER):
    """Maximise a unimodal ``f`` on ``[lo, hi]``; returns ``(x, f(x), iterations, converged)``.

    Stops once successive best values agree to ``tol`` relative and the
    bracket is narrower than ``sqrt(tol)``.
    """
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = f(x1), f(x2)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = f(x2)
        if abs(f1 - f2) <= tol * max(1.0, abs(f1)) and (b - a) <= math.sqrt(tol) * max(1.0, abs(a)):
            converged = True
            break
    x, fx = (x1, f1) if f1 >= f2 else (x2, f2)
    return x, fx, it, converged


def fit_random_intercept_ml(
    response, regressors, cluster_of, names=None, reml: bool = False
) -> FitResult:
    """Random-intercept model ``y = X b + u_cluster + eps`` by profiled (RE)ML.

    The variance ratio is searched on ``t = log(psi + 1e-12)`` over
    ``psi in [0, 1e6]``: a 20-point scan picks a bracket, golden-section
    refines it, and the boundary ``psi = 0`` is always compared explicitly.
    """
    X = np.asarray(regressors, dtype=float)
    names = _names(X, names)
    _check_rank(X, names)
    stats = SufficientStats.from_data(response, X, cluster_of)
    if stats.n_clusters < 2:
        raise FitError("random-intercept fit needs at least 2 clusters")

    evals = 0

    def objective(t: float) -> float:
        nonlocal evals
        evals += 1
        psi = max(math.exp(t) - PSI_EPS, 0.0)
        return _objective_value(psi, stats, reml)

    t_lo, t_hi = math.log(PSI_EPS), math.log(PSI_MAX + PSI_EPS)
    grid = np.linspace(t_lo, t_hi, PRESCAN_POINTS)
    values = np.array([objective(t) for t in grid])
    k = int(np.argmax(values))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, PRESCAN_POINTS - 1)]
    t_best, f_best, _, converged = golden_section_max(objective, lo, hi)
    if values[k] > f_best:
        t_best, f_best = grid[k], values[k]
    psi = max(math.exp(t_best) - PSI_EPS, 0.0)
    f_zero = profile_loglik(0.0, stats, reml)[0]
    if f_zero >= f_best:
        psi, f_best = 0.0, f_zero
        converged = True
    at_bound = psi == 0.0 or psi >= PSI_MAX * (1 - 1e-9)
    if math.isinf(f_best):
        converged = True  # exact fit: likelihood unbounded in the scanned direction

    loglik, beta_c, sigma2 = profile_loglik(psi, stats, reml)
    beta = _uncentre(beta_c, stats)

    S = stats.cross_product(psi)[: stats.p, : stats.p]
    cov = sigma2 * np.linalg.inv(S)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    # intercept SE refers to the centred parametrisation
    notes = []
    if np.all(stats.sizes == 1):
        notes.append("all clusters have size 1; variance split not identified")
    if at_bound:
        notes.append("variance ratio at search bound")
    return FitResult(
        coefficients=dict(zip(names, map(float, beta))),
        std_errors=dict(zip(names, map(float, se))),
        loglik=loglik,
        converged=bool(converged),
        n_obs=stats.n_obs,
        n_clusters=stats.n_clusters,
        sigma2_eps=sigma2,
        sigma2_u=psi * sigma2,
        psi=psi,
        at_bound=at_bound,
        n_evals=evals,
        notes="; ".join(notes),
    )


def fit(dataset: Dataset, spec: ModelSpec) -> FitResult:
    response, X, names, cluster_of = build_design(dataset, spec)
    if spec.estimator is Estimator.OLS:
        result = fit_ols(response, X, names)
        result.n_clusters = dataset.n_clusters
        return result
    return fit_random_intercept_ml(response, X, cluster_of, names)
