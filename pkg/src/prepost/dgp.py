"""Simulated two-level pre-test/post-test populations."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .config import ConfigError, DgpConfig, Scenario, validate

__all__ = [
    "Dataset",
    "allocate_clusters",
    "assign_treatment_cluster",
    "assign_treatment_individual",
    "cluster_means",
    "dataset_to_csv",
    "gen_abilities",
    "gen_scores",
    "make_dataset",
    "variance_components",
]

BIT_GENERATOR = "PCG64"


@dataclass(frozen=True, eq=False)
class Dataset:
    """One simulated population. Per-individual arrays have length N, per-cluster J."""

    scenario: Scenario
    cluster_of: np.ndarray
    ability: np.ndarray
    ability_cluster_mean: np.ndarray
    ability_within: np.ndarray
    treatment: np.ndarray  # per individual; cluster value broadcast in Scenario.CLUSTER
    pretest: np.ndarray
    posttest: np.ndarray
    gain: np.ndarray
    pretest_cluster_mean: np.ndarray
    true_score_pre: np.ndarray
    seed_record: dict

    @property
    def n_obs(self) -> int:
        return self.ability.size

    @property
    def n_clusters(self) -> int:
        return self.ability_cluster_mean.size

    def identical_to(self, other: "Dataset") -> bool:
        names = (
            "cluster_of", "ability", "ability_cluster_mean", "ability_within",
            "treatment", "pretest", "posttest", "gain", "pretest_cluster_mean",
            "true_score_pre",
        )
        return self.scenario == other.scenario and all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in names
        )


def _rng(stream) -> np.random.Generator:
    if isinstance(stream, np.random.Generator):
        return stream
    return np.random.default_rng(stream)


def cluster_means(values: np.ndarray, cluster_of: np.ndarray, n_clusters: int) -> np.ndarray:
    counts = np.bincount(cluster_of, minlength=n_clusters)
    # center first so the per-cluster sums stay small relative to the mean
    shift = float(np.mean(values))
    sums = np.bincount(cluster_of, weights=values - shift, minlength=n_clusters)
    return sums / counts + shift


def gen_abilities(stream, count: int, variance: float = 1.0) -> np.ndarray:
    if count <= 0 or variance <= 0:
        raise ValueError("count and variance must be positive")
    return _rng(stream).normal(0.0, np.sqrt(variance), size=count)


def allocate_clusters(
    stream,
    abilities: np.ndarray,
    n_clusters: int,
    cluster_size: int,
    sorted_fraction: float = 0.75,
) -> np.ndarray:
    """Cluster index (0-based) for every individual.

    A uniform random pool of ``J*n*(1-f)`` individuals is drawn first; the rest
    is ordered by ability (stable, ties by original index) and cut into
    consecutive blocks of ``n*f``, block ``j`` going to cluster ``j``. The random
    pool is then shuffled into the remaining ``n*(1-f)`` slots of each cluster.
    """
    abilities = np.asarray(abilities)
    total = abilities.size
    if n_clusters * cluster_size != total:
        raise ValueError(f"J*n = {n_clusters * cluster_size} but {total} abilities given")
    if not 0.0 <= sorted_fraction <= 1.0:
        raise ValueError("sorted_fraction must lie in [0, 1]")
    block = cluster_size * sorted_fraction
    if abs(block - round(block)) > 1e-9:
        raise ValueError(f"n*sorted_fraction = {block:g} must be an integer")
    block = int(round(block))
    n_random = cluster_size - block
    rng = _rng(stream)

    random_pool = rng.choice(total, size=n_random * n_clusters, replace=False)
    in_random = np.zeros(total, dtype=bool)
    in_random[random_pool] = True
    sorted_pool = np.flatnonzero(~in_random)
    sorted_pool = sorted_pool[np.argsort(abilities[sorted_pool], kind="stable")]

    cluster_of = np.empty(total, dtype=np.int64)
    cluster_of[sorted_pool] = np.repeat(np.arange(n_clusters), block)
    # random_pool is already a uniformly random ordering
    cluster_of[random_pool] = np.repeat(np.arange(n_clusters), n_random)
    return cluster_of


def _assign(stream, drivers: np.ndarray, alpha: float, delta: float) -> np.ndarray:
    prob = expit(delta + alpha * np.asarray(drivers, dtype=float))
    return (_rng(stream).random(prob.size) < prob).astype(np.int8)


def assign_treatment_individual(stream, abilities, alpha: float, delta: float) -> np.ndarray:
    """Z_ij ~ Bernoulli(logistic(delta + alpha*A_ij)), independently."""
    return _assign(stream, abilities, alpha, delta)


def assign_treatment_cluster(stream, ability_cluster_means, alpha: float, delta: float) -> np.ndarray:
    """One draw per cluster with the cluster-mean ability as driver."""
    return _assign(stream, ability_cluster_means, alpha, delta)


def _sigma_root(config: DgpConfig) -> np.ndarray:
    a, b, c = config.var_u1, config.cov_u12, config.var_u2
    if a < 0 or c < 0 or b * b > a * c * (1 + 1e-12):
        raise ConfigError("Σ not positive semidefinite")
    l11 = np.sqrt(a)
    l21 = b / l11 if l11 > 0 else 0.0
    l22 = np.sqrt(max(c - l21 * l21, 0.0))
    return np.array([[l11, 0.0], [l21, l22]])


def gen_scores(
    stream,
    config: DgpConfig,
    cluster_of: np.ndarray,
    ability: np.ndarray,
    ability_cluster_mean: np.ndarray,
    treatment: np.ndarray,
):
    """Pre-test, post-test and latent pre-test true score.

    ``treatment`` is per individual, or per cluster in the cluster scenario.
    The same realised ``e`` enters both scores.
    """
    rng = _rng(stream)
    n_clusters = ability_cluster_mean.size
    total = ability.size
    root = _sigma_root(config)
    u = rng.standard_normal((n_clusters, 2)) @ root.T
    e = rng.normal(0.0, np.sqrt(config.var_e), size=total)
    v = rng.normal(0.0, np.sqrt(config.var_v), size=total)

    treatment = np.asarray(treatment)
    if treatment.size == n_clusters and total != n_clusters:
        z = treatment[cluster_of]
    elif treatment.size == total:
        z = treatment
    else:
        raise ValueError("treatment length matches neither individuals nor clusters")

    abar = ability_cluster_mean[cluster_of]
    u1 = u[cluster_of, 0]
    u2 = u[cluster_of, 1]
    true_pre = config.mu1 + config.beta1 * ability + config.psi1 * abar + u1
    pretest = true_pre + config.lambda1 * e
    posttest = (
        config.mu2 + config.beta2 * ability + config.psi2 * abar + config.tau * z
        + u2 + config.lambda2 * e + v
    )
    return pretest, posttest, true_pre


def make_dataset(config: DgpConfig, seed: int) -> Dataset:
    """Steps 1-4 of the generating process; a pure function of ``(config, seed)``."""
    problems = validate(config)
    if problems:
        raise ConfigError("; ".join(problems))
    s_ability, s_alloc, s_treat, s_scores = np.random.SeedSequence(seed).spawn(4)

    ability = gen_abilities(np.random.default_rng(s_ability), config.n_total, config.var_ability)
    cluster_of = allocate_clusters(
        np.random.default_rng(s_alloc), ability, config.n_clusters,
        config.cluster_size, config.sorted_fraction,
    )
    abar = cluster_means(ability, cluster_of, config.n_clusters)
    rng_treat = np.random.default_rng(s_treat)
    if config.scenario is Scenario.INDIVIDUAL:
        treatment = assign_treatment_individual(rng_treat, ability, config.alpha, config.delta)
    else:
        z_cluster = assign_treatment_cluster(rng_treat, abar, config.alpha, config.delta)
        treatment = z_cluster[cluster_of]
    pretest, posttest, true_pre = gen_scores(
        np.random.default_rng(s_scores), config, cluster_of, ability, abar, treatment
    )
    arrays = dict(
        cluster_of=cluster_of,
        ability=ability,
        ability_cluster_mean=abar,
        ability_within=ability - abar[cluster_of],
        treatment=treatment,
        pretest=pretest,
        posttest=posttest,
        gain=posttest - pretest,
        pretest_cluster_mean=cluster_means(pretest, cluster_of, config.n_clusters),
        true_score_pre=true_pre,
    )
    for arr in arrays.values():
        arr.setflags(write=False)
    return Dataset(
        scenario=config.scenario,
        seed_record={"seed": int(seed), "bit_generator": BIT_GENERATOR},
        **arrays,
    )


def variance_components(dataset: Dataset) -> tuple[float, float]:
    """Within and between ability variances (population form, sum to Var(A))."""
    grand = float(np.mean(dataset.ability))
    within = float(np.mean(dataset.ability_within**2))
    between = float(np.mean((dataset.ability_cluster_mean[dataset.cluster_of] - grand) ** 2))
    return within, between


def dataset_to_csv(dataset: Dataset) -> str:
    """One row per individual with 12 significant digits."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["cluster", "A", "Z", "Y1", "Y2", "G"])
    for row in zip(
        dataset.cluster_of, dataset.ability, dataset.treatment,
        dataset.pretest, dataset.posttest, dataset.gain,
    ):
        c, a, z, y1, y2, g = row
        writer.writerow([int(c), f"{a:.12g}", int(z), f"{y1:.12g}", f"{y2:.12g}", f"{g:.12g}"])
    return buf.getvalue()


def write_dataset(dataset: Dataset, path: "str | Path") -> None:
    Path(path).write_text(dataset_to_csv(dataset), encoding="utf-8")
