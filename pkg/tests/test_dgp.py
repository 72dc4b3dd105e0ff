import numpy as np
import pytest

from prepost.analytics import treated_ability_moments
from prepost.config import ConfigError, DgpConfig, Scenario, builtin_configuration
from prepost.dgp import (
    allocate_clusters,
    assign_treatment_individual,
    cluster_means,
    dataset_to_csv,
    make_dataset,
    variance_components,
)


@pytest.fixture(scope="module")
def ds2():
    return make_dataset(builtin_configuration(2, "VI", 100), 42)


def test_deterministic():
    cfg = builtin_configuration(1, "V", 100)
    assert make_dataset(cfg, 3).identical_to(make_dataset(cfg, 3))
    assert not make_dataset(cfg, 3).identical_to(make_dataset(cfg, 4))


def test_read_only(ds2):
    with pytest.raises(ValueError):
        ds2.pretest[0] = 1.0


def test_dataset_invariants(ds2):
    assert np.array_equal(ds2.gain, ds2.posttest - ds2.pretest)
    assert np.all(np.bincount(ds2.cluster_of) == 100)
    manual = np.array([ds2.pretest[ds2.cluster_of == j].mean() for j in range(ds2.n_clusters)])
    np.testing.assert_allclose(ds2.pretest_cluster_mean, manual, rtol=0, atol=1e-10 * 100)
    np.testing.assert_allclose(
        ds2.ability_within + ds2.ability_cluster_mean[ds2.cluster_of], ds2.ability, rtol=0, atol=1e-12
    )
    for j in range(ds2.n_clusters):
        assert np.unique(ds2.treatment[ds2.cluster_of == j]).size == 1


def test_small_clusters():
    d = make_dataset(builtin_configuration(2, "I", 4), 1)
    assert d.n_clusters == 2500
    assert np.all(np.bincount(d.cluster_of) == 4)
    z = d.treatment.reshape(-1)
    assert all(np.unique(z[d.cluster_of == j]).size == 1 for j in range(0, 2500, 97))


def test_allocation_blocks():
    # 3 clusters of 4, f = 0.75: three sorted members plus one random member each
    a = np.arange(12, dtype=float)[::-1]
    c = allocate_clusters(np.random.default_rng(0), a, 3, 4, 0.75)
    assert np.all(np.bincount(c) == 4)
    sorted_members = []
    for j in range(3):
        members = np.sort(a[c == j])
        sorted_members.append(members)
    # cluster means increase with the cluster index because sorted blocks ascend
    means = [m.mean() for m in sorted_members]
    assert means[0] < means[2]


def test_allocation_full_sort_and_random():
    a = np.random.default_rng(1).normal(size=100)
    c = allocate_clusters(np.random.default_rng(2), a, 10, 10, 1.0)
    order = np.argsort(a, kind="stable")
    assert np.array_equal(c[order], np.repeat(np.arange(10), 10))
    c0 = allocate_clusters(np.random.default_rng(2), a, 10, 10, 0.0)
    assert np.all(np.bincount(c0) == 10)


def test_allocation_rejects_mismatch():
    with pytest.raises(ValueError):
        allocate_clusters(0, np.zeros(10), 3, 4)
    with pytest.raises(ValueError):
        allocate_clusters(0, np.zeros(10), 1, 10, 0.33)


def test_pretest_grand_mean():
    cfg = builtin_configuration(1, "I", 100)
    means = [make_dataset(cfg, s).pretest.mean() for s in range(1, 101)]
    assert abs(np.mean(means) - 60.0) < 0.1


def test_treatment_share_matches_quadrature():
    a = np.random.default_rng(5).standard_normal(1_000_000)
    z = assign_treatment_individual(np.random.default_rng(6), a, 1.0, np.log(0.25))
    m = treated_ability_moments(1.0, np.log(0.25))
    assert abs(z.mean() - m.pi) < 0.005
    assert abs(a[z == 1].mean() - m.mean_ability_treated) < 0.01


def test_steep_assignment_is_a_threshold():
    a = np.random.default_rng(7).standard_normal(100_000)
    z = assign_treatment_individual(np.random.default_rng(8), a, 100.0, np.log(0.25))
    threshold = -np.log(0.25) / 100.0
    far = np.abs(a - threshold) > 0.1
    assert np.array_equal(z[far], (a[far] > threshold).astype(np.int8))


def test_null_effect_flips_nothing():
    cfg = builtin_configuration(1, "II", 100)
    a, b = make_dataset(cfg, 9), make_dataset(cfg.replace(tau=0.0), 9)
    assert np.array_equal(a.pretest, b.pretest)
    np.testing.assert_allclose(a.posttest - b.posttest, 2.0 * a.treatment, atol=1e-12)


def test_common_error_is_shared_exactly():
    cfg = DgpConfig(
        n_clusters=20, cluster_size=8, beta1=0.0, beta2=0.0, psi1=0.0, psi2=0.0, tau=0.0,
        lambda1=3.0, lambda2=3.0, var_v=0.0, var_u1=0.0, var_u2=0.0, cov_u12=0.0,
    )
    d = make_dataset(cfg, 1)
    assert np.array_equal(d.posttest - cfg.mu2, d.pretest - cfg.mu1)
    d = make_dataset(cfg.replace(mu1=50.0, mu2=70.0), 1)
    np.testing.assert_allclose(d.posttest - 70.0, d.pretest - 50.0, atol=1e-12)


def test_single_cluster_pretest_variance():
    cfg = DgpConfig(n_clusters=1, cluster_size=400_000, var_u1=0.0, var_u2=0.0, cov_u12=0.0, lambda1=6.0)
    d = make_dataset(cfg, 2)
    assert np.var(d.pretest) == pytest.approx(16**2 + 6**2, rel=0.01)


def test_variance_decomposition(ds2):
    w, b = variance_components(ds2)
    assert w + b == pytest.approx(np.var(ds2.ability), abs=1e-10)


def test_cluster_means_precision():
    vals = 1e6 + np.arange(12, dtype=float)
    out = cluster_means(vals, np.repeat(np.arange(3), 4), 3)
    np.testing.assert_allclose(out, 1e6 + np.array([1.5, 5.5, 9.5]), rtol=0, atol=1e-9)


def test_invalid_config_refused():
    with pytest.raises(ConfigError):
        make_dataset(DgpConfig(n_clusters=0), 1)


def test_csv_dump(ds2):
    text = dataset_to_csv(ds2)
    lines = text.splitlines()
    assert lines[0] == "cluster,A,Z,Y1,Y2,G"
    assert len(lines) == ds2.n_obs + 1
    first = lines[1].split(",")
    assert float(first[3]) == pytest.approx(ds2.pretest[0], rel=1e-11)
    assert ds2.scenario is Scenario.CLUSTER
    assert ds2.seed_record["seed"] == 42
