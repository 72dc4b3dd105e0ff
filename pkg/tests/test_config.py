import math

import pytest

from prepost.analytics import reliability_pretest
from prepost.config import (
    CONFIG_IDS,
    ConfigError,
    DgpConfig,
    Scenario,
    builtin_configuration,
    dump_experiment,
    load_experiment,
    validate,
)


@pytest.mark.parametrize("scenario", [1, 2])
@pytest.mark.parametrize("config_id", CONFIG_IDS)
@pytest.mark.parametrize("n", [100, 4])
def test_builtins_validate(scenario, config_id, n):
    cfg = builtin_configuration(scenario, config_id, n)
    assert validate(cfg) == []
    assert cfg.n_total == 10_000
    assert cfg.label == config_id


def test_builtin_patterns():
    vii = builtin_configuration(1, "VII")
    assert (vii.beta2, vii.psi1, vii.psi2, vii.lambda1, vii.lambda2) == (24, 8, 4, 0, 0)
    viii = builtin_configuration("cluster", "configVIII", 4)
    assert viii.scenario is Scenario.CLUSTER
    assert viii.n_clusters == 2500
    assert (viii.lambda1, viii.lambda2) == (6, 6)
    assert builtin_configuration(1, "I").delta == math.log(0.2 / 0.8)


def test_builtin_rejects_bad_inputs():
    with pytest.raises(ConfigError, match="unknown configuration"):
        builtin_configuration(1, "IX")
    with pytest.raises(ConfigError, match="divide"):
        builtin_configuration(1, "I", 3)
    with pytest.raises(ValueError):
        Scenario.parse("3")


def test_validate_messages():
    assert "J must be positive (n_clusters)" in validate(DgpConfig(n_clusters=0))
    assert "lambda1 < 0" in validate(DgpConfig(lambda1=-1.0))
    assert any("positive semidefinite" in p for p in validate(DgpConfig(cov_u12=1.5)))
    assert any("not an integer" in p for p in validate(DgpConfig(cluster_size=10)))
    assert any("not finite" in p for p in validate(DgpConfig(tau=math.inf)))


def test_canonical_reliability():
    cfg = builtin_configuration(1, "II")
    rho = reliability_pretest(cfg.beta1, cfg.lambda1, cfg.var_ability, cfg.var_e)
    assert rho == pytest.approx(256 / 292, abs=1e-15)
    assert f"{rho:.2f}" == "0.88"


DOC = """
[defaults]
k = 20
seed = 5

[[experiment]]
base = "scenario1/II"
specs = ["conditioning-ml", "gain-ols+ybar"]

[[experiment]]
name = "null"
scenario = 2
config = "VII"
cluster_size = 4
[experiment.params]
tau = 0.0
"""


def test_load_experiment():
    plan = load_experiment(DOC)
    assert len(plan) == 2
    first, second = plan
    assert first.k == 20 and first.seed == 5
    assert first.config == builtin_configuration(1, "II")
    assert second.name == "null"
    assert second.config.tau == 0.0
    assert second.config.n_clusters == 2500
    assert second.specs == ("conditioning-ml", "gain-ml")


def test_round_trip():
    plan = load_experiment(DOC)
    assert load_experiment(dump_experiment(plan)) == plan


def test_load_from_path(tmp_path):
    path = tmp_path / "plan.toml"
    path.write_text(DOC, encoding="utf-8")
    assert load_experiment(path) == load_experiment(DOC)


@pytest.mark.parametrize(
    "doc, match",
    [
        ("", "no experiments"),
        ("[[experiment]]\nbase = 'scenario1/II'\nspecs = ['anova']", r"experiment\[0\]\.specs"),
        ("[[experiment]]\nbase = 'nope'", "experiment\\[0\\]"),
        ("[[experiment]]\n[experiment.params]\nlambda1 = -2.0", r"experiment\[0\]\.params: lambda1 < 0"),
        ("[[experiment]]\n[experiment.params]\nbogus = 1", r"experiment\[0\]"),
        ("[[experiment]]\nk = 0", r"experiment\[0\]\.k"),
        ("[[experiment", "parse error"),
    ],
)
def test_load_errors_name_the_field(doc, match):
    with pytest.raises(ConfigError, match=match):
        load_experiment(doc)


def test_config_is_immutable():
    cfg = builtin_configuration(1, "I")
    with pytest.raises(Exception):
        cfg.tau = 3.0
    assert cfg.replace(tau=3.0).tau == 3.0
    assert DgpConfig.from_dict(cfg.to_dict()) == cfg
