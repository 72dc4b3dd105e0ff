import pytest

from prepost.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_help_exits_zero(capsys):
    code, out, _ = run(capsys, "--help")
    assert code == 0
    assert "reproduce-table" in out
    code, out, _ = run(capsys, "simulate", "--help")
    assert code == 0
    assert "default: 1000" in out


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["simulate", "--config", "IX"],
        ["simulate", "--k", "0"],
        ["simulate", "--scenario", "7"],
        ["reproduce-table", "--table", "5"],
        ["simulate", "--n", "3", "--k", "1"],
    ],
)
def test_usage_errors_exit_one(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 1
    assert "error" in err


def test_bias_canonical(capsys):
    code, out, _ = run(capsys, "bias", "--formula", "eq10")
    assert code == 0
    assert "expected_coefficient: 3.91018620719" in out
    code, out, _ = run(capsys, "bias", "--formula", "eq5", "--var-z", "1")
    assert "expected_coefficient: 18" in out
    code, out, _ = run(capsys, "bias", "--formula", "gain", "--beta2", "24")
    assert "formula: GainBinaryDerived" in out


def test_reliability(capsys):
    code, out, _ = run(capsys, "reliability")
    assert code == 0
    assert "0.876712328767" in out
    code, out, _ = run(capsys, "reliability", "--cluster-mean", "--lambda1", "0")
    assert "reliability (cluster_mean): 1" in out


def test_dump_dataset(tmp_path, capsys):
    code, out, _ = run(capsys, "dump-dataset", "--config", "II", "--seed", "3", "--out", str(tmp_path))
    assert code == 0
    path = tmp_path / "dataset_s1_II_n100_seed3.csv"
    assert out.strip() == str(path)
    assert len(path.read_text().splitlines()) == 10_001


def test_simulate_writes_files(tmp_path, capsys):
    code, out, _ = run(
        capsys, "simulate", "--config", "VIII", "--k", "2", "--seed", "4",
        "--with-cluster-mean", "--out", str(tmp_path),
    )
    assert code == 0
    for name in ("summary.csv", "summary.txt", "summary.json", "summary_replications.csv"):
        assert (tmp_path / name).exists()
    assert len((tmp_path / "summary_replications.csv").read_text().splitlines()) == 1 + 2 * 4


def test_simulate_experiment_file(tmp_path, capsys):
    plan = tmp_path / "plan.toml"
    plan.write_text('[[experiment]]\nbase = "scenario2/I"\ncluster_size = 4\nk = 1\nspecs = ["gain-ols"]\n')
    code, _, _ = run(capsys, "simulate", "--experiment", str(plan), "--out", str(tmp_path))
    assert code == 0
    assert "gain-ols:tau_hat" in (tmp_path / "summary.csv").read_text()
    plan.write_text("[[experiment]]\nk = 0\n")
    code, _, err = run(capsys, "simulate", "--experiment", str(plan), "--out", str(tmp_path))
    assert code == 1 and "k" in err


def test_missing_experiment_file_is_runtime_failure(tmp_path, capsys):
    code, _, _ = run(capsys, "simulate", "--experiment", str(tmp_path / "nope.toml"))
    assert code == 2


def test_reproduce_table_is_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "reproduce-table", "--table", "4", "--n", "4", "--k", "2", "--seed", "7", "--out", str(a))[0] == 0
    assert run(capsys, "reproduce-table", "--table", "4", "--n", "4", "--k", "2", "--seed", "7", "--out", str(b))[0] == 0
    for name in ("table4_n4.csv", "table4_n4.txt", "table4_n4.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
