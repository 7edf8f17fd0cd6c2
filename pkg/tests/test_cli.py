import json

import pytest

from kmstat.cli import main
from kmstat.models import exponential_model, koziol_green, make_rng, sample_censored
from kmstat.survival import write_csv


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == 0 else None), err


@pytest.fixture
def small_csv(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("time,event\n1,1\n2,0\n3,1\n")
    return str(p)


@pytest.fixture
def null_csv(tmp_path):
    p = tmp_path / "null.csv"
    write_csv(sample_censored(koziol_green(exponential_model(1.0), 0.5), 300, make_rng(4)), p)
    return str(p)


def test_vstat_ustat_json(capsys, small_csv):
    code, out, _ = run(capsys, "vstat", "--input", small_csv, "--kernel", "prod:0")
    assert code == 0 and out["value"] == pytest.approx(49 / 9)
    assert out["n"] == 3 and out["n_events"] == 2 and "vstat" in out["components"]
    code, out, _ = run(capsys, "ustat", "--input", small_csv, "--kernel", "prod:0")
    assert code == 0 and out["value"] == pytest.approx(3.0)


def test_mmd_needs_null(capsys, small_csv):
    code, _, err = run(capsys, "mmd", "--input", small_csv, "--kernel", "ou")
    assert code == 2 and "--null" in err
    code, out, _ = run(capsys, "mmd", "--input", small_csv, "--kernel", "ou", "--null", "exp:1")
    assert code == 0 and out["value"] >= 0


def test_bad_csv_is_a_validation_error(capsys, tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("time,event\n1,1\n2,x\n")
    code, _, err = run(capsys, "vstat", "--input", str(p), "--kernel", "ou")
    assert code == 2 and ":3:" in err
    code, _, _ = run(capsys, "vstat", "--input", str(tmp_path / "missing.csv"), "--kernel", "ou")
    assert code == 2


def test_analyze_reports_regime_and_divergence(capsys):
    code, out, _ = run(capsys, "analyze", "--model", "exp:1", "--censor", "kg:0.5",
                       "--kernel", "prod:0")
    assert code == 0 and out["regime"]["regime"] == "NonDegenerate"
    assert out["clt_variance"] == pytest.approx(8.0, rel=1e-6)
    code, out, _ = run(capsys, "analyze", "--model", "exp:1", "--censor", "kg:1.5",
                       "--kernel", "prod:0")
    assert code == 0 and out["conditions"]["finite"] is False
    assert out["sigma2"]["divergent"] is True
    code, out, _ = run(capsys, "analyze", "--model", "exp:1", "--censor", "kg:0.5",
                       "--kernel", "cvm")
    assert out["regime"]["regime"] == "DegenerateZero"
    assert out["asymptotic_mean"] == pytest.approx(2 / 9)


def test_nulldist_json_and_numerical_failure(capsys):
    code, out, _ = run(capsys, "nulldist", "--model", "exp:1", "--censor", "kg:0.5",
                       "--kernel", "ou", "--trunc", "10", "--nodes", "200", "--seed", "7")
    assert code == 0 and out["mean"] == pytest.approx(1.0)
    assert len(out["eigenvalues"]) == 10 and out["variance_closed"] == pytest.approx(0.208)
    code, _, err = run(capsys, "nulldist", "--model", "exp:1", "--censor", "kg:2.5",
                       "--kernel", "cvm", "--trunc", "5", "--nodes", "100")
    assert code == 3 and "diverges" in err


def test_invalid_spec_exit_code(capsys):
    code, _, _ = run(capsys, "analyze", "--model", "exp:-1", "--kernel", "ou")
    assert code == 2


def test_simulate_writes_files(capsys, tmp_path):
    out = tmp_path / "run"
    code, summary, _ = run(capsys, "simulate", "--experiment", "cvm", "--gamma", "0.5",
                           "--n", "50,80", "--reps", "6", "--seed", "2", "--out", str(out))
    assert code == 0 and summary["config"]["sample_sizes"] == [50, 80]
    assert (out / "values.csv").read_text().count("\n") == 2 + 12


@pytest.mark.parametrize("kind", ["cvm", "mmd"])
def test_goodness_of_fit(capsys, null_csv, kind):
    code, out, _ = run(capsys, "test", kind, "--input", null_csv, "--null", "exp:1",
                       "--censor", "kg:0.5", "--trunc", "30", "--nodes", "400",
                       "--draws", "20000")
    assert code == 0
    assert set(out) >= {"statistic", "scaled_statistic", "p_value", "mc_draws", "decision"}
    assert 0 < out["p_value"] <= 1 and out["mc_draws"] == 20000
    assert out["scaled_statistic"] == pytest.approx(300 * out["statistic"])


def test_goodness_of_fit_rejects_far_null(capsys, null_csv):
    code, out, _ = run(capsys, "test", "cvm", "--input", null_csv, "--null", "exp:4",
                       "--censor", "kg:0.5", "--trunc", "30", "--nodes", "400",
                       "--draws", "20000")
    assert code == 0 and out["decision"] == "reject"
