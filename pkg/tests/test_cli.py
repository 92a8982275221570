import json
import subprocess
import sys

import pytest

from udid.cli import main


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


@pytest.fixture
def simulated(tmp_path):
    cfg = _write(tmp_path / "sim.cfg", "dgp = continuous_orec\nn = 4000\nseed = 17\nn_cov = 1\n")
    csv_path = tmp_path / "panel.csv"
    assert main(["simulate", "--config", cfg, "--out", str(csv_path)]) == 0
    return csv_path


def test_simulate_then_fit_round_trip(tmp_path, simulated):
    truth = json.loads(simulated.with_suffix(".truth.json").read_text())
    assert truth["seed"] == 17 and truth["dgp"] == "continuous_orec"
    prefix = tmp_path / "fit"
    code = main(["fit", str(simulated), "--estimators", "glm,ipw,dr", "--out", str(prefix)])
    assert code == 0
    records = [json.loads(line) for line in prefix.with_suffix(".jsonl").read_text().splitlines()]
    assert [r["estimator"] for r in records] == ["glm", "ipw", "dr"]
    for rec in records:
        assert abs(rec["estimate"] - truth["true_att"]) < 3 * rec["se"]
    assert "dr" in prefix.with_suffix(".txt").read_text()


def test_fit_output_is_deterministic(tmp_path, simulated):
    outs = []
    for k in range(2):
        prefix = tmp_path / f"run{k}"
        main(["fit", str(simulated), "--out", str(prefix)])
        outs.append(prefix.with_suffix(".jsonl").read_bytes())
    assert outs[0] == outs[1]
    names = [json.loads(line)["estimator"] for line in outs[0].decode().splitlines()]
    assert names == ["glm", "ipw", "dr", "pt-reg", "pt-ipw", "pt-dr"]


def test_single_estimator_and_discretized(tmp_path, simulated):
    prefix = tmp_path / "one"
    main(["fit", str(simulated), "--estimators", "ipw", "--out", str(prefix)])
    assert len(prefix.with_suffix(".jsonl").read_text().splitlines()) == 1
    cfg = _write(tmp_path / "disc.cfg", "M = 5\nestimators = discretized\n")
    main(["fit", str(simulated), "--config", cfg, "--out", str(prefix)])
    names = [json.loads(line)["estimator"] for line in prefix.with_suffix(".jsonl").read_text().splitlines()]
    assert names == ["discretized-glm", "discretized-ipw", "discretized-dr"]


def test_malformed_input_exit_code(tmp_path, capsys):
    bad = _write(tmp_path / "bad.csv", "y0,y1,a\n1,2,0\n3,oops,1\n")
    assert main(["fit", bad, "--out", str(tmp_path / "x")]) == 1
    assert "row 3" in capsys.readouterr().err
    empty = _write(tmp_path / "empty.csv", "y0,y1,a\n")
    assert main(["fit", empty, "--out", str(tmp_path / "x")]) == 1
    cfg = _write(tmp_path / "bad.cfg", "flavour = mint\n")
    assert main(["fit", str(bad), "--config", cfg]) == 1


def test_sensitivity_default_grid(tmp_path, simulated):
    out = tmp_path / "curve.csv"
    assert main(["sensitivity", str(simulated), "--estimator", "glm", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("d_prime") and len(lines) == 82
    assert lines[41].startswith("0.0,")
    summary = out.with_suffix(".summary.txt").read_text()
    assert "breakdown_nonsig_positive" in summary and "sigma_y" in summary


def test_diagnose(tmp_path, simulated):
    out = tmp_path / "diag.txt"
    assert main(["diagnose", str(simulated), "--out", str(out)]) == 0
    text = out.read_text()
    assert "x1" in text and "quadratic" in text and "3.8415" in text


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "udid.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "sensitivity" in proc.stdout
