import json
import subprocess
import sys

import numpy as np
import pytest

from awp.cli import main
from awp.io import load_awpt, load_grid, save_awpt


@pytest.fixture
def layer(tmp_path):
    data = tmp_path / "data"
    assert main(["generate", "--out", str(data), "--d-out", "8", "--d-in", "10", "--n", "200", "--seed", "3"]) == 0
    return data


def _io(layer, out, cov=False):
    src = ["--cov", str(layer / "C.awpt")] if cov else ["--acts", str(layer / "X.awpt")]
    return ["--weights", str(layer / "W.awpt"), *src, "--out", str(out)]


def _result(out):
    return json.loads((out / "result.json").read_text())


def test_prune_keep_all_has_zero_loss(layer, tmp_path):
    out = tmp_path / "p"
    assert main(["prune", *_io(layer, out), "--keep", "10"]) == 0
    assert _result(out)["final_normalized_loss"] == 0.0


def test_prune_defaults_echoed(layer, tmp_path):
    out = tmp_path / "p"
    assert main(["compress", "--mode", "prune", "--ratio", "0.5", *_io(layer, out)]) == 0
    r = _result(out)
    assert r["config"]["eta_rule"] == "2/||C||_F"
    assert r["config"]["grad_tol"] == 1e-4 and r["config"]["max_iters"] == 200
    for key in ("mode", "initial_normalized_loss", "final_normalized_loss", "iterations", "stop_reason",
                "wall_time_ms"):
        assert key in r
    assert r["final_normalized_loss"] <= r["initial_normalized_loss"] + 1e-12
    theta, mask = load_awpt(out / "theta.awpt"), load_awpt(out / "mask.awpt")
    assert theta.shape == (8, 10) and np.all(mask.sum(axis=1) == 5)
    assert not np.any(theta[~mask])
    trace = (out / "trace.csv").read_text().splitlines()
    assert trace[0] == "iter,normalized_loss,grad_norm,ratio" and len(trace) == r["iterations"] + 2


def test_quantize_defaults_echoed(layer, tmp_path):
    out = tmp_path / "q"
    assert main(["compress", "--mode", "quantize", "--bits", "4", "--group", "128", *_io(layer, out, cov=True)]) == 0
    r = _result(out)
    assert r["config"]["max_iters"] == 10 and r["config"]["init"] == "rtn" and r["iterations"] == 10
    assert r["config"]["eta_rule"] == "1.5/||C||_F"
    grid = load_grid(out / "grid.json")
    assert grid.bits == 4 and grid.group_size == 128


def test_joint_outputs(layer, tmp_path):
    out = tmp_path / "j"
    assert main(["joint", *_io(layer, out), "--ratio", "0.5", "--group", "5"]) == 0
    r = _result(out)
    assert r["iterations"] == 100 and set(r["files"]) == {"theta", "mask", "grid", "trace"}
    assert main(["joint", *_io(layer, tmp_path / "j2"), "--ratio", "0.5", "--max-iters", "5"]) == 2


@pytest.mark.parametrize("method", ["magnitude", "wanda", "rtn", "awq-lite", "wanda+awq", "awq+wanda"])
def test_baselines(method, layer, tmp_path):
    out = tmp_path / method
    assert main(["baseline", "--method", method, *_io(layer, out), "--ratio", "0.5", "--group", "5"]) == 0
    r = _result(out)
    assert r["method"] == method and r["stop_reason"] == "closed_form"
    assert (out / "theta.awpt").exists()


def test_awq_needs_activations(layer, tmp_path, capsys):
    assert main(["baseline", "--method", "awq-lite", *_io(layer, tmp_path / "x", cov=True)]) == 2
    assert "activations" in capsys.readouterr().err


def test_input_errors(layer, tmp_path, capsys):
    w = str(layer / "W.awpt")
    both = ["--acts", str(layer / "X.awpt"), "--cov", str(layer / "C.awpt")]
    assert main(["prune", "--weights", w, *both, "--ratio", "0.5", "--out", str(tmp_path / "e")]) == 2
    assert main(["prune", "--weights", w, "--ratio", "0.5", "--out", str(tmp_path / "e")]) == 2
    assert main(["prune", "--weights", str(tmp_path / "missing.awpt"), "--acts", str(layer / "X.awpt"),
                 "--ratio", "0.5"]) == 2
    assert main(["prune", *_io(layer, tmp_path / "e"), "--ratio", "0.5", "--eta-rule", "newton"]) == 2
    assert main(["prune", *_io(layer, tmp_path / "e"), "--ratio", "1.5"]) == 2
    assert main(["prune", *_io(layer, tmp_path / "e")]) == 2
    bad = tmp_path / "bad.awpt"
    bad.write_bytes(b"JUNKJUNKJUNK")
    assert main(["prune", "--weights", str(bad), "--acts", str(layer / "X.awpt"), "--ratio", "0.5"]) == 2
    asym = tmp_path / "asym.awpt"
    save_awpt(asym, np.triu(np.ones((10, 10))))
    assert main(["prune", "--weights", w, "--cov", str(asym), "--ratio", "0.5"]) == 2
    err = capsys.readouterr().err
    assert err.count("awp:") >= 8


def test_divergence_exit_code(layer, tmp_path, capsys):
    assert main(["prune", *_io(layer, tmp_path / "d"), "--ratio", "0.5", "--eta-rule", "explicit:1e9"]) == 3
    assert "numerical" in capsys.readouterr().err


def test_bench_empty_suite(tmp_path):
    suite = tmp_path / "s.json"
    suite.write_text("[]")
    assert main(["bench", "--suite", str(suite), "--out", str(tmp_path / "b")]) == 0
    assert json.loads((tmp_path / "b" / "report.json").read_text()) == {"suites": []}


def test_bench_recovery_report_is_deterministic(tmp_path):
    suite = tmp_path / "s.json"
    suite.write_text(json.dumps([{"d": 32, "k": 4, "n": 2048, "noise": 0, "trials": 4}]))
    for name in ("a", "b"):
        assert main(["bench", "--suite", str(suite), "--out", str(tmp_path / name), "--seed", "5"]) == 0
    a = (tmp_path / "a" / "report.json").read_bytes()
    assert a == (tmp_path / "b" / "report.json").read_bytes()
    rep = json.loads(a)["suites"][0]["report"]
    assert "support_recovery_rate" in rep and "kappa" in rep and "bound_satisfaction_rate" in rep


def test_bench_bad_suite(tmp_path):
    suite = tmp_path / "s.json"
    suite.write_text(json.dumps([{"kind": "nonsense"}]))
    assert main(["bench", "--suite", str(suite), "--out", str(tmp_path / "b")]) == 2
    suite.write_text(json.dumps([{"kind": "recovery", "bogus": 1}]))
    assert main(["bench", "--suite", str(suite), "--out", str(tmp_path / "b")]) == 2


def _compare(tmp_path, w, c, k):
    save_awpt(tmp_path / "w.awpt", w)
    save_awpt(tmp_path / "c.awpt", c)
    out = tmp_path / "cmp"
    code = main(["oracle-compare", "--weights", str(tmp_path / "w.awpt"), "--cov", str(tmp_path / "c.awpt"),
                 "--keep", str(k), "--out", str(out)])
    return code, (json.loads((out / "comparison.json").read_text()) if code == 0 else None)


def test_oracle_compare_identity(tmp_path, rng):
    code, rep = _compare(tmp_path, rng.standard_normal((4, 8)), np.eye(8), 3)
    assert code == 0
    for row in rep["rows"]:
        assert row["awp_ratio"] == pytest.approx(1.0, rel=1e-12)


def test_oracle_compare_keep_all(tmp_path, rng):
    code, rep = _compare(tmp_path, rng.standard_normal((4, 8)), np.eye(8), 8)
    assert all(row[m] == 0.0 for row in rep["rows"] for m in ("oracle", "awp", "wanda", "magnitude"))


def test_oracle_compare_dominance(tmp_path):
    r = np.random.default_rng(810)
    x = r.standard_normal((10, 60))
    code, rep = _compare(tmp_path, r.standard_normal((8, 10)), x @ x.T / 60, 3)
    assert len(rep["rows"]) == 8
    for row in rep["rows"]:
        for m in ("awp", "wanda", "magnitude"):
            assert row[f"{m}_ratio"] >= 1.0 - 1e-12


def test_oracle_compare_guard(tmp_path, rng):
    code, _ = _compare(tmp_path, rng.standard_normal((2, 17)), np.eye(17), 3)
    assert code == 2


def test_manifest(layer, tmp_path):
    m = tmp_path / "job.json"
    m.write_text(json.dumps({"command": "prune", "weights": str(layer / "W.awpt"), "acts": str(layer / "X.awpt"),
                             "ratio": 0.5, "out": str(tmp_path / "m"), "seed": 4}))
    assert main(["run", str(m)]) == 0
    assert _result(tmp_path / "m")["seed"] == 4


def test_console_entry_point(layer, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "awp.cli", "prune", *_io(layer, tmp_path / "s"), "--keep", "3"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "awp.cli", "prune", "--weights", "nowhere.awpt", "--acts", "x"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "awp:" in proc.stderr
