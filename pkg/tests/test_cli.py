import json
import subprocess
import sys

import numpy as np
import pytest

from psido.cli import main
from psido.grids import load_grid, read_header


def run(tmp_path, *args):
    return main([str(a) for a in args])


@pytest.fixture
def small(tmp_path):
    """Identity symbol and a Gaussian on a small 1-D grid."""
    grid = ["--L", 8, "--N", 64]
    assert run(tmp_path, "sample", "function", "--preset", "wide_gaussian", *grid, "--out", tmp_path / "v.fn") == 0
    assert run(tmp_path, "sample", "symbol", "--preset", "one", *grid, "--out", tmp_path / "one.sym") == 0
    return tmp_path, grid


def test_apply_identity(small):
    tmp_path, grid = small
    code = run(tmp_path, "quantize", "apply", "--model", "euclidean_standard", "--lambda", 0, *grid,
               "--symbol", tmp_path / "one.sym", "--input", tmp_path / "v.fn", "--out", tmp_path / "w.fn")
    assert code == 0
    v, w = load_grid(tmp_path / "v.fn"), load_grid(tmp_path / "w.fn")
    assert np.linalg.norm(w.data - v.data) <= 1e-8 * np.linalg.norm(v.data)
    prov = read_header(tmp_path / "w.fn")["meta"]["provenance"]
    assert prov["command"] == "quantize" and "numpy_version" in prov


def test_refuses_overwrite(small):
    tmp_path, grid = small
    target = tmp_path / "v.fn"
    before = target.read_bytes()
    assert run(tmp_path, "sample", "function", "--preset", "gaussian", *grid, "--out", target) == 3
    assert target.read_bytes() == before
    assert run(tmp_path, "sample", "function", "--preset", "gaussian", *grid, "--out", target, "--overwrite") == 0
    assert target.read_bytes() != before


@pytest.mark.parametrize("content,name", [
    ("{not json", "bad.json"),
    ('{"grid": {"L": 8, "N": 7}}', "odd.json"),
    ('{"colour": 1}', "extra.json"),
    ("model: [1, 2\n", "bad.yaml"),
    ('{"lambda": 2}', "lam.json"),
])
def test_malformed_config_exit_3_and_no_outputs(tmp_path, content, name):
    cfg = tmp_path / name
    cfg.write_text(content)
    out = tmp_path / "out.fn"
    assert run(tmp_path, "sample", "function", "--preset", "gaussian", "--config", cfg, "--out", out) == 3
    assert not out.exists()


def test_yaml_config(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("model:\n  kind: euclidean_standard\n  dim: 2\ngrid:\n  L: 4\n  N: 16\n")
    assert run(tmp_path, "sample", "function", "--preset", "gaussian", "--config", cfg, "--out", tmp_path / "f") == 0
    assert load_grid(tmp_path / "f").spec.dim == 2


def test_unknown_preset_and_missing_input(tmp_path):
    assert run(tmp_path, "sample", "symbol", "--preset", "nope", "--out", tmp_path / "s") == 3
    assert run(tmp_path, "quantize", "apply", "--symbol", tmp_path / "missing", "--input", tmp_path / "m2",
               "--out", tmp_path / "o") == 3
    assert not (tmp_path / "o").exists()


def test_interior_lambda_on_deformed_is_config_error(tmp_path):
    assert run(tmp_path, "sample", "symbol", "--preset", "gaussian", "--L", 4, "--N", 16,
               "--out", tmp_path / "g.sym") == 0
    code = run(tmp_path, "convert-lambda", "--model", "euclidean_deformed", "--lambda", 0.5,
               "--L", 4, "--N", 16, "--symbol", tmp_path / "g.sym", "--to", 1, "--out", tmp_path / "o")
    assert code == 3


def test_verify_and_report(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run(tmp_path, "verify-geometry", "--model", "euclidean_deformed", "--dim", 1,
               "--sigma", 1, "--out", a) == 0
    assert (tmp_path / "a_samples.csv").exists()
    assert run(tmp_path, "verify-geometry", "--model", "euclidean_scaled", "--dim", 1,
               "--suite", "c_sigma", "--out", b) == 1
    merged = tmp_path / "m.json"
    assert run(tmp_path, "report", a, b, "--out", merged) == 1
    doc = json.loads(merged.read_text())
    assert doc["verdict"] == "fail" and doc["provenance"]["command"] == "report"
    assert len(doc["reports"]) == 5
    assert run(tmp_path, "report", a, "--out", tmp_path / "only_a.json") == 0
    assert run(tmp_path, "verify-geometry", "--suite", "nonsense", "--out", tmp_path / "x.json") == 3


def test_verify_refuses_existing_csv(tmp_path):
    (tmp_path / "r_samples.csv").write_text("keep")
    assert run(tmp_path, "verify-geometry", "--suite", "h_v", "--out", tmp_path / "r.json") == 3
    assert not (tmp_path / "r.json").exists()
    assert (tmp_path / "r_samples.csv").read_text() == "keep"


def test_compose_expansion_report(tmp_path):
    grid = ["--L", 6, "--N", 64]
    assert run(tmp_path, "sample", "symbol", "--preset", "gaussian", *grid, "--out", tmp_path / "g.sym") == 0
    errs = []
    for order in (0, 2):
        code = run(tmp_path, "compose", "--mode", "expansion", "--order", order, *grid,
                   "--a", tmp_path / "g.sym", "--b", tmp_path / "g.sym",
                   "--out", tmp_path / f"c{order}.sym", "--report", tmp_path / f"c{order}.json")
        assert code == 0
        rep = json.loads((tmp_path / f"c{order}.json").read_text())
        assert rep["order"] == order and rep["provenance"]["command"] == "compose"
        errs.append(rep["relative_error_vs_kernel_oracle"])
    # a unit Gaussian gains nothing per order, so only the trend is asserted
    assert errs[1] < errs[0]


def test_transport_table(tmp_path):
    out = tmp_path / "t.json"
    assert run(tmp_path, "transport", "--model", "hyperbolic_exp", "--L", 1, "--N", 8, "--xi", "0.5,0.2",
               "--out", out) == 0
    doc = json.loads(out.read_text())
    assert all(r["max_residual_upsilon"] <= 1e-6 for r in doc["identity_checks"])
    assert run(tmp_path, "transport", "--xi", "1,2,3", "--out", tmp_path / "u.json") == 3


def test_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv("PSIDO_THREADS", "many")
    assert run(tmp_path, "sample", "function", "--preset", "gaussian", "--out", tmp_path / "f") == 3
    monkeypatch.setenv("PSIDO_THREADS", "1")
    assert run(tmp_path, "sample", "function", "--preset", "gaussian", "--out", tmp_path / "f") == 0


def test_bad_arguments_exit_3(tmp_path):
    assert run(tmp_path, "quantize", "teleport") == 3
    assert run(tmp_path) == 3


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "psido.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "psido" in res.stdout


def test_hyperbolic_verify_reports_instead_of_crashing(tmp_path):
    out = tmp_path / "h.json"
    assert run(tmp_path, "verify-geometry", "--model", "hyperbolic_exp", "--sigma", 1, "--orders", "2,3",
               "--out", out) == 1
    doc = json.loads(out.read_text())
    assert [r["verdict"] for r in doc["reports"]] == ["fail"] * 4
