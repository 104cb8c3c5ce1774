import json

import pytest

from robustgrowth.cli import main

BETA = {"family": "beta", "params": {}, "eps": 1e-3}
CONST = {"family": "expression",
         "domain": {"e_lo": [0], "e_hi": [1], "d_lo": [0], "d_hi": [1], "boundary_eps": 0.001},
         "params": {"cx": "2", "density": "1", "cy": "1"}}


@pytest.fixture
def config(tmp_path):
    def write(doc, name="model.json"):
        path = tmp_path / name
        path.write_text(json.dumps(doc))
        return str(path)
    return write


def _read(path):
    return json.loads(path.read_text())


def test_catalog(tmp_path, capsys):
    assert main(["catalog", "--out", str(tmp_path)]) == 0
    assert "beta-default" in capsys.readouterr().out
    assert {e["name"] for e in _read(tmp_path / "catalog.json")} >= {"beta-default"}


def test_solve_beta(tmp_path, config):
    out = tmp_path / "out"
    assert main(["solve", "--model", config(BETA), "--grid", "201", "--out", str(out)]) == 0
    lam = _read(out / "lambda.json")
    assert lam["lambda"] > 0 and lam["method"] == "1d-closed-form"
    header = (out / "phi.csv").read_text().splitlines()[0]
    assert header == "x1,phi,theta1"
    manifest = _read(out / "manifest.json")
    assert set(manifest["outputs"]) == {"phi.csv", "lambda.json", "diagnostics.json"}
    assert manifest["inputs"]


def test_solve_constant_A(tmp_path, config):
    out = tmp_path / "out"
    assert main(["solve", "--model", config(CONST), "--grid", "21", "--out", str(out)]) == 0
    assert _read(out / "lambda.json")["lambda"] == 0.0


def test_malformed_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"family": "beta",,}')
    assert main(["solve", "--model", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "line 1, column" in capsys.readouterr().err


def test_bad_model_document(tmp_path, config):
    doc = {"family": "expression", "domain": CONST["domain"], "params": {"cx": "1"}}
    assert main(["solve", "--model", config(doc), "--out", str(tmp_path / "o")]) == 2


def test_model_and_example_exclusive(tmp_path, config):
    assert main(["solve", "--out", str(tmp_path / "o")]) == 2
    assert main(["solve", "--model", config(BETA), "--example", "beta-default",
                 "--out", str(tmp_path / "o")]) == 2


def test_unknown_example(tmp_path):
    assert main(["verify", "--example", "nope", "--out", str(tmp_path)]) == 2
    assert main(["solve", "--example", "nope", "--out", str(tmp_path)]) == 2


def test_validate_failure_exit(tmp_path, config):
    doc = dict(CONST, params={"cx": "1", "density": "2", "cy": "1"})
    out = tmp_path / "out"
    assert main(["validate", "--model", config(doc), "--grid", "11", "--out", str(out)]) == 2
    assert not _read(out / "validation.json")["passed"]


def test_audit(tmp_path):
    out = tmp_path / "out"
    assert main(["audit", "--example", "beta-default", "--k", "2", "--out", str(out)]) == 0
    assert _read(out / "audit.json")["passed"]
    assert (out / "energies.csv").read_text().startswith("n,E_phi,E_psi")


def test_simulate_repeatable(tmp_path):
    args = ["simulate", "--example", "beta-default", "--grid", "101", "--T", "20", "--dt", "1e-3",
            "--paths", "4", "--seed", "5", "--record", "5"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("summary.json", "occupancy.csv", "paths.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = _read(tmp_path / "a" / "summary.json")
    assert summary["measure"] == "worst-case"
    assert "wealth_formula_mismatch" in summary


def test_simulate_reference(tmp_path):
    out = tmp_path / "r"
    assert main(["simulate", "--example", "beta-default", "--grid", "101", "--measure",
                 "reference", "--T", "5", "--paths", "2", "--out", str(out)]) == 0
    names = [g["strategy"] for g in _read(out / "summary.json")["growth"]]
    assert names[0].startswith("theta_hat")


def test_reject_overflow_exit(tmp_path):
    assert main(["simulate", "--example", "beta-default", "--grid", "101", "--T", "50",
                 "--dt", "5", "--paths", "2", "--policy", "reject-and-halve",
                 "--out", str(tmp_path)]) == 3


def test_bad_sim_config(tmp_path):
    assert main(["simulate", "--example", "beta-default", "--grid", "101", "--dt", "0",
                 "--out", str(tmp_path)]) == 2


def test_verify_coarse_mode(tmp_path, capsys):
    out = tmp_path / "v"
    assert main(["verify", "--example", "beta-default", "--grid", "21", "--no-mc",
                 "--out", str(out)]) == 0
    rows = _read(out / "verify.json")
    assert any(r["status"] == "xfail" for r in rows)
    assert (out / "verify.csv").exists()
