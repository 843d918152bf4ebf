import io
import json
import os
import subprocess
import sys

import pytest

from parasys.cli import main, run

IDENTITY = {"m": 1, "d": 2, "A": [[[[1, 0], [0, 1]]]]}
SMALL_MESH = {"h": 0.25, "dirichlet": [["bottom", "right", "top", "left"]]}


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run_cmd(command, tmp_path, params, seed=0, out="out"):
    path = write(tmp_path, {"params": params, "seed": seed})
    buf = io.StringIO()
    code = run(command, path, out=str(tmp_path / out), stream=buf)
    return code, json.loads(buf.getvalue()), tmp_path / out


def test_sneiberg_example(tmp_path):
    code, msg, out = run_cmd("sneiberg", tmp_path, {"theta": 0.5, "beta": 1, "gamma": 1})
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["radius"] == pytest.approx(1 / 36, abs=1e-15) and rep["inverse_bound"] == 8
    assert msg["report"]["radius"] == rep["radius"]


def test_sneiberg_intervals(tmp_path):
    params = {"intervals": {"lambda": 0, "gamma": 1, "M": 1, "Lambda": 1}}
    code, _, out = run_cmd("sneiberg", tmp_path, params)
    rep = json.loads((out / "report.json").read_text())
    assert code == 0 and len(rep["intervals"]["provenance"]) == 4


def test_analyze_identity(tmp_path):
    code, _, out = run_cmd("analyze-tensor", tmp_path, {"tensor": IDENTITY, "mesh": SMALL_MESH})
    rep = json.loads((out / "report.json").read_text())
    assert code == 0
    assert rep["gamma_legendre"] == pytest.approx(1.0) and rep["gamma_lh"] == pytest.approx(1.0)
    assert rep["gamma_garding"] > 0


def test_malformed_config_writes_nothing(tmp_path):
    code, msg, out = run_cmd("sneiberg", tmp_path, {"theta": 0.5, "beta": 1, "gamma": 1, "x": 3})
    assert code == 2 and msg["reason"] == "config_schema"
    assert not out.exists()
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("sneiberg", str(bad), out=str(out), stream=io.StringIO()) == 2
    assert not out.exists()


def test_unknown_top_level_key_rejected(tmp_path):
    path = write(tmp_path, {"params": {}, "colour": "red"})
    assert run("sneiberg", path, out=str(tmp_path / "o"), stream=io.StringIO()) == 2


def test_solver_failure_writes_error_json(tmp_path):
    params = {"coefficient_map": {"name": "scalar_clamp"}, "max_iter": 1, "mesh": SMALL_MESH,
              "grid": {"T": 1.0, "N": 4}}
    code, msg, out = run_cmd("solve-quasilinear", tmp_path, params)
    assert code == 3 and msg["reason"] == "picard_max_iter"
    err = json.loads((out / "error.json").read_text())
    assert err["reason"] == "picard_max_iter" and "last_residual" in err


def test_unknown_map_is_validation_error(tmp_path):
    params = {"coefficient_map": {"name": "nope"}, "mesh": SMALL_MESH}
    code, msg, out = run_cmd("solve-quasilinear", tmp_path, params)
    assert code == 2 and msg["reason"] == "unknown_map" and not out.exists()


@pytest.mark.parametrize("command,params", [
    ("lions", {"family": {"mode": "random", "m": 1, "nodes": 4}, "gamma": 0.5, "Lambda": 1.0,
               "M": 2.0, "mesh": SMALL_MESH, "grid": {"T": 1.0, "N": 8}}),
    ("solve-parabolic", {"family": {"mode": "constant", "tensor": IDENTITY},
                         "u0": {"kind": "sine"}, "mesh": SMALL_MESH, "grid": {"N": 4}}),
    ("solve-quasilinear", {"coefficient_map": {"name": "nonlocal_mean"}, "mode": "continuation",
                           "rhs": {"name": "linear_mass", "params": {"c": 0.1}},
                           "mesh": SMALL_MESH, "grid": {"T": 0.25, "N": 32}}),
    ("chemotaxis", {"params": {"sigma1": 0.2}, "mode": "reduced2", "mesh": {"h": 0.25},
                    "grid": {"T": 0.1, "N": 4}}),
    ("geometry-check", {"mesh": SMALL_MESH, "radii": [0.1], "samples": 4}),
])
def test_commands_are_deterministic(tmp_path, command, params):
    code1, _, out1 = run_cmd(command, tmp_path, params, seed=7, out="a")
    code2, _, out2 = run_cmd(command, tmp_path, params, seed=7, out="b")
    assert code1 == code2 == 0
    names = sorted(os.listdir(out1))
    assert names == sorted(os.listdir(out2)) and names
    for n in names:
        assert (out1 / n).read_bytes() == (out2 / n).read_bytes()


def test_seed_changes_random_runs(tmp_path):
    params = {"family": {"mode": "random", "m": 1, "nodes": 4}, "gamma": 0.5, "Lambda": 1.0,
              "M": 2.0, "mesh": SMALL_MESH, "grid": {"T": 1.0, "N": 8}}
    run_cmd("lions", tmp_path, params, seed=1, out="a")
    run_cmd("lions", tmp_path, params, seed=2, out="b")
    a = json.loads((tmp_path / "a" / "report.json").read_text())
    b = json.loads((tmp_path / "b" / "report.json").read_text())
    assert a["seed"] == 1 and b["seed"] == 2 and a != b


def test_main_argument_errors(tmp_path, capsys):
    assert main(["sneiberg"]) == 2
    assert main(["frobnicate", "--config", "x"]) == 2


def test_console_entry_point(tmp_path):
    path = write(tmp_path, {"params": {"theta": 0.25, "beta": 1, "gamma": 1}})
    proc = subprocess.run([sys.executable, "-m", "parasys.cli", "sneiberg", "--config", path,
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["report"]["radius"] == pytest.approx(0.25 / 18)
