from __future__ import annotations

import json

import numpy as np
import pytest

from levy_homog import cli
from levy_homog.config import DEFAULTS, apply_overrides, config_hash, load


def ex1_config(**solver):
    return {
        "seed": 7,
        "problem": {
            "dimension": 1,
            "domain": {"lower": [0.0], "upper": [1.0]},
            "measure": {"kind": "example1", "alpha": 1.5},
            "a": "2 + cos(2*pi*y1)",
            "f": "1 + sin(2*pi*y1)",
            "phi": "0",
        },
        "discretization": {"n": 128, "cell_n": 32, "R": 10.0, "cell_R": 20.0, "cells_per_decade": 16},
        "solver": {"eps_list": [0.25, 0.125, 0.0625], "samples": 40, "homogeneity_trials": 200, **solver},
        "output": {"timing": False},
    }


def lattice_config():
    # all jumps are two cells long, so even and odd cells never communicate
    return {
        "problem": {
            "dimension": 1,
            "measure": {"kind": "explicit", "nodes": [[0.125]], "weights": [1.0], "gamma": 1},
            "a": "1",
            "f": "cos(16*pi*y1)",
        },
        "discretization": {"cell_n": 16, "eps_ball": 0.0625},
    }


def write(tmp_path, cfg, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(tmp_path, command, cfg, *extra, out="out"):
    return cli.main([command, "--config", write(tmp_path, cfg), "--out", str(tmp_path / out), *extra])


@pytest.mark.parametrize("command", cli.COMMANDS)
def test_every_command_succeeds_on_the_one_sided_example(tmp_path, command):
    assert run(tmp_path, command, ex1_config()) == 0
    out = tmp_path / "out"
    jsons = list(out.glob("*.json"))
    assert jsons
    for path in jsons:
        data = json.loads(path.read_text())
        assert data["config_hash"] == config_hash(load(data=ex1_config()))
    for path in out.glob("*.csv"):
        text = path.read_bytes()
        assert text.startswith(b"# config_hash=") and b"\r\n" not in text


def test_homogenize_outputs(tmp_path):
    assert run(tmp_path, "homogenize", ex1_config()) == 0
    study = json.loads((tmp_path / "out" / "study.json").read_text())
    assert study["monotone_decrease"]
    lines = (tmp_path / "out" / "study.csv").read_text().splitlines()
    assert lines[1] == "epsilon,sup_error,interior_margin,solve_residual,wall_ms"
    assert all(line.endswith(",0.0") for line in lines[2:])
    fields = (tmp_path / "out" / "fields.csv").read_text().splitlines()
    assert fields[1].startswith("x1,u_eps_0.25") and fields[1].endswith("u_bar")


def test_outputs_are_deterministic(tmp_path):
    cfg = ex1_config()
    assert run(tmp_path, "homogenize", cfg, out="a") == 0
    assert run(tmp_path, "homogenize", cfg, "--threads", "2", out="b") == 0
    for name in ("study.csv", "fields.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    # the embedded config records the thread count; everything else matches
    ja, jb = (json.loads((tmp_path / d / "study.json").read_text()) for d in "ab")
    assert ja["config"]["solver"].pop("threads") == 1 and jb["config"]["solver"].pop("threads") == 2
    assert ja == jb


def test_cell_command_reports_the_harmonic_mean(tmp_path):
    cfg = ex1_config(I=1.0)
    cfg["problem"]["f"] = "0"
    assert run(tmp_path, "cell", cfg) == 0
    data = json.loads((tmp_path / "out" / "cell.json").read_text())
    assert data["d"] == pytest.approx(np.sqrt(3), abs=2 * data["oscillation"])


def test_invalid_alpha_exits_with_config_error(tmp_path, capsys):
    cfg = ex1_config()
    cfg["problem"]["measure"]["alpha"] = 2.5
    assert run(tmp_path, "cell", cfg) == 2
    assert "alpha" in capsys.readouterr().err


def test_all_validation_errors_are_reported_together(tmp_path, capsys):
    cfg = ex1_config()
    cfg["problem"]["measure"]["alpha"] = 2.5
    cfg["discretization"]["n"] = 0
    cfg["solver"]["osc_tol"] = -1
    assert run(tmp_path, "cell", cfg) == 2
    err = capsys.readouterr().err
    assert "alpha" in err and "discretization/n" in err and "osc_tol" in err


def test_semantic_errors(tmp_path, capsys):
    cfg = ex1_config()
    cfg["problem"]["a"] = "cos(2*pi*y1)"
    cfg["problem"]["f"] = "sin(("
    assert run(tmp_path, "cell", cfg) == 2
    err = capsys.readouterr().err
    assert "problem/f" in err
    cfg = ex1_config()
    cfg["problem"]["a"] = "cos(2*pi*y1)"
    assert run(tmp_path, "cell", cfg) == 2
    assert "problem/a" in capsys.readouterr().err


def test_missing_or_broken_config_file(tmp_path):
    assert cli.main(["cell", "--config", str(tmp_path / "nope.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert cli.main(["cell", "--config", str(bad)]) == 2


def test_disconnected_measure_is_a_precondition_failure(tmp_path):
    cfg = lattice_config()
    assert run(tmp_path, "reachability", cfg, out="r") == 3
    report = json.loads((tmp_path / "r" / "reachability.json").read_text())
    assert report["components"] == 2 and report["witness"] is not None
    assert run(tmp_path, "cell", cfg, out="c") == 3
    cell = json.loads((tmp_path / "c" / "cell.json").read_text())
    assert not cell["passed"] and cell["lam_trace"]


def test_undamped_picard_is_a_solver_failure(tmp_path, capsys):
    cfg = ex1_config(effective_method="picard", omega=1.0)
    assert run(tmp_path, "homogenize", cfg) == 4
    assert "solver failure" in capsys.readouterr().err


def test_set_overrides_and_seed(tmp_path):
    cfg = ex1_config()
    assert run(tmp_path, "cell", cfg, "--set", "solver.I=1.0", "--set", "problem.f=\"0\"", "--seed", "3",
               out="s") == 0
    data = json.loads((tmp_path / "s" / "cell.json").read_text())
    assert data["config"]["solver"]["I"] == 1.0 and data["config"]["seed"] == 3
    assert data["config"]["problem"]["f"] == "0"
    assert run(tmp_path, "cell", cfg, "--set", "solver.I") == 2


def test_threads_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("LEVY_HOMOG_THREADS", "3")
    assert run(tmp_path, "homogenize", ex1_config(), out="t") == 0
    data = json.loads((tmp_path / "t" / "study.json").read_text())
    assert data["config"]["solver"]["threads"] == 3
    monkeypatch.setenv("LEVY_HOMOG_THREADS", "many")
    assert run(tmp_path, "cell", ex1_config()) == 2


def test_config_hash_ignores_output_and_threads():
    a = load(data=ex1_config())
    b = apply_overrides(a, ["output.dir=\"elsewhere\"", "solver.threads=4"])
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(apply_overrides(a, ["solver.osc_tol=1e-5"]))


def test_defaults_fill_missing_blocks():
    cfg = load(data={"problem": {"measure": {"kind": "example1", "alpha": 0.5}}})
    assert cfg["discretization"]["n"] == DEFAULTS["discretization"]["n"]
    assert cfg["output"]["dir"] == "levy_out"


def test_module_entry_point(tmp_path):
    import subprocess
    import sys
    cfg = write(tmp_path, ex1_config())
    proc = subprocess.run([sys.executable, "-m", "levy_homog", "check-measure", "--config", cfg,
                           "--out", str(tmp_path / "m")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    report = json.loads((tmp_path / "m" / "measure_report.json").read_text())
    assert report["passed"]
