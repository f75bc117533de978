import csv
import json

import pytest

from vpconvex import config as cfgmod
from vpconvex.cli import main
from vpconvex.errors import ConfigError

SMALL_RUN = {
    "grid": {"cells": 16},
    "initial": {"N": 2000},
    "time": {"T": 0.01, "dt": 1e-3},
}


def _run(tmp_path, cfg, *extra):
    tmp_path.mkdir(parents=True, exist_ok=True)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    out = tmp_path / "out"
    code = main([str(p), "--out-dir", str(out), *extra])
    return code, out


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_run_mode_writes_diagnostics(tmp_path):
    code, out = _run(tmp_path, {**SMALL_RUN, "mode": "run", "dump_fields": True})
    assert code == 0
    rows = _rows(out / "diagnostics.csv")
    assert rows[0] == ["t", "mass", "kinetic_energy", "field_energy", "total_energy", "Q", "rho_max", "rho_53",
                       "hopf_margin"]
    assert len(rows) == 12
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == 0 and man["backend"] in ("cython", "python")
    assert (out / "rho.bin").exists() and (out / "phi.json").exists()


def test_run_output_is_reproducible(tmp_path):
    a = _run(tmp_path / "a", {**SMALL_RUN, "mode": "run"})[1]
    b = _run(tmp_path / "b", {**SMALL_RUN, "mode": "run"})[1]
    assert (a / "diagnostics.csv").read_bytes() == (b / "diagnostics.csv").read_bytes()


def test_seed_override_changes_sampling(tmp_path):
    a = _run(tmp_path / "a", {**SMALL_RUN, "mode": "run"})[1]
    b = _run(tmp_path / "b", {**SMALL_RUN, "mode": "run"}, "--seed", "9")[1]
    assert (a / "diagnostics.csv").read_bytes() != (b / "diagnostics.csv").read_bytes()


def test_poisson_mode(tmp_path):
    code, out = _run(tmp_path, {"mode": "poisson-test", "poisson_test": {"hs": [1 / 16, 1 / 32]}})
    assert code == 0
    rows = _rows(out / "poisson_convergence.csv")
    assert len(rows) == 3 and float(rows[2][2]) >= 1.8


def test_poisson_mode_flags_low_order(tmp_path):
    code, _ = _run(tmp_path, {"mode": "poisson-test", "poisson_test": {"hs": [1 / 16, 1 / 32], "min_order": 5}})
    assert code == 2


def test_trajectory_mode(tmp_path):
    cfg = {"mode": "trajectory", "time": {"T": 2.0, "dt": 1e-3},
           "trajectory": {"x0": [0, 0, 0], "v0": [1, 0, 0], "field": "zero"}}
    code, out = _run(tmp_path, cfg)
    assert code == 0
    assert len(_rows(out / "reflections.csv")) == 2
    traj = _rows(out / "trajectory.csv")
    assert traj[0][:4] == ["s", "X1", "X2", "X3"] and len(traj) == 2002


def test_velocity_lemma_mode(tmp_path):
    cfg = {"mode": "velocity-lemma", "velocity_lemma": {"depths": [0.04, 0.02], "reflections": 2}}
    code, out = _run(tmp_path, cfg)
    assert code == 0
    assert len(_rows(out / "velocity_lemma.csv")) == 5


def test_decay_scan_mode(tmp_path):
    cfg = {"mode": "decay-scan", "decay_scan": {"h": 1 / 32, "levels": 4}}
    code, out = _run(tmp_path, cfg)
    assert code == 0
    fit = json.loads((out / "decay_fit.json").read_text())
    assert fit["fit"]["r2"] > 0.5
    assert len(_rows(out / "decay_scan.csv")) == 5


def test_picard_mode_and_no_convergence(tmp_path):
    cfg = {**SMALL_RUN, "mode": "picard", "picard": {"n_max": 4, "tol": 1e-6}}
    code, out = _run(tmp_path / "ok", cfg)
    assert code == 0
    summary = json.loads((out / "picard_summary.json").read_text())
    assert summary["converged"] and summary["iterates"][0]["delta"] is None
    cfg["picard"] = {"n_max": 1, "tol": 1e-14}
    code, _ = _run(tmp_path / "bad", cfg)
    assert code == 3


def test_mode_override(tmp_path):
    code, out = _run(tmp_path, {"mode": "run", "decay_scan": {"h": 1 / 32, "levels": 3}},
                     "--mode-override", "decay-scan")
    assert code == 0 and (out / "decay_fit.json").exists()


def test_env_out_dir(tmp_path, monkeypatch):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"mode": "poisson-test", "poisson_test": {"hs": [1 / 16, 1 / 32]}}))
    monkeypatch.setenv("VPCONVEX_OUT_DIR", str(tmp_path / "env"))
    assert main([str(p)]) == 0
    assert (tmp_path / "env" / "manifest.json").exists()


@pytest.mark.parametrize("cfg", [
    {"mode": "nope"},
    {"domain": {"radius": -1.0}},
    {"grid": {"cells": 16, "h": 0.1}},
    {"grid": {"cells": -3}},
    {"bogus": 1},
    {"initial": {"temperature": 0}},
    {"domain": {"kind": "ellipsoid", "semi_axes": [1, 2]}},
])
def test_bad_config_exit_code(tmp_path, cfg):
    code, _ = _run(tmp_path, cfg)
    assert code == 1


def test_json_syntax_error_location(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text('{"mode": "run",\n  "grid": }')
    with pytest.raises(ConfigError, match="line 2"):
        cfgmod.load(p)
    assert main([str(p)]) == 1


def test_grid_h_alone_is_accepted():
    cfg = cfgmod.from_dict({"grid": {"h": 0.05}})
    assert cfg.grid.cells is None and cfg.grid.h == 0.05
