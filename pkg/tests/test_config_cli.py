import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import CONFIGS
from gradcap.config import build_spec, emit, load_config
from gradcap.errors import ParseError, ValidationError


def base_config(**overrides):
    cfg = {
        "domain": {"type": "box", "lo": [-1.0], "hi": [1.0]},
        "h": 0.0625,
        "coefficients": {"a": 1.0, "b": [0.0], "c": 1.0, "h": 2.0, "g": 10.0},
    }
    cfg.update(overrides)
    return cfg


def test_shipped_configs_load(config_paths):
    for path in config_paths:
        spec = load_config(path)
        assert spec.grid.n_interior >= 3
        assert spec.config_hash


def test_round_trip(config_paths):
    for path in config_paths:
        spec = load_config(path)
        again = build_spec(emit(spec))
        assert again == spec
        assert again.config_hash == spec.config_hash


def test_unknown_key_rejected():
    with pytest.raises(ValidationError) as err:
        build_spec(base_config(bogus=1))
    assert "bogus" in str(err.value)


def test_c_zero_rejected_with_positivity_message():
    cfg = base_config()
    cfg["coefficients"]["c"] = 0.0
    with pytest.raises(ValidationError) as err:
        build_spec(cfg)
    assert "> 0" in str(err.value)


def test_alpha_above_one_rejected_citing_bounded_variation():
    cfg = base_config(levy={"type": "bv_density", "kappa": 1.0, "alpha": 1.5,
                            "delta": 1e-4, "zmax": 1.0, "rays": [[1.0]]})
    with pytest.raises(ValidationError) as err:
        build_spec(cfg)
    assert "bounded variation" in str(err.value)


def test_negative_g_rejected():
    cfg = base_config()
    cfg["coefficients"]["g"] = -1.0
    with pytest.raises(ValidationError):
        build_spec(cfg)


def test_too_coarse_grid_rejected():
    cfg = base_config(h=0.6)
    cfg["domain"] = {"type": "box", "lo": [0.0], "hi": [1.0]}
    with pytest.raises(ValidationError):
        build_spec(cfg)


def test_bad_schedule_rejected():
    with pytest.raises(ValidationError):
        build_spec(base_config(eps_schedule=[0.1, 0.2]))


def test_expression_security():
    cfg = base_config()
    cfg["coefficients"]["h"] = "__import__('os').system('true')"
    with pytest.raises(ValidationError):
        build_spec(cfg)
    cfg["coefficients"]["h"] = "y + 1.0"  # no y in 1d
    with pytest.raises(ValidationError):
        build_spec(cfg)


def test_jump_density_range_validated():
    cfg = base_config(jump_density={"type": "constant", "value": 1.3})
    with pytest.raises(ValidationError):
        build_spec(cfg)


def test_parse_error_reports_location(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json }")
    with pytest.raises(ParseError) as err:
        load_config(bad)
    assert "line" in str(err.value)


def run_cli(*args):
    proc = subprocess.run([sys.executable, "-m", "gradcap", *args],
                          capture_output=True, text=True)
    return proc


def small_config(tmp_path):
    cfg = base_config(h=0.03125)
    path = tmp_path / "small.json"
    path.write_text(json.dumps(cfg))
    return path


def test_cli_solve_nidd_and_residual_roundtrip(tmp_path):
    cfg = small_config(tmp_path)
    out = tmp_path / "u.csv"
    rep = tmp_path / "rep.json"
    proc = run_cli("solve-nidd", "--config", str(cfg), "--eps", "0.1",
                   "--out", str(out), "--report", str(rep))
    assert proc.returncode == 0, proc.stderr
    report = json.loads(rep.read_text())
    assert report["converged"]
    res_out = tmp_path / "res.json"
    proc2 = run_cli("residual", "--config", str(cfg), "--field", str(out),
                    "--out", str(res_out))
    assert proc2.returncode == 0, proc2.stderr
    res = json.loads(res_out.read_text())
    assert res["pde_pos"] <= 1e-6
    assert res["config_hash"] == report["config_hash"]


def test_cli_missing_config_exit_2(tmp_path):
    proc = run_cli("solve-nidd", "--config", str(tmp_path / "absent.json"),
                   "--eps", "0.1", "--out", str(tmp_path / "u.csv"))
    assert proc.returncode == 2


def test_cli_validation_error_exit_2(tmp_path):
    cfg = base_config()
    cfg["coefficients"]["c"] = 0.0
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(cfg))
    proc = run_cli("solve-nidd", "--config", str(path), "--eps", "0.1",
                   "--out", str(tmp_path / "u.csv"))
    assert proc.returncode == 2
    assert "config error" in proc.stderr


def test_cli_solver_failure_exit_1_with_best_iterate(tmp_path):
    cfg = base_config(h=0.015625)
    cfg["coefficients"]["h"] = 10.0
    cfg["coefficients"]["g"] = 0.5
    cfg["solver"] = {"max_iter": 2}
    path = tmp_path / "hard.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "u.csv"
    proc = run_cli("solve-nidd", "--config", str(path), "--eps", "0.02",
                   "--out", str(out))
    assert proc.returncode == 1
    assert out.exists()  # best iterate still written


def test_cli_solve_hjb_writes_report(tmp_path):
    cfg = small_config(tmp_path)
    out = tmp_path / "u.csv"
    rep = tmp_path / "rep.json"
    proc = run_cli("solve-hjb", "--config", str(cfg), "--out", str(out),
                   "--report", str(rep))
    assert proc.returncode == 0, proc.stderr
    report = json.loads(rep.read_text())
    assert report["complementarity"] <= 1e-6
    assert len(report["eps_trace"]) >= 1


def test_csv_float_precision_lossless(tmp_path):
    cfg = small_config(tmp_path)
    out = tmp_path / "u.csv"
    run_cli("solve-nidd", "--config", str(cfg), "--eps", "0.1",
            "--out", str(out))
    from gradcap.cli import read_field_csv
    spec = load_config(cfg)
    fld = read_field_csv(out, spec)
    from gradcap.nidd import solve_nidd
    from gradcap.nidd import SolverOptions
    rep = solve_nidd(spec.problem, 0.1,
                     SolverOptions(**{**spec.solver_options.__dict__}))
    assert np.array_equal(fld.values, rep.solution.values)


def test_worker_cap_env_validation(tmp_path, monkeypatch):
    import os
    cfg = small_config(tmp_path)
    env = dict(os.environ, GRADCAP_THREADS="zero")
    proc = subprocess.run(
        [sys.executable, "-m", "gradcap", "solve-nidd", "--config", str(cfg),
         "--eps", "0.1", "--out", str(tmp_path / "u.csv")],
        capture_output=True, text=True, env=env)
    assert proc.returncode == 2


def test_dump_matrix_flag(tmp_path):
    cfg = small_config(tmp_path)
    mtx = tmp_path / "gamma.mtx"
    proc = run_cli("solve-nidd", "--config", str(cfg), "--eps", "0.1",
                   "--out", str(tmp_path / "u.csv"), "--dump-matrix",
                   str(mtx))
    assert proc.returncode == 0, proc.stderr
    header = mtx.read_text().splitlines()[0]
    assert header.startswith("%%MatrixMarket")


def test_cli_verify_singular_mode(tmp_path):
    cfg_src = json.loads((CONFIGS / "example_1d_control.json").read_text())
    cfg = tmp_path / "ctl.json"
    cfg.write_text(json.dumps(cfg_src))
    out = tmp_path / "u.csv"
    proc = run_cli("solve-hjb", "--config", str(cfg), "--out", str(out))
    assert proc.returncode == 0, proc.stderr
    ver = tmp_path / "ver.json"
    proc2 = run_cli("verify", "--config", str(cfg), "--mode", "singular",
                    "--field", str(out), "--x0", "0.0", "--paths", "400",
                    "--seed", "3", "--rate-controls", "0.2",
                    "--out", str(ver))
    assert proc2.returncode == 0, proc2.stderr
    payload = json.loads(ver.read_text())
    assert payload["all_pass"]
    assert len(payload["entries"]) == 3  # null + two directed rate controls
