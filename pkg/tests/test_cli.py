import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from openbath import cli
from openbath.expfit import ExponentialBath, load_exponential_bath, save_exponential_bath
from openbath.io import read_csv

SPIN_BOSON = {
    "preset": "spin_boson",
    "decomposition": {"params": {"tol": 1e-6}, "sampling": {"n_samples": 300, "t_max": 30.0}},
    "t_grid": {"t_max": 4.0, "n_points": 9},
}

HEAT = {
    "preset": "heat_transport",
    "decomposition": {"per_bath": [{"method": "matsubara", "params": {"n": 20}},
                                   {"method": "matsubara", "params": {"n": 20}}]},
    "t_grid": {"t_max": 6.0, "n_points": 7},
    "heat": {"fd_points": 2},
}

UNDERDAMPED = {
    "baths": [{"label": "ud", "temperature": 0.5,
               "model": {"type": "underdamped", "alpha": 1.0, "gamma_width": 1.0, "omega_0": 1.5}}],
    "decomposition": {"method": "espira", "params": {"tol": 1e-8},
                      "sampling": {"n_samples": 400, "t_max": 40.0}, "tolerance": 1e-5},
    "bench": {"n_times": 3, "n_pairs": 2, "t_max": 5.0, "omega_max": 2.0, "eps": 1e-7},
}


def run(tmp_path, cfg, command, name="cfg.yaml", out="out", extra=()):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return cli.main([command, "--config", str(path), "--out", str(tmp_path / out), *extra])


def test_decompose_writes_interchange_and_report(tmp_path):
    assert run(tmp_path, UNDERDAMPED, "decompose") == 0
    eb = load_exponential_bath(tmp_path / "out" / "ud.eb.txt")
    assert len(eb) > 0
    rep = json.loads((tmp_path / "out" / "decomposition_report.json").read_text())["baths"][0]
    assert rep["within_tolerance"] and rep["rmse_time_relative"] < 1e-5
    assert 0 <= rep["detailed_balance_score"] < 1
    lines = [l for l in (tmp_path / "out" / "decomposition_report.csv").read_text().splitlines()
             if not l.startswith("#")]
    assert lines[0].startswith("bath,method,m,") and lines[1].startswith("ud,espira,")


def test_matsubara_term_count_and_tolerance_exit(tmp_path):
    cfg = {**UNDERDAMPED, "decomposition": {"method": "matsubara", "params": {"n": 100}, "tolerance": 1e-8}}
    assert run(tmp_path, cfg, "decompose") == cli.EXIT_TOLERANCE
    assert len(load_exponential_bath(tmp_path / "out" / "ud.eb.txt")) == 102


def test_unknown_key_is_config_error(tmp_path, capsys):
    cfg = {**UNDERDAMPED, "decompositon": {}}
    assert run(tmp_path, cfg, "decompose") == cli.EXIT_CONFIG
    assert "unknown key 'decompositon'" in capsys.readouterr().err


@pytest.mark.parametrize("text", ["baths: [", "- just a list"])
def test_unreadable_config(tmp_path, text):
    p = tmp_path / "bad.yaml"
    p.write_text(text)
    assert cli.main(["decompose", "--config", str(p), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert cli.main(["decompose", "--config", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG
    assert cli.main(["decompose"]) == cli.EXIT_CONFIG


def test_numerical_failure_exit(tmp_path):
    cfg = {**UNDERDAMPED, "decomposition": {"method": "esprit", "params": {"m": 300},
                                            "sampling": {"n_samples": 100, "t_max": 10.0}}}
    assert run(tmp_path, cfg, "decompose") == cli.EXIT_NUMERICAL


def test_bench_rates_outputs(tmp_path):
    assert run(tmp_path, UNDERDAMPED, "bench-rates") == 0
    summary = json.loads((tmp_path / "out" / "bench_rates.json").read_text())
    assert summary["mean_relative_error_gamma"] < 1e-3 and summary["time_ratio"] > 1
    _, header, data = read_csv(tmp_path / "out" / "bench_rates.csv")
    assert data.shape == (6, len(header))


def test_bench_rates_zero_term_bath(tmp_path):
    save_exponential_bath(ExponentialBath([], []), tmp_path / "empty.txt")
    cfg = {**UNDERDAMPED, "decomposition": {"method": "file", "path": str(tmp_path / "empty.txt")}}
    assert run(tmp_path, cfg, "bench-rates") == 0
    summary = json.loads((tmp_path / "out" / "bench_rates.json").read_text())
    assert summary["n_terms"] == 0 and summary["relative_error_undefined"] is True
    assert summary["mean_relative_error_gamma"] is None


def test_simulate_outputs_are_deterministic(tmp_path):
    assert run(tmp_path, SPIN_BOSON, "simulate", out="a") == 0
    assert run(tmp_path, SPIN_BOSON, "simulate", out="b") == 0
    for name in ("states_cumulant.csv", "observables_redfield.csv", "fidelity.csv", "bath.eb.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    for m in ("cumulant", "redfield", "gkls_global"):
        assert summary["methods"][m]["trace_error"] < 1e-10
    _, header, data = read_csv(tmp_path / "a" / "states_cumulant.csv")
    assert header[1:3] == ["re_rho_00", "im_rho_00"] and data.shape == (9, 9)
    np.testing.assert_allclose(data[0, 1:], [0.5, 0, 0.5, 0, 0.5, 0, 0.5, 0], atol=1e-12)


def test_simulate_svg_and_preset_flag(tmp_path):
    cfg = {**SPIN_BOSON, "outputs": {"formats": ["csv", "json", "svg"]}, "methods": ["gkls_global"]}
    assert run(tmp_path, cfg, "simulate") == 0
    assert (tmp_path / "out" / "sigma_z.svg").exists()
    code = cli.main(["simulate", "--preset", "spin_boson", "--config", str(tmp_path / "cfg.yaml"),
                     "--out", str(tmp_path / "p")])
    assert code == 0


def test_rwa_methods_need_two_level_system(tmp_path):
    cfg = {**SPIN_BOSON, "methods": ["tcl2"]}
    assert run(tmp_path, cfg, "simulate") == cli.EXIT_CONFIG


def test_heat_outputs(tmp_path):
    assert run(tmp_path, {**HEAT, "methods": ["redfield", "redfield_no_ls", "gkls_global", "gkls_local"]},
               "heat") == 0
    summary = json.loads((tmp_path / "out" / "heat_summary.json").read_text())
    checks = summary["checks"]
    assert checks["redfield_initial_current_ratio"]["passed"]
    assert checks["gkls_global_initial_current_ratio"]["passed"]
    assert checks["gkls_global_lamb_shift_heat"]["passed"]
    meta, header, data = read_csv(tmp_path / "out" / "heat_gkls_global.csv")
    assert header[-1] == "J_total [energy^2]"
    np.testing.assert_allclose(data[:, -1], data[:, 1:-1].sum(axis=1), atol=1e-15)
    assert meta["sign"].startswith("J > 0")


def test_heat_needs_heat_method(tmp_path):
    assert run(tmp_path, {**HEAT, "methods": ["tcl2"]}, "heat") == cli.EXIT_CONFIG


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "openbath.cli", "decompose", "--preset", "nope"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "invalid choice" in proc.stderr
