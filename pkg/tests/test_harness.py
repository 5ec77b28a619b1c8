import dataclasses
import json

import numpy as np
import pytest

import pta
from pta import (ConfigurationError, RunReport, error_percent, fit_cubic,
                 read_csv, speedup, write_csv)
from pta.cli import parse_config_file, run_cli
from pta.report import SpeedupResult


def test_error_percent_examples():
    val, flag = error_percent(1.007, 1.0)
    assert val == pytest.approx(0.7) and not flag
    val, flag = error_percent(0.42, 0.42)
    assert val == 0.0 and not flag
    val, flag = error_percent(0.3, 0.0)
    assert val == pytest.approx(0.3) and flag
    val, flag = error_percent(0.3, 1e-15, floor=1e-12)
    assert flag


def fake_report(kind, timings, grid=None, values=None, names=("a",)):
    grid = np.array([0.0, 1.0]) if grid is None else grid
    values = np.zeros((len(grid), len(names))) if values is None else values
    return RunReport(model="fake", kind=kind, config={}, names=list(names),
                     grid=grid, values=values, steps=[], timings=timings)


def test_speedup_equal_timings():
    fine = fake_report("fine", {"fine_total_s": 5.0, "fine_per_step_s": 1.0})
    run = fake_report("pta", {"init_s": 0.0, "step_s": [1.0] * 5})
    s = speedup(fine, run)
    assert s.exact == pytest.approx(1.0) and s.asymptotic == pytest.approx(1.0)


def test_speedup_per_jump_ratio():
    fine = fake_report("fine", {"fine_total_s": 8314.0, "fine_per_step_s": 8314.0})
    run = fake_report("pta", {"init_s": 10.0, "step_s": [62.0]})
    s = speedup(fine, run)
    assert s.asymptotic == pytest.approx(134.0, rel=1e-2)
    assert s.exact == pytest.approx(8314.0 / 72.0, rel=1e-12)
    assert isinstance(s, SpeedupResult)


def test_fit_cubic_recovers_known_polynomial():
    eps = np.array([1e-5, 5e-6, 2e-6, 1e-6, 5e-7])
    s = 74.0 - 3.7e9 * eps
    coeffs = fit_cubic(eps, s)
    assert coeffs[0] == pytest.approx(74.0, rel=1e-6)
    assert coeffs[1] == pytest.approx(-3.7e9, rel=1e-6)
    assert abs(coeffs[2]) < 1e-3 * abs(coeffs[1] / eps.max())


def test_fit_cubic_exact_interpolation_four_points():
    eps = np.array([1e-5, 5e-6, 2e-6, 1e-6])
    truth = np.array([3.0, -2e5, 4e10, -7e14])
    s = truth[0] + truth[1] * eps + truth[2] * eps ** 2 + truth[3] * eps ** 3
    coeffs = fit_cubic(eps, s)
    np.testing.assert_allclose(coeffs, truth, rtol=1e-6)


def test_fit_cubic_requires_four_distinct():
    with pytest.raises(ConfigurationError):
        fit_cubic([1e-5, 1e-5, 2e-6, 2e-6], [1, 1, 2, 2])


def test_csv_round_trip_and_determinism(tmp_path, exi_runs):
    rep, fine = exi_runs
    p1 = tmp_path / "a.csv"
    p2 = tmp_path / "b.csv"
    text1 = write_csv(p1, rep, fine=fine)
    text2 = write_csv(p2, rep, fine=fine)
    assert text1 == text2
    header, cols = read_csv(p1)
    np.testing.assert_array_equal(cols["t"], rep.grid)
    for j, name in enumerate(rep.names):
        np.testing.assert_array_equal(cols[name + "_pta"], rep.values[:, j])
        np.testing.assert_array_equal(cols[name + "_fine"],
                                      fine.values[:, j])


def test_csv_grid_mismatch_rejected(tmp_path, exi_runs):
    rep, fine = exi_runs
    other = dataclasses.replace(fine, grid=fine.grid + 1.0)
    with pytest.raises(pta.ContractError):
        write_csv(tmp_path / "x.csv", rep, fine=other)


def test_timing_accounting_nonnegative(exi_runs):
    rep, fine = exi_runs
    assert rep.total_wall_s >= sum(rep.timings["step_s"])
    assert all(w >= 0 for w in rep.timings["step_s"])
    assert fine.total_wall_s >= 0


def test_config_file_parser(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nt_end = 0.004\ntol1= 2e-2 # inline\n\n",
                   encoding="utf-8")
    values = parse_config_file(cfg)
    assert values == {"t_end": "0.004", "tol1": "2e-2"}
    bad = tmp_path / "bad.cfg"
    bad.write_text("just words\n", encoding="utf-8")
    with pytest.raises(ConfigurationError):
        parse_config_file(bad)


def test_cli_run_pta_and_exit_codes(tmp_path):
    cfg = tmp_path / "short.cfg"
    cfg.write_text("t_end = 0.004\n", encoding="utf-8")
    out = tmp_path / "out"
    assert run_cli(["run-pta", "rotating_planes", "--config", str(cfg),
                    "--out", str(out)]) == 0
    assert (out / "results.csv").exists()
    meta = json.loads((out / "run.json").read_text())
    assert meta["model"] == "rotating_planes"
    assert meta["config"]["t_end"] == 0.004
    # unknown config key -> configuration error
    cfg.write_text("not_a_key = 1\n", encoding="utf-8")
    assert run_cli(["run-pta", "rotating_planes", "--config", str(cfg),
                    "--out", str(out)]) == 2
    assert run_cli(["run-pta", "not_a_model"]) == 2


def test_cli_compare_emits_error_columns(tmp_path):
    cfg = tmp_path / "short.cfg"
    cfg.write_text("t_end = 0.004\n", encoding="utf-8")
    out = tmp_path / "cmp"
    assert run_cli(["compare", "rotating_planes", "--config", str(cfg),
                    "--out", str(out)]) == 0
    header, cols = read_csv(out / "compare.csv")
    assert "w1_pta" in header and "w1_fine" in header and "w1_err_pct" in header
    assert "jump_flag" in header
    w_err = np.nanmax(np.abs(cols["w1_err_pct"]))
    assert w_err < 2.0


def test_cli_oracle_and_power_balance(tmp_path):
    out = tmp_path / "oracle"
    assert run_cli(["oracle", "springs_case2", "--out", str(out)]) == 0
    assert (out / "oracle.csv").exists() and (out / "eigenvalues.csv").exists()
    assert run_cli(["oracle", "relaxation", "--out", str(out)]) == 0
    out2 = tmp_path / "power"
    assert run_cli(["power-balance", "springs_case1", "--out", str(out2)]) == 0
    header, cols = read_csv(out2 / "power_balance.csv")
    b = pta.build_model("springs_case1")
    target = b.params.eta * b.params.c2 ** 2
    np.testing.assert_allclose(cols["dissipation"], target, rtol=0.02)
    assert run_cli(["power-balance", "rotating_planes", "--out", str(out2)]) == 2


def test_cli_sweep_h(tmp_path):
    cfg = tmp_path / "short.cfg"
    cfg.write_text("t_end = 0.008\n", encoding="utf-8")
    out = tmp_path / "sweep"
    assert run_cli(["sweep-h", "rotating_planes", "--config", str(cfg),
                    "--h", "0.004,0.002", "--out", str(out)]) == 0
    header, cols = read_csv(out / "sweep_h.csv")
    assert list(cols["h"]) == [0.004, 0.002]


def test_cli_sweep_eps(tmp_path):
    out = tmp_path / "sweep"
    assert run_cli(["sweep-eps", "rotating_planes",
                    "--eps", "1e-5,5e-6", "--out", str(out)]) == 0
    header, cols = read_csv(out / "sweep_eps.csv")
    assert all(s > 0 for s in cols["s_asymptotic"])
