import csv
import json
import shutil
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from robust_semigroup import ConfigurationError
from robust_semigroup.cli import main
from robust_semigroup.harness import (
    CheckResult,
    ConvergenceReport,
    ExperimentConfig,
    PropertyReport,
    emit_profile,
    initial_function,
    load_config,
    run_converge,
)
from robust_semigroup.measures import GridSpec

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
QUICK = CONFIGS / "quick.json"


def quick_dict():
    return json.loads(QUICK.read_text())


def write_config(tmp_path, d, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(d))
    return path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


class TestConfig:
    @pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
    def test_shipped_configs_load_and_round_trip(self, path):
        cfg = load_config(path)
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again.to_dict() == cfg.to_dict()
        initial_function(cfg)

    def test_defaults(self):
        cfg = ExperimentConfig.from_dict({})
        assert cfg.grid == GridSpec(1, 8.0, 1025) and (cfg.n_min, cfg.n_max) == (1, 6)
        assert cfg.penalty.is_ball and cfg.penalty.delta == 1.0

    @pytest.mark.parametrize("patch", [
        {"n_max": 13},
        {"n_min": 5, "n_max": 3},
        {"horizon": 0.0},
        {"refine": 0},
        {"penalty": {"kind": "wedge"}},
        {"penalty": {"kind": "power", "c": 1.0}},
        {"penalty": {"kind": "power", "c": 1.0, "q": 1.0}},
        {"grid": {"points": 1}},
        {"model": {"dimension": 2}},
        {"model": {"covariance": [[-1.0]]}},
        {"model": {"jumps": {"intensity": 1.0, "atoms": [0.5]}}},
    ])
    def test_invalid_configs(self, patch):
        d = quick_dict()
        d.update(patch)
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_dict(d)

    def test_unreadable_and_malformed_files(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_config(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigurationError):
            load_config(bad)

    def test_overrides(self):
        cfg = load_config(QUICK).with_overrides(level=3, delta=0.5, grid_n=129, horizon=0.5, out="elsewhere")
        assert (cfg.n_min, cfg.n_max) == (3, 3)
        assert cfg.penalty.delta == 0.5 and cfg.grid.points == 129
        assert cfg.horizon == 0.5 and cfg.output_dir == "elsewhere"

    def test_delta_override_needs_ball(self):
        with pytest.raises(ConfigurationError):
            load_config(CONFIGS / "gaussian-power.json").with_overrides(delta=1.0)


class TestInitialFunction:
    @pytest.mark.parametrize("initial", [
        {"name": "gaussian-bump", "center": 1.0, "width": 0.5},
        {"name": "tent", "center": -1.0, "width": 2.0},
        {"name": "clipped-identity", "clip": 2.0},
    ])
    def test_presets_with_gradients(self, initial):
        cfg = ExperimentConfig.from_dict({**quick_dict(), "initial": initial})
        f, grad = initial_function(cfg, with_gradient=True)
        h = f.spec.h
        g = grad[..., 0]
        fd = np.gradient(f.values, h)
        # skip the nodes next to a kink, where the analytic slope jumps
        jump = np.abs(np.diff(g)) > 0.1
        kink = np.zeros(g.shape, dtype=bool)
        kink[:-1] |= jump
        kink[1:] |= jump
        kink = np.convolve(kink, np.ones(3), mode="same") > 0
        np.testing.assert_allclose(g[~kink], fd[~kink], atol=2 * h)

    def test_custom_values(self):
        spec = GridSpec(1, 8.0, 257)
        vals = np.exp(-spec.axis**2).tolist()
        cfg = ExperimentConfig.from_dict({**quick_dict(), "initial": {"name": "custom", "values": vals}})
        np.testing.assert_array_equal(initial_function(cfg).values, vals)

    def test_custom_values_wrong_shape(self):
        cfg = ExperimentConfig.from_dict({**quick_dict(), "initial": {"name": "custom", "values": [0.0, 1.0]}})
        with pytest.raises(ConfigurationError):
            initial_function(cfg)

    def test_boundary_is_flagged(self):
        cfg = ExperimentConfig.from_dict({**quick_dict(), "initial": {"name": "gaussian-bump", "width": 3.0}})
        with pytest.raises(ConfigurationError):
            initial_function(cfg)

    def test_unknown_preset(self):
        cfg = ExperimentConfig.from_dict({**quick_dict(), "initial": {"name": "staircase"}})
        with pytest.raises(ConfigurationError):
            initial_function(cfg)


class TestEmitProfile:
    def test_empty_reports_are_header_only(self, tmp_path):
        a = emit_profile(ConvergenceReport(), tmp_path / "c.csv")
        b = emit_profile(PropertyReport(), tmp_path / "p.csv")
        assert a.read_bytes() == b"level,n_steps,interlevel_gap,gap_to_pde,runtime_ms\n"
        assert b.read_bytes() == b"check_name,violation,tolerance,pass\n"

    def test_property_rows(self, tmp_path):
        rep = PropertyReport((CheckResult("contraction", 0.0, 1e-9, True), CheckResult("x", 0.5, 0.1, False)))
        rows = read_csv(emit_profile(rep, tmp_path / "sub" / "p.csv"))
        assert rows[1:] == [["contraction", "0.0", "1e-09", "true"], ["x", "0.5", "0.1", "false"]]

    def test_runtime_column_only_on_request(self, tmp_path):
        rep = ConvergenceReport((1, 2), (2, 4), (None, 0.1), (0.3, 0.2), (12.5, 30.0))
        rows = read_csv(emit_profile(rep, tmp_path / "c.csv"))
        assert rows[1] == ["1", "2", "", "0.3", ""]
        timed = replace(rep, record_runtime=True)
        rows = read_csv(emit_profile(timed, tmp_path / "t.csv"))
        assert rows[2] == ["2", "4", "0.1", "0.2", "30.0"]

    def test_unknown_report_type(self, tmp_path):
        with pytest.raises(TypeError):
            emit_profile(object(), tmp_path / "x.csv")

    def test_io_error_names_the_path(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(OSError, match="file"):
            emit_profile(PropertyReport(), blocker / "x.csv")


class TestConverge:
    def test_zero_initial_function_gives_zero_gaps(self):
        spec = GridSpec(1, 8.0, 129)
        cfg = ExperimentConfig.from_dict({**quick_dict(), "grid": {"points": 129},
                                          "initial": {"name": "custom", "values": [0.0] * spec.points}})
        rep = run_converge(cfg)
        assert all(g == 0.0 for g in rep.gaps_to_pde)
        assert all(g == 0.0 for g in rep.interlevel_gaps[1:])
        assert rep.passed

    def test_quick_report_shape(self):
        rep = run_converge(load_config(QUICK))
        assert rep.levels == (1, 2, 3, 4) and rep.n_steps == (2, 4, 8, 16)
        assert rep.interlevel_gaps[0] is None and all(g >= 0 for g in rep.interlevel_gaps[1:])
        assert rep.passed, rep.checks

    def test_classical_final_gap(self):
        cfg = load_config(CONFIGS / "gaussian-classical.json").with_overrides(grid_n=513)
        rep = run_converge(cfg)
        assert rep.final_gap <= 2e-3 and rep.passed


class TestCli:
    def test_converge_and_determinism(self, tmp_path, capsys):
        for run in ("a", "b"):
            assert main(["converge", "--config", str(QUICK), "--out", str(tmp_path / run)]) == 0
        assert "final gap to PDE" in capsys.readouterr().out
        a, b = (tmp_path / r / "converge.csv" for r in "ab")
        assert a.read_bytes() == b.read_bytes()
        rows = read_csv(a)
        assert rows[0] == ["level", "n_steps", "interlevel_gap", "gap_to_pde", "runtime_ms"] and len(rows) == 5

    def test_timings_flag_fills_runtime(self, tmp_path):
        assert main(["converge", "--config", str(QUICK), "--out", str(tmp_path), "--level", "2", "--timings"]) == 0
        rows = read_csv(tmp_path / "converge.csv")
        assert len(rows) == 2 and float(rows[1][4]) > 0

    def test_check(self, tmp_path, capsys):
        assert main(["check", "--config", str(QUICK), "--out", str(tmp_path)]) == 0
        rows = read_csv(tmp_path / "checks.csv")
        assert rows[0] == ["check_name", "violation", "tolerance", "pass"]
        assert {r[0] for r in rows[1:]} >= {"contraction", "key_inequality", "dual_equals_primal"}
        assert all(r[3] == "true" for r in rows[1:])
        assert "pass" in capsys.readouterr().out

    def test_pde_and_step(self, tmp_path):
        assert main(["pde", "--config", str(QUICK), "--out", str(tmp_path)]) == 0
        assert main(["step", "--config", str(QUICK), "--out", str(tmp_path), "--level", "2"]) == 0
        pde = read_csv(tmp_path / "pde.csv")
        stp = read_csv(tmp_path / "step_level2.csv")
        assert pde[0] == ["x", "u"] and stp[0] == ["x", "u"]
        assert len(pde) == len(stp) == 258
        u, v = (np.array([float(r[1]) for r in t[1:]]) for t in (pde, stp))
        assert np.abs(u - v).max() < 0.2

    def test_failing_check_exits_one(self, tmp_path):
        d = {**quick_dict(), "gap_tolerance": 1e-9}
        assert main(["converge", "--config", str(write_config(tmp_path, d)), "--out", str(tmp_path)]) == 1

    def test_config_errors_exit_two(self, tmp_path, capsys):
        assert main(["converge", "--config", str(tmp_path / "missing.json")]) == 2
        d = {**quick_dict(), "n_max": 20}
        assert main(["check", "--config", str(write_config(tmp_path, d))]) == 2
        assert main(["pde", "--config", str(QUICK), "--grid-n", "1"]) == 2
        assert "error" in capsys.readouterr().err

    def test_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["converge"])
        assert exc.value.code == 2

    def test_plane_config_step(self, tmp_path):
        cfg = CONFIGS / "plane-ball.json"
        assert main(["step", "--config", str(cfg), "--out", str(tmp_path), "--level", "1", "--grid-n", "25"]) == 0
        rows = read_csv(tmp_path / "step_level1.csv")
        assert rows[0] == ["x", "y", "u"] and len(rows) == 25 * 25 + 1
        shutil.rmtree(tmp_path)


def test_custom_values_are_interpolated_on_the_refined_grid():
    spec = GridSpec(1, 8.0, 129)
    vals = np.maximum(0.0, 1.0 - np.abs(spec.axis) / 2)
    cfg = ExperimentConfig.from_dict({**quick_dict(), "grid": {"points": 129},
                                      "initial": {"name": "custom", "values": vals.tolist()}})
    fine = initial_function(cfg, spec.refined())
    np.testing.assert_allclose(fine.values, np.maximum(0.0, 1.0 - np.abs(spec.refined().axis) / 2), atol=1e-15)
