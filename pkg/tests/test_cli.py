"""Command-line front end: preset values and config merging, artifact
writing per subcommand, JSON verdict reports with exit codes, and the
committed golden regression files."""

import json
import math
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from smfsim.cli import PRESETS, emit_config, main, parse_config
from smfsim.ensemble import CSV_HEADER, ObservableSeries, read_csv, write_csv
from smfsim.errors import ConfigurationError

GOLDEN_DIR = Path(__file__).parent / "goldens"

SUBCOMMANDS = ("simulate", "sse", "kernels", "tcl2", "oracle",
               "check-exactness", "check-moments", "compare", "make-goldens")


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def ok(result):
    assert result.exit_code == 0, result.output
    return result


class TestPresets:
    def test_round_trip_every_preset(self):
        for name in PRESETS:
            cfg = parse_config(preset=name)
            assert parse_config(source=emit_config(cfg)) == cfg

    def test_fig1_weak_values(self):
        cfg = parse_config(preset="fig1_weak")
        assert cfg.params.omega0 == 1.0
        assert cfg.params.epsilon == 0.0
        assert cfg.params.initial_bloch == (0.0, 0.0, 1.0)
        assert math.pi * cfg.bath.spectral.eta == pytest.approx(0.2, rel=1e-12)
        assert cfg.bath.spectral.delta_c == 5.0
        assert cfg.bath.kT == 2.0
        assert cfg.integrator.dt == 1.2e-3
        assert cfg.integrator.t_max == pytest.approx(10.0008, rel=1e-12)
        assert cfg.integrator.variant == "complex"
        assert cfg.n_traj == 20000

    def test_fig1_strong_values(self):
        cfg = parse_config(preset="fig1_strong")
        assert math.pi * cfg.bath.spectral.eta == pytest.approx(4.0, rel=1e-12)
        assert cfg.integrator.dt == 2.2e-4
        assert cfg.integrator.t_max == pytest.approx(10.0001, rel=1e-12)
        assert cfg.output_stride == 40

    def test_fig2_grid(self):
        corners = {"fig2_tl": (4.0, 0.2), "fig2_tr": (20.0, 0.2),
                   "fig2_bl": (4.0, 1.0), "fig2_br": (20.0, 1.0)}
        for name, (kt, pi_eta) in corners.items():
            cfg = parse_config(preset=name)
            assert cfg.params.omega0 == 0.0
            assert cfg.params.epsilon == 1.0
            assert cfg.params.initial_bloch == (1.0, 0.0, 0.0)
            assert cfg.bath.kT == kt
            assert math.pi * cfg.bath.spectral.eta == pytest.approx(
                pi_eta, rel=1e-12)
            assert cfg.bath.spectral.delta_c == 10.0
            assert cfg.integrator.dt == 2.5e-4
            assert cfg.integrator.t_max == 4.0
            assert cfg.n_traj == 40000

    def test_unknown_preset_rejected(self):
        with pytest.raises(ConfigurationError, match="nosuch"):
            parse_config(preset="nosuch")

    def test_overrides_win_over_preset_and_file(self):
        cfg = parse_config(source={"preset": "fig1_weak", "n_traj": 5},
                           overrides={"n_traj": 9, "dt": 6e-4,
                                      "master_seed": 42, "variant": "real"})
        assert cfg.n_traj == 9
        assert cfg.integrator.dt == 6e-4
        assert cfg.integrator.variant == "real"
        assert cfg.master_seed == 42

    def test_unknown_override_rejected(self):
        with pytest.raises(ConfigurationError, match="bogus"):
            parse_config(preset="fig1_weak", overrides={"bogus": 1})

    def test_preset_in_file_and_flag_conflict(self):
        with pytest.raises(ConfigurationError, match="both"):
            parse_config(source={"preset": "fig1_weak"}, preset="fig2_tl")

    def test_eta_zero_selects_no_bath(self):
        cfg = parse_config(source={"preset": "fig1_weak",
                                   "bath": {"eta": 0}})
        assert cfg.bath is None
        explicit = parse_config(source={"preset": "fig1_weak", "bath": None})
        assert explicit.bath is None


class TestRunCommands:
    def test_simulate_writes_artifacts(self, tmp_path):
        result = ok(invoke("simulate", "--preset", "fig1_weak",
                           "--n-traj", 8, "--t-max", 0.06,
                           "--output-stride", 10, "--workers", 1,
                           "--seed", 77, "-o", tmp_path))
        assert "8 trajectories" in result.output
        series = read_csv(tmp_path / "fig1_weak.csv")
        assert series.times[0] == 0.0
        assert series.times[-1] == pytest.approx(0.06)
        sidecar = json.loads((tmp_path / "fig1_weak.json").read_text())
        assert sidecar["command"] == "simulate"
        assert sidecar["n_divergent"] == 0
        assert sidecar["divergence_threshold"] == 1e-3
        assert sidecar["config"]["master_seed"] == 77
        assert sidecar["config"]["n_traj"] == 8
        assert parse_config(source=sidecar["config"]) is not None

    def test_simulate_decoupled_matches_free_evolution(self, tmp_path):
        config = tmp_path / "free.json"
        config.write_text(json.dumps({"preset": "fig1_weak", "bath": None,
                                      "n_traj": 4, "output_stride": 50}))
        ok(invoke("simulate", "--config", config, "--t-max", 0.6,
                  "-o", tmp_path))
        series = read_csv(tmp_path / "free.csv")
        t = series.times
        np.testing.assert_allclose(series.means[2].real, np.cos(2 * t),
                                   atol=1e-4)
        np.testing.assert_allclose(series.means[1].real, -np.sin(2 * t),
                                   atol=1e-4)
        assert np.all(series.stderrs == 0.0)

    def test_sse_artifact_suffix(self, tmp_path):
        ok(invoke("sse", "--preset", "fig1_weak", "--n-traj", 8,
                  "--t-max", 0.06, "--output-stride", 10, "--workers", 1,
                  "-o", tmp_path))
        assert (tmp_path / "fig1_weak_sse.csv").exists()
        sidecar = json.loads((tmp_path / "fig1_weak_sse.json").read_text())
        assert sidecar["command"] == "sse"

    def test_unknown_config_key_fails_with_key_name(self, tmp_path):
        config = tmp_path / "bad.json"
        config.write_text(json.dumps({"preset": "fig1_weak",
                                      "trajectory_count": 9}))
        result = invoke("simulate", "--config", config, "-o", tmp_path)
        assert result.exit_code == 1
        assert "trajectory_count" in result.output

    def test_invalid_n_traj_fails(self):
        result = invoke("simulate", "--preset", "fig1_weak", "--n-traj", -3)
        assert result.exit_code == 1
        assert "n_traj" in result.output

    def test_divergence_threshold_flag_enforced(self, tmp_path):
        result = invoke("simulate", "--preset", "fig1_weak", "--n-traj", 256,
                        "--dt", 2e-3, "--t-max", 1.2, "--output-stride", 100,
                        "--workers", 1, "--divergence-threshold", 0.0,
                        "-o", tmp_path)
        assert result.exit_code == 1
        assert "lost" in result.output

    def test_kernels_matches_closed_form(self, tmp_path):
        ok(invoke("kernels", "--preset", "fig1_weak", "--t-max", 2.0,
                  "--dt", 0.04, "-o", tmp_path))
        rows = np.loadtxt(tmp_path / "fig1_weak_kernels.csv", delimiter=",",
                          skiprows=1)
        tau, d = rows[:, 0], rows[:, 1]
        assert d[0] == 0.0
        np.testing.assert_allclose(
            d[1:], 0.2 * 5.0**2 * np.exp(-5.0 * tau[1:]), rtol=1e-8)

    def test_kernels_requires_bath(self, tmp_path):
        config = tmp_path / "free.json"
        config.write_text(json.dumps({"preset": "fig1_weak", "bath": None}))
        result = invoke("kernels", "--config", config, "-o", tmp_path)
        assert result.exit_code == 1
        assert "bath" in result.output

    def test_tcl2_writes_schema_csv(self, tmp_path):
        ok(invoke("tcl2", "--preset", "fig2_tl", "--t-max", 0.5,
                  "--output-stride", 200, "-o", tmp_path))
        series = read_csv(tmp_path / "fig2_tl_tcl2.csv")
        assert series.times[-1] == pytest.approx(0.5)
        assert np.all(series.stderrs == 0.0)
        assert series.means[0, 0] == pytest.approx(1.0)


class TestOracle:
    def test_writes_exact_and_scheme_files(self, tmp_path):
        ok(invoke("oracle", "--t-max", 0.1, "--n-traj", 64,
                  "--scheme", "plain", "--output-stride", 10,
                  "--seed", 4, "-o", tmp_path))
        exact = read_csv(tmp_path / "oracle_exact.csv")
        assert np.all(exact.stderrs == 0.0)
        sampled = read_csv(tmp_path / "oracle_plain.csv")
        assert np.any(sampled.stderrs > 0.0)
        assert len(sampled.times) == len(exact.times)
        provenance = json.loads((tmp_path / "oracle_plain.json").read_text())
        assert provenance["scheme"] == "plain"
        assert provenance["modes"] == [[1.1, 0.25, 8], [1.5, 0.3, 8]]
        assert "n_divergent" in provenance

    def test_rejects_malformed_mode(self, tmp_path):
        result = invoke("oracle", "--mode", "1.0,0.3", "-o", tmp_path)
        assert result.exit_code == 1
        assert "--mode" in result.output


class TestCheckCommands:
    def test_check_exactness_verdicts(self, tmp_path):
        result = ok(invoke("check-exactness", "--n-samples", 20000,
                           "-o", tmp_path))
        doc = json.loads(result.output)
        assert doc["passed"] is True
        names = {v["test"] for v in doc["verdicts"]}
        assert names == {"one_step_mean[smf]", "one_step_mean[plain]",
                         "centered_stderr_not_larger", "lambda_growth[smf]",
                         "lambda_growth[plain]"}
        for verdict in doc["verdicts"]:
            assert verdict["pass"] is True
            assert verdict["statistic"] < verdict["threshold"]
        on_disk = json.loads((tmp_path / "check_exactness.json").read_text())
        assert on_disk == doc

    def test_check_moments_passes(self):
        result = ok(invoke("check-moments", "--t-max", 2e-3))
        doc = json.loads(result.output)
        assert doc["passed"] is True
        assert doc["verdicts"][0]["statistic"] < 1e-6

    def test_check_moments_fails_on_coarse_step(self):
        result = invoke("check-moments", "--kappa", 2.0, "--dt", 1e-3,
                        "--t-max", 1e-2)
        assert result.exit_code == 1
        doc = json.loads(result.output)
        assert doc["passed"] is False
        assert doc["verdicts"][0]["statistic"] > 1e-6


class TestCompare:
    def _write_pair(self, tmp_path, shift):
        times = np.linspace(0.0, 1.0, 5)
        means = np.stack([np.cos(times), np.sin(times),
                          np.zeros_like(times)]).astype(complex)
        errs = np.full((3, len(times)), 0.01)
        write_csv(tmp_path / "a.csv",
                  ObservableSeries(times=times, means=means, stderrs=errs))
        write_csv(tmp_path / "b.csv",
                  ObservableSeries(times=times, means=means + shift,
                                   stderrs=errs))

    def test_verdict_and_exit_codes(self, tmp_path):
        self._write_pair(tmp_path, shift=0.005)
        passing = ok(invoke("compare", tmp_path / "a.csv",
                            tmp_path / "b.csv", "--tol", 0.01))
        doc = json.loads(passing.output)
        assert doc["passed"] is True
        assert doc["max_abs_deviation"] == pytest.approx(0.005)
        failing = invoke("compare", tmp_path / "a.csv", tmp_path / "b.csv",
                         "--tol", 1e-3)
        assert failing.exit_code == 1
        assert json.loads(failing.output)["passed"] is False

    def test_report_only_without_tolerance(self, tmp_path):
        self._write_pair(tmp_path, shift=0.5)
        result = ok(invoke("compare", tmp_path / "a.csv", tmp_path / "b.csv"))
        doc = json.loads(result.output)
        assert doc["threshold"] is None
        assert doc["passed"] is True


class TestGoldens:
    def test_make_goldens_reproduces_committed_files(self, tmp_path):
        ok(invoke("make-goldens", "-o", tmp_path))
        names = ("kernels_fig1_weak.csv", "tcl2_fig2_tl.csv",
                 "ensemble_fig1_weak_short.csv")
        for name in names:
            fresh = (tmp_path / name).read_bytes()
            committed = (GOLDEN_DIR / name).read_bytes()
            assert fresh == committed, f"{name} drifted from the committed golden"


def test_help_lists_every_subcommand():
    result = ok(invoke("--help"))
    for name in SUBCOMMANDS:
        assert name in result.output
