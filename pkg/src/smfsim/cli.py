"""Command-line front end: declarative run configs with figure presets,
subcommand dispatch over the solvers and validation checks, and CSV/JSON
artifact output.

Units are natural throughout (hbar = 1): the fig1 presets set omega0 = 1 and
express everything in its units; the fig2 presets set epsilon = 1 instead
(omega0 = 0 there).  A config document mirrors RunConfig as nested JSON; a
top-level "preset" key expands to one of the named parameter sets with the
remaining keys merged over it, and command-line flags override both.  Setting
"bath" to null, or eta to 0, runs the decoupled (deterministic) limit.
"""

from __future__ import annotations

import copy
import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .engine import SpinBosonParams
from .ensemble import (
    ObservableSeries,
    RunConfig,
    compare_runs,
    config_from_dict,
    config_to_dict,
    read_csv,
    run_ensemble,
    write_csv,
    write_sidecar,
)
from .errors import ConfigurationError, DivergenceError, TruncationError
from .kernels import build_kernel_table
from .reference import (
    TinyBathSpec,
    lambda_stat_growth_check,
    one_step_mean_check,
    single_mode_moment_check,
    tcl2_run,
    tiny_bath_exact,
    tiny_bath_smf,
)

_FIG2_BASE = {
    "params": {"omega0": 0.0, "epsilon": 1.0, "initial_bloch": [1.0, 0.0, 0.0]},
    "integrator": {"dt": 2.5e-4, "t_max": 4.0, "variant": "complex",
                   "deterministic_order": "heun",
                   "convolution_mode": "recursion"},
    "n_traj": 40000,
    "master_seed": 0,
    "output_stride": 16,
    "workers": 0,
}

# Figure parameter sets in natural units.  fig1: omega0 = 1, bath cutoff
# delta_c = 5, kT = 2, initial sigma_z = +1; weak coupling pi*eta = 0.2,
# strong pi*eta = 4 with the finer step.  fig2: epsilon = 1, omega0 = 0,
# delta_c = 10, initial sigma_x = +1, over the (kT, pi*eta) grid
# {4, 20} x {0.2, 1.0}.  t_max is the smallest step multiple covering the
# figure windows (10 in units of 1/omega0, resp. 4 in units of 1/epsilon).
PRESETS = {
    "fig1_weak": {
        "params": {"omega0": 1.0, "epsilon": 0.0,
                   "initial_bloch": [0.0, 0.0, 1.0]},
        "bath": {"eta": 0.2 / math.pi, "delta_c": 5.0, "kT": 2.0},
        "integrator": {"dt": 1.2e-3, "t_max": 8334 * 1.2e-3,
                       "variant": "complex", "deterministic_order": "heun",
                       "convolution_mode": "recursion"},
        "n_traj": 20000,
        "master_seed": 0,
        "output_stride": 8,
        "workers": 0,
    },
    "fig1_strong": {
        "params": {"omega0": 1.0, "epsilon": 0.0,
                   "initial_bloch": [0.0, 0.0, 1.0]},
        "bath": {"eta": 4.0 / math.pi, "delta_c": 5.0, "kT": 2.0},
        "integrator": {"dt": 2.2e-4, "t_max": 45455 * 2.2e-4,
                       "variant": "complex", "deterministic_order": "heun",
                       "convolution_mode": "recursion"},
        "n_traj": 20000,
        "master_seed": 0,
        "output_stride": 40,
        "workers": 0,
    },
    "fig2_tl": {**copy.deepcopy(_FIG2_BASE),
                "bath": {"eta": 0.2 / math.pi, "delta_c": 10.0, "kT": 4.0}},
    "fig2_tr": {**copy.deepcopy(_FIG2_BASE),
                "bath": {"eta": 0.2 / math.pi, "delta_c": 10.0, "kT": 20.0}},
    "fig2_bl": {**copy.deepcopy(_FIG2_BASE),
                "bath": {"eta": 1.0 / math.pi, "delta_c": 10.0, "kT": 4.0}},
    "fig2_br": {**copy.deepcopy(_FIG2_BASE),
                "bath": {"eta": 1.0 / math.pi, "delta_c": 10.0, "kT": 20.0}},
}

_SECTION_KEYS = ("params", "bath", "integrator")


def expand_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigurationError(
            f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}"
        )
    return copy.deepcopy(PRESETS[name])


def _merge_document(base: dict, update: dict) -> dict:
    """Section-wise merge: params/bath/integrator merge key-by-key (null
    replaces the whole section), scalar keys replace."""
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if key in _SECTION_KEYS and isinstance(value, dict) \
                and isinstance(merged.get(key), dict):
            merged[key].update(value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def parse_config(source=None, preset: str | None = None,
                 overrides: dict | None = None) -> RunConfig:
    """Build a validated RunConfig from a file/dict, a preset, and overrides.

    source may be a path to a JSON document or an already-parsed dict; a
    "preset" key inside it expands first, with the document's remaining keys
    merged over the preset.  The preset argument does the same from the
    command line (giving both is an error).  overrides maps RunConfig-level
    names (master_seed, n_traj, ...) or integrator names (dt, t_max, variant,
    convolution_mode) onto values; None entries are ignored.  eta = 0 (or
    bath null) selects the decoupled deterministic limit.  Unknown keys are
    rejected.
    """
    doc: dict = {}
    if source is not None:
        if isinstance(source, dict):
            doc = copy.deepcopy(source)
        else:
            with open(source, encoding="utf-8") as fh:
                try:
                    doc = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise ConfigurationError(f"{source}: {exc}") from exc
            if not isinstance(doc, dict):
                raise ConfigurationError(f"{source}: expected a JSON object")
    file_preset = doc.pop("preset", None)
    if file_preset is not None and preset is not None:
        raise ConfigurationError(
            "preset given both in the config document and on the command line"
        )
    preset = preset or file_preset
    if preset is not None:
        doc = _merge_document(expand_preset(preset), doc)

    for name, value in (overrides or {}).items():
        if value is None:
            continue
        if name in ("dt", "t_max", "variant", "deterministic_order",
                    "convolution_mode"):
            doc.setdefault("integrator", {})
            if not isinstance(doc["integrator"], dict):
                raise ConfigurationError("integrator section is not a mapping")
            doc["integrator"][name] = value
        elif name in ("n_traj", "master_seed", "output_stride", "workers"):
            doc[name] = value
        else:
            raise ConfigurationError(f"unknown override {name!r}")

    bath = doc.get("bath")
    if isinstance(bath, dict) and bath.get("eta") == 0:
        doc["bath"] = None  # decoupled limit; eta > 0 is required otherwise
    return config_from_dict(doc)


def emit_config(cfg: RunConfig) -> dict:
    """Inverse of parse_config for provenance: parse_config(emit_config(c)) == c."""
    return config_to_dict(cfg)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _fail(message: str) -> "click.ClickException":
    exc = click.ClickException(message)
    exc.exit_code = 1
    return exc


def _json_float(x) -> float | None:
    """Strict-JSON statistic: non-finite values become null, not Infinity."""
    x = float(x)
    return x if math.isfinite(x) else None


def _write_verdicts(doc: dict, out_dir: str | None, name: str) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    click.echo(text)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{name}.json").write_text(text + "\n", encoding="ascii")


def _run_options(command):
    for option in reversed([
        click.option("--config", "config_path",
                     type=click.Path(exists=True, dir_okay=False),
                     default=None, help="JSON config document."),
        click.option("--preset", type=click.Choice(sorted(PRESETS)),
                     default=None, help="Named figure parameter set."),
        click.option("--seed", type=int, default=None,
                     help="Master seed override."),
        click.option("--n-traj", type=int, default=None),
        click.option("--dt", type=float, default=None),
        click.option("--t-max", type=float, default=None),
        click.option("--variant", type=click.Choice(["complex", "real"]),
                     default=None, help="Noise variant override."),
        click.option("--convolution", type=click.Choice(["direct", "recursion"]),
                     default=None, help="Memory-integral evaluation mode."),
        click.option("--workers", type=int, default=None,
                     help="Process count; 0 = SMF_SIM_THREADS, then cpu count."),
        click.option("--output-stride", type=int, default=None),
        click.option("--divergence-threshold", type=float, default=1e-3,
                     show_default=True,
                     help="Lost-trajectory fraction above which the run fails."),
        click.option("-o", "--output", "out_dir",
                     type=click.Path(file_okay=False), default=".",
                     show_default=True),
    ]):
        command = option(command)
    return command


def _build_config(config_path, preset, seed, n_traj, dt, t_max, variant,
                  convolution, workers, output_stride) -> RunConfig:
    overrides = {
        "master_seed": seed, "n_traj": n_traj, "dt": dt, "t_max": t_max,
        "variant": variant, "convolution_mode": convolution,
        "workers": workers, "output_stride": output_stride,
    }
    try:
        return parse_config(source=config_path, preset=preset,
                            overrides=overrides)
    except ConfigurationError as exc:
        raise _fail(str(exc)) from exc


def _artifact_name(config_path, preset, fallback: str) -> str:
    if preset is not None:
        return preset
    if config_path is not None:
        return Path(config_path).stem
    return fallback


def _run_and_write(cfg: RunConfig, scheme: str, command: str, threshold: float,
                   out_dir: str, name: str) -> None:
    try:
        result = run_ensemble(cfg, scheme=scheme,
                              divergence_threshold=threshold)
    except (DivergenceError, ConfigurationError, TruncationError) as exc:
        raise _fail(str(exc)) from exc
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / f"{name}.csv", result)
    write_sidecar(out / f"{name}.json", cfg, extra={
        "command": command,
        "n_divergent": result.n_divergent,
        "divergence_threshold": threshold,
    })
    click.echo(f"{name}: {cfg.n_traj} trajectories, "
               f"{result.n_divergent} lost, wrote {out / name}.csv")


@click.group()
@click.version_option(version=__version__)
def main():
    """Trajectory-ensemble simulator for spin-boson dynamics with a
    non-Markovian bath, with built-in reference solvers and checks."""


@main.command()
@_run_options
def simulate(config_path, preset, seed, n_traj, dt, t_max, variant,
             convolution, workers, output_stride, divergence_threshold,
             out_dir):
    """Run a density-trajectory ensemble and write CSV + JSON sidecar."""
    cfg = _build_config(config_path, preset, seed, n_traj, dt, t_max, variant,
                        convolution, workers, output_stride)
    name = _artifact_name(config_path, preset, "run")
    _run_and_write(cfg, "density", "simulate", divergence_threshold, out_dir,
                   name)


@main.command()
@_run_options
def sse(config_path, preset, seed, n_traj, dt, t_max, variant, convolution,
        workers, output_stride, divergence_threshold, out_dir):
    """Run a stochastic wave-function ensemble (pure initial states only)."""
    cfg = _build_config(config_path, preset, seed, n_traj, dt, t_max, variant,
                        convolution, workers, output_stride)
    name = _artifact_name(config_path, preset, "sse") + "_sse"
    _run_and_write(cfg, "sse", "sse", divergence_threshold, out_dir, name)


@main.command()
@_run_options
def kernels(config_path, preset, seed, n_traj, dt, t_max, variant,
            convolution, workers, output_stride, divergence_threshold,
            out_dir):
    """Tabulate the memory kernels D and D1 on a tau grid (CSV: tau,d,d1)."""
    cfg = _build_config(config_path, preset, seed, n_traj, dt, t_max, variant,
                        convolution, workers, output_stride)
    if cfg.bath is None:
        raise _fail("kernel tabulation requires a bath (eta > 0)")
    table = build_kernel_table(cfg.bath, tau_max=cfg.integrator.t_max,
                               dtau=cfg.integrator.dt)
    name = _artifact_name(config_path, preset, "kernels") + "_kernels"
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["tau,d,d1"]
    for tau, d, d1 in zip(table.tau_grid, table.d_values, table.d1_values):
        lines.append(f"{_fmt(tau)},{_fmt(d)},{_fmt(d1)}")
    (out / f"{name}.csv").write_text("\n".join(lines) + "\n", encoding="ascii")
    write_sidecar(out / f"{name}.json", cfg, extra={"command": "kernels"})
    click.echo(f"wrote {out / name}.csv ({len(table.tau_grid)} rows)")


@main.command()
@_run_options
def tcl2(config_path, preset, seed, n_traj, dt, t_max, variant, convolution,
         workers, output_stride, divergence_threshold, out_dir):
    """Integrate the second-order time-local master equation."""
    cfg = _build_config(config_path, preset, seed, n_traj, dt, t_max, variant,
                        convolution, workers, output_stride)
    try:
        result = tcl2_run(cfg.params, cfg.bath, dt=cfg.integrator.dt,
                          t_max=cfg.integrator.t_max,
                          output_stride=cfg.output_stride)
    except ConfigurationError as exc:
        raise _fail(str(exc)) from exc
    name = _artifact_name(config_path, preset, "tcl2") + "_tcl2"
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / f"{name}.csv", result)
    write_sidecar(out / f"{name}.json", cfg, extra={"command": "tcl2"})
    click.echo(f"wrote {out / name}.csv")


def _parse_modes(mode_strings) -> tuple:
    modes = []
    for text in mode_strings:
        parts = text.split(",")
        if len(parts) != 3:
            raise _fail(f"--mode expects 'omega,kappa,fock_dim', got {text!r}")
        try:
            modes.append((float(parts[0]), float(parts[1]), int(parts[2])))
        except ValueError as exc:
            raise _fail(f"--mode {text!r}: {exc}") from exc
    return tuple(modes)


@main.command()
@click.option("--mode", "mode_strings", multiple=True,
              default=("1.1,0.25,8", "1.5,0.3,8"), show_default=True,
              help="omega,kappa,fock_dim; repeat per bath mode.")
@click.option("--kt", type=float, default=0.55, show_default=True)
@click.option("--omega0", type=float, default=1.0, show_default=True)
@click.option("--epsilon", type=float, default=0.5, show_default=True)
@click.option("--dt", type=float, default=2.5e-3, show_default=True)
@click.option("--t-max", type=float, default=0.5, show_default=True)
@click.option("--n-traj", type=int, default=0, show_default=True,
              help="0 tabulates only the exact solution.")
@click.option("--scheme", type=click.Choice(["smf", "plain"]), default="smf",
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--output-stride", type=int, default=10, show_default=True)
@click.option("--divergence-threshold", type=float, default=0.01,
              show_default=True)
@click.option("-o", "--output", "out_dir", type=click.Path(file_okay=False),
              default=".", show_default=True)
def oracle(mode_strings, kt, omega0, epsilon, dt, t_max, n_traj, scheme, seed,
           output_stride, divergence_threshold, out_dir):
    """Exactly solve a few-mode bath (and optionally unravel it) for
    validation against the trajectory engine."""
    params = SpinBosonParams(omega0=omega0, epsilon=epsilon,
                             initial_bloch=(0.8, 0.0, 0.6))
    modes = _parse_modes(mode_strings)
    try:
        spec = TinyBathSpec(modes=modes, kT=kt)
        exact = tiny_bath_exact(spec, params, dt=dt, t_max=t_max,
                                output_stride=output_stride)
    except (ConfigurationError, TruncationError) as exc:
        raise _fail(str(exc)) from exc
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rho = exact.reduced
    exact_means = np.stack([rho[:, 0, 1] + rho[:, 1, 0],
                            1j * (rho[:, 0, 1] - rho[:, 1, 0]),
                            rho[:, 0, 0] - rho[:, 1, 1]])
    write_csv(out / "oracle_exact.csv",
              ObservableSeries(times=exact.times, means=exact_means,
                               stderrs=np.zeros(exact_means.shape)))
    provenance = {
        "command": "oracle", "version": __version__,
        "modes": [list(m) for m in modes], "kT": kt,
        "omega0": omega0, "epsilon": epsilon, "dt": dt, "t_max": t_max,
        "seed": seed, "scheme": scheme, "n_traj": n_traj,
    }
    (out / "oracle_exact.json").write_text(
        json.dumps(provenance, indent=2, sort_keys=True) + "\n",
        encoding="ascii")
    click.echo(f"wrote {out / 'oracle_exact.csv'}")
    if n_traj > 0:
        try:
            traj = tiny_bath_smf(spec, params, dt=dt, t_max=t_max,
                                 n_traj=n_traj, scheme=scheme,
                                 stream=np.random.default_rng(seed),
                                 output_stride=output_stride,
                                 divergence_threshold=divergence_threshold)
        except (ConfigurationError, DivergenceError) as exc:
            raise _fail(str(exc)) from exc
        name = f"oracle_{scheme}"
        means = np.stack([traj.mean_sx, traj.mean_sy, traj.mean_sz])
        errs = np.stack([traj.err_sx, traj.err_sy, traj.err_sz])
        write_csv(out / f"{name}.csv",
                  ObservableSeries(times=traj.times, means=means,
                                   stderrs=errs))
        (out / f"{name}.json").write_text(
            json.dumps({**provenance, "n_divergent": traj.n_divergent},
                       indent=2, sort_keys=True) + "\n", encoding="ascii")
        click.echo(f"wrote {out / name}.csv ({traj.n_divergent} lost)")


@main.command("check-exactness")
@click.option("--mode", "mode_strings", multiple=True,
              default=("1.3,0.4,4",), show_default=True)
@click.option("--kt", type=float, default=0.25, show_default=True)
@click.option("--displacement", type=float, multiple=True, default=(0.25,),
              show_default=True,
              help="Coherent displacement per mode (puts weight on every "
                   "Fock level so each matrix element carries real noise).")
@click.option("--dt", type=float, default=1e-3, show_default=True)
@click.option("--n-samples", type=int, default=100000, show_default=True)
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("-o", "--output", "out_dir", type=click.Path(file_okay=False),
              default=None)
def check_exactness(mode_strings, kt, displacement, dt, n_samples, seed,
                    out_dir):
    """One-step unraveling checks: mean update vs the unitary generator for
    both schemes, the paired stderr ordering, and the spread growth law."""
    params = SpinBosonParams(omega0=1.0, epsilon=0.5,
                             initial_bloch=(0.8, 0.0, 0.6))
    try:
        spec = TinyBathSpec(modes=_parse_modes(mode_strings), kT=kt)
        reports = {}
        for scheme in ("smf", "plain"):
            reports[scheme] = one_step_mean_check(
                spec, params, dt=dt, n_samples=n_samples, scheme=scheme,
                stream=np.random.default_rng(seed),
                mode_displacements=tuple(displacement) or None)
        growth = {}
        for scheme in ("smf", "plain"):
            growth[scheme] = lambda_stat_growth_check(
                spec, params, dt=dt, n_samples=n_samples, scheme=scheme,
                stream=np.random.default_rng(seed + 1))
    except ConfigurationError as exc:
        raise _fail(str(exc)) from exc

    verdicts = []
    for scheme in ("smf", "plain"):
        verdicts.append({
            "test": f"one_step_mean[{scheme}]",
            "statistic": _json_float(reports[scheme].max_ratio),
            "threshold": 1.0,
            "pass": bool(reports[scheme].max_ratio < 1.0),
        })
    margin = np.max(reports["smf"].stderr - reports["plain"].stderr
                    - 1e-6 * reports["plain"].stderr)
    verdicts.append({
        "test": "centered_stderr_not_larger",
        "statistic": _json_float(margin),
        "threshold": 1e-12,
        "pass": bool(margin <= 1e-12),
    })
    for scheme in ("smf", "plain"):
        rep = growth[scheme]
        predicted = rep.predicted_smf if scheme == "smf" else rep.predicted_plain
        pull = abs(rep.empirical - predicted) / rep.stderr
        verdicts.append({
            "test": f"lambda_growth[{scheme}]",
            "statistic": _json_float(pull),
            "threshold": 5.0,
            "pass": bool(pull < 5.0),
        })
    passed = all(v["pass"] for v in verdicts)
    _write_verdicts({"command": "check-exactness", "n_samples": n_samples,
                     "seed": seed, "verdicts": verdicts, "passed": passed},
                    out_dir, "check_exactness")
    sys.exit(0 if passed else 1)


@main.command("check-moments")
@click.option("--omega", type=float, default=1.0, show_default=True)
@click.option("--kappa", type=float, default=0.005, show_default=True)
@click.option("--kt", type=float, default=0.5, show_default=True)
@click.option("--dt", type=float, default=1e-5, show_default=True)
@click.option("--t-max", type=float, default=1e-2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "--output", "out_dir", type=click.Path(file_okay=False),
              default=None)
def check_moments(omega, kappa, kt, dt, t_max, seed, out_dir):
    """Pathwise constancy of the thermal environment second moments."""
    try:
        report = single_mode_moment_check(omega, kappa, kt, dt=dt,
                                          t_max=t_max,
                                          stream=np.random.default_rng(seed))
    except ConfigurationError as exc:
        raise _fail(str(exc)) from exc
    verdict = {
        "test": "moment_constancy",
        "statistic": _json_float(report.max_dev),
        "threshold": 1e-6,
        "pass": bool(report.max_dev < 1e-6),
    }
    _write_verdicts({"command": "check-moments", "n_bar": report.n_bar,
                     "fock_dim": report.fock_dim, "n_steps": report.n_steps,
                     "seed": seed, "verdicts": [verdict],
                     "passed": verdict["pass"]}, out_dir, "check_moments")
    sys.exit(0 if verdict["pass"] else 1)


@main.command()
@click.argument("csv_a", type=click.Path(exists=True, dir_okay=False))
@click.argument("csv_b", type=click.Path(exists=True, dir_okay=False))
@click.option("--tol", type=float, default=None,
              help="Maximum allowed |mean difference|; omit to just report.")
@click.option("-o", "--output", "out_dir", type=click.Path(file_okay=False),
              default=None)
def compare(csv_a, csv_b, tol, out_dir):
    """Compare two observable CSVs on a shared grid."""
    try:
        report = compare_runs(read_csv(csv_a), read_csv(csv_b), threshold=tol)
    except ConfigurationError as exc:
        raise _fail(str(exc)) from exc
    doc = {
        "command": "compare",
        "inputs": [str(csv_a), str(csv_b)],
        "max_abs_deviation": _json_float(report.max_abs_deviation),
        "max_z": _json_float(report.max_z),
        "threshold": tol,
        "passed": report.passed,
    }
    _write_verdicts(doc, out_dir, "compare")
    sys.exit(0 if report.passed else 1)


@main.command("make-goldens")
@click.option("-o", "--output", "out_dir", type=click.Path(file_okay=False),
              default="tests/goldens", show_default=True)
def make_goldens(out_dir):
    """Regenerate the small committed regression files.

    Each golden is cheap to produce and pins bytes: the kernel tabulation on
    a coarse grid, a short master-equation run, and a short fixed-seed
    ensemble.  Tests regenerate them in-process and compare byte-for-byte.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    weak = parse_config(preset="fig1_weak")
    table = build_kernel_table(weak.bath, tau_max=2.0, dtau=0.04)
    lines = ["tau,d,d1"]
    for tau, d, d1 in zip(table.tau_grid, table.d_values, table.d1_values):
        lines.append(f"{_fmt(tau)},{_fmt(d)},{_fmt(d1)}")
    (out / "kernels_fig1_weak.csv").write_text("\n".join(lines) + "\n",
                                               encoding="ascii")

    tl = parse_config(preset="fig2_tl")
    ref = tcl2_run(tl.params, tl.bath, dt=tl.integrator.dt, t_max=1.0,
                   output_stride=400)
    write_csv(out / "tcl2_fig2_tl.csv", ref)

    short = parse_config(preset="fig1_weak", overrides={
        "n_traj": 256, "master_seed": 123, "t_max": 0.3, "output_stride": 25,
        "workers": 1,
    })
    result = run_ensemble(short, divergence_threshold=0.05)
    write_csv(out / "ensemble_fig1_weak_short.csv", result)

    for name in ("kernels_fig1_weak.csv", "tcl2_fig2_tl.csv",
                 "ensemble_fig1_weak_short.csv"):
        click.echo(f"wrote {out / name}")


if __name__ == "__main__":
    main()
