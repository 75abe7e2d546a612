"""N-trajectory Monte Carlo orchestration.

Work is partitioned into fixed-size trajectory index blocks whose boundaries
do not depend on the worker count, each block is reduced to masked partial
sums by the engine, and the partial sums are merged in index order.  Floating
point addition is order-sensitive, so this fixed partition plus ordered merge
is what makes results bit-identical for a given master seed whether the run
uses one process or many.

Divergent (and, for the wave-function scheme, degenerate) trajectories are
excluded from the estimators per output time but always counted; the run is
declared failed when the lost fraction exceeds the threshold, because beyond
that level the surviving-trajectory mean is no longer a trustworthy estimator
of the ensemble mean.

A decoupled run (``bath=None``) has no noise to average: the stochastic terms
exist only to carry system-bath correlations.  Every trajectory coincides
with the deterministic one, so it is computed once and the standard errors
are exactly zero.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .engine import (
    BlockResult,
    IntegratorConfig,
    SpinBosonParams,
    propagate_block,
)
from .errors import ConfigurationError, DivergenceError
from .kernels import BathParams, SpectralDensityParams, build_kernel_table

BLOCK_TRAJECTORIES = 512  # partition unit; fixed so results never depend on workers

CSV_HEADER = ("t,mean_sx_re,mean_sx_im,err_sx,mean_sy_re,mean_sy_im,err_sy,"
              "mean_sz_re,mean_sz_im,err_sz")

SCHEMES = ("density", "sse")


@dataclass(frozen=True)
class RunConfig:
    """Complete description of one ensemble run."""

    params: SpinBosonParams
    bath: BathParams | None
    integrator: IntegratorConfig
    n_traj: int
    master_seed: int
    output_stride: int = 1
    workers: int = 0  # 0 = resolve from SMF_SIM_THREADS, then cpu count

    def __post_init__(self):
        if int(self.n_traj) != self.n_traj or self.n_traj < 1:
            raise ConfigurationError("n_traj must be an integer >= 1")
        if int(self.output_stride) != self.output_stride or self.output_stride < 1:
            raise ConfigurationError("output_stride must be an integer >= 1")
        if int(self.workers) != self.workers or self.workers < 0:
            raise ConfigurationError("workers must be an integer >= 0")
        if int(self.master_seed) != self.master_seed or not (
                0 <= self.master_seed < 2**64):
            raise ConfigurationError("master_seed must be a 64-bit integer")


@dataclass(frozen=True)
class EnsembleResult:
    """Aggregated observables; stderr is the larger of the real/imaginary
    sample standard deviations divided by sqrt(included count)."""

    times: np.ndarray
    mean_sx: np.ndarray  # (T,) complex
    mean_sy: np.ndarray
    mean_sz: np.ndarray
    stderr_sx: np.ndarray  # (T,) real
    stderr_sy: np.ndarray
    stderr_sz: np.ndarray
    n_traj: int
    n_divergent: int
    master_seed: int
    n_included: np.ndarray  # (T,) trajectories contributing at each time


@dataclass(frozen=True)
class ObservableSeries:
    """Schema-level view of a run: shared time grid, complex means with
    standard errors (zero for deterministic references)."""

    times: np.ndarray
    means: np.ndarray  # (3, T) complex, ordered sx, sy, sz
    stderrs: np.ndarray  # (3, T) real


@dataclass(frozen=True)
class DeviationReport:
    """Pointwise comparison of two runs on a shared grid."""

    times: np.ndarray
    deviation: np.ndarray  # (3, T) |mean_a - mean_b|
    z_scores: np.ndarray  # (3, T) deviation / combined stderr
    max_abs_deviation: float
    max_z: float
    threshold: float | None
    passed: bool


def resolve_workers(requested: int) -> int:
    """0 means: SMF_SIM_THREADS if set, else the machine's cpu count."""
    if requested > 0:
        return int(requested)
    env = os.environ.get("SMF_SIM_THREADS")
    if env is not None:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigurationError(
                f"SMF_SIM_THREADS must be an integer, got {env!r}"
            ) from exc
        if n < 1:
            raise ConfigurationError("SMF_SIM_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def _blocks(n_traj: int) -> list:
    return [(start, min(start + BLOCK_TRAJECTORIES, n_traj))
            for start in range(0, n_traj, BLOCK_TRAJECTORIES)]


_WORKER_CTX = None


def _init_worker(params, table, cfg, master_seed, output_stride, scheme):
    global _WORKER_CTX
    _WORKER_CTX = (params, table, cfg, master_seed, output_stride, scheme)


def _block_task(start: int, stop: int) -> BlockResult:
    params, table, cfg, master_seed, output_stride, scheme = _WORKER_CTX
    return propagate_block(params, table, cfg, master_seed,
                           np.arange(start, stop), output_stride=output_stride,
                           scheme=scheme)


def _merge_blocks(blocks: list) -> BlockResult:
    first = blocks[0]
    sum_obs = first.sum_obs.copy()
    sumsq_re = first.sumsq_re.copy()
    sumsq_im = first.sumsq_im.copy()
    n_included = first.n_included.copy()
    divergent = list(first.divergent_steps)
    degenerate = list(first.degenerate_steps)
    for block in blocks[1:]:
        sum_obs += block.sum_obs
        sumsq_re += block.sumsq_re
        sumsq_im += block.sumsq_im
        n_included += block.n_included
        divergent.extend(block.divergent_steps)
        degenerate.extend(block.degenerate_steps)
    return BlockResult(times=first.times, sum_obs=sum_obs, sumsq_re=sumsq_re,
                       sumsq_im=sumsq_im, n_included=n_included,
                       divergent_steps=tuple(divergent),
                       degenerate_steps=tuple(degenerate))


def _estimators(total: BlockResult, n_traj: int):
    """Mean and per-component stderr from masked sums.

    The divisor is the count actually included at each time (equal to n_traj
    up to the allowed sub-threshold losses); below two samples the stderr is
    zero by convention.
    """
    n = total.n_included.astype(float)
    safe_n = np.maximum(n, 1.0)
    mean = total.sum_obs / safe_n[:, None]
    var_den = np.maximum(n - 1.0, 1.0)
    var_re = (total.sumsq_re - safe_n[:, None] * mean.real**2) / var_den[:, None]
    var_im = (total.sumsq_im - safe_n[:, None] * mean.imag**2) / var_den[:, None]
    var = np.maximum(np.clip(var_re, 0.0, None), np.clip(var_im, 0.0, None))
    stderr = np.sqrt(var / safe_n[:, None])
    stderr[n < 2.0] = 0.0
    mean[n < 1.0] = 0.0
    return mean, stderr


def run_ensemble(cfg: RunConfig, scheme: str = "density",
                 divergence_threshold: float = 1e-3) -> EnsembleResult:
    """Propagate cfg.n_traj trajectories and aggregate the Bloch observables.

    The per-trajectory noise stream is derived from (master_seed, trajectory
    index) alone, and aggregation is an ordered reduction over a fixed block
    partition, so the result is bit-identical for a fixed master seed no
    matter how many workers run the blocks.

    Raises DivergenceError when the lost-trajectory fraction exceeds
    divergence_threshold (default 0.1%).
    """
    if scheme not in SCHEMES:
        raise ConfigurationError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    if not 0.0 <= divergence_threshold <= 1.0:
        raise ConfigurationError("divergence_threshold must be in [0, 1]")

    if cfg.bath is None:
        return _run_decoupled(cfg, scheme)

    table = build_kernel_table(cfg.bath, tau_max=cfg.integrator.t_max,
                               dtau=cfg.integrator.dt)
    blocks = _blocks(cfg.n_traj)
    workers = min(resolve_workers(cfg.workers), len(blocks))
    init_args = (cfg.params, table, cfg.integrator, cfg.master_seed,
                 cfg.output_stride, scheme)
    if workers == 1:
        _init_worker(*init_args)
        results = [_block_task(start, stop) for start, stop in blocks]
    else:
        with ProcessPoolExecutor(max_workers=workers,
                                 initializer=_init_worker,
                                 initargs=init_args) as pool:
            futures = [pool.submit(_block_task, start, stop)
                       for start, stop in blocks]
            results = [f.result() for f in futures]  # index order, not arrival

    total = _merge_blocks(results)
    n_lost = len(total.divergent_steps) + len(total.degenerate_steps)
    if n_lost > divergence_threshold * cfg.n_traj:
        raise DivergenceError(
            f"{n_lost} of {cfg.n_traj} trajectories lost "
            f"({len(total.divergent_steps)} divergent, "
            f"{len(total.degenerate_steps)} degenerate), above the "
            f"{divergence_threshold:.2%} threshold"
        )
    mean, stderr = _estimators(total, cfg.n_traj)
    return EnsembleResult(
        times=total.times,
        mean_sx=mean[:, 0], mean_sy=mean[:, 1], mean_sz=mean[:, 2],
        stderr_sx=stderr[:, 0], stderr_sy=stderr[:, 1], stderr_sz=stderr[:, 2],
        n_traj=cfg.n_traj, n_divergent=n_lost, master_seed=cfg.master_seed,
        n_included=total.n_included,
    )


def _run_decoupled(cfg: RunConfig, scheme: str) -> EnsembleResult:
    """bath=None: all trajectories coincide; propagate once without noise."""
    block = propagate_block(cfg.params, None, cfg.integrator, cfg.master_seed,
                            np.array([0]), output_stride=cfg.output_stride,
                            scheme=scheme, suppress_noise=True)
    if len(block.divergent_steps) + len(block.degenerate_steps) > 0:
        raise DivergenceError("the deterministic decoupled trajectory failed; "
                              "the step size is far too large")
    mean = block.sum_obs
    zeros = np.zeros(len(block.times))
    return EnsembleResult(
        times=block.times,
        mean_sx=mean[:, 0], mean_sy=mean[:, 1], mean_sz=mean[:, 2],
        stderr_sx=zeros, stderr_sy=zeros.copy(), stderr_sz=zeros.copy(),
        n_traj=cfg.n_traj, n_divergent=0, master_seed=cfg.master_seed,
        n_included=np.full(len(block.times), cfg.n_traj),
    )


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------

def as_series(run) -> ObservableSeries:
    """Normalize anything carrying Bloch observables on a grid.

    Accepts an ObservableSeries, an EnsembleResult, or any object with
    times/sx/sy/sz attributes (deterministic references; stderr zero).
    """
    if isinstance(run, ObservableSeries):
        return run
    if isinstance(run, EnsembleResult):
        means = np.stack([run.mean_sx, run.mean_sy, run.mean_sz])
        errs = np.stack([run.stderr_sx, run.stderr_sy, run.stderr_sz])
        return ObservableSeries(times=run.times, means=means, stderrs=errs)
    if all(hasattr(run, name) for name in ("times", "sx", "sy", "sz")):
        means = np.stack([np.asarray(run.sx, dtype=complex),
                          np.asarray(run.sy, dtype=complex),
                          np.asarray(run.sz, dtype=complex)])
        return ObservableSeries(times=np.asarray(run.times), means=means,
                                stderrs=np.zeros(means.shape))
    raise ConfigurationError(
        f"cannot interpret {type(run).__name__} as an observable series"
    )


def compare_runs(a, b, threshold: float | None = None) -> DeviationReport:
    """Pointwise |mean_a - mean_b| and z-scores on a shared time grid.

    Pass/fail is judged on the maximum absolute deviation when a threshold is
    given; with no threshold the report always passes.  Grids must agree to
    1e-12.
    """
    sa, sb = as_series(a), as_series(b)
    if len(sa.times) != len(sb.times):
        raise ConfigurationError(
            f"time grids differ in length ({len(sa.times)} vs {len(sb.times)})"
        )
    if np.max(np.abs(sa.times - sb.times)) > 1e-12:
        raise ConfigurationError("time grids differ beyond 1e-12")
    deviation = np.abs(sa.means - sb.means)
    combined = np.sqrt(sa.stderrs**2 + sb.stderrs**2)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(combined > 0.0, deviation / combined,
                     np.where(deviation > 0.0, np.inf, 0.0))
    max_dev = float(np.max(deviation))
    passed = True if threshold is None else bool(max_dev <= threshold)
    return DeviationReport(times=sa.times, deviation=deviation, z_scores=z,
                           max_abs_deviation=max_dev, max_z=float(np.max(z)),
                           threshold=threshold, passed=passed)


# ---------------------------------------------------------------------------
# CSV and config round-trip
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path, result) -> None:
    """Write the shared observable schema; %.17g keeps float64 exact."""
    series = as_series(result)
    lines = [CSV_HEADER]
    for i, t in enumerate(series.times):
        row = [_fmt(t)]
        for c in range(3):
            row.extend([_fmt(series.means[c, i].real),
                        _fmt(series.means[c, i].imag),
                        _fmt(series.stderrs[c, i])])
        lines.append(",".join(row))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path) -> ObservableSeries:
    """Read the shared observable schema back into series form."""
    with open(path, encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ConfigurationError(
                f"{path}: unexpected CSV header {header!r}"
            )
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != 10:
        raise ConfigurationError(f"{path}: expected 10 columns")
    means = np.stack([data[:, 1] + 1j * data[:, 2],
                      data[:, 4] + 1j * data[:, 5],
                      data[:, 7] + 1j * data[:, 8]])
    stderrs = np.stack([data[:, 3], data[:, 6], data[:, 9]])
    return ObservableSeries(times=data[:, 0], means=means, stderrs=stderrs)


def config_to_dict(cfg: RunConfig) -> dict:
    """JSON-ready mirror of RunConfig; config_from_dict inverts it exactly."""
    bath = None
    if cfg.bath is not None:
        bath = {
            "eta": cfg.bath.spectral.eta,
            "delta_c": cfg.bath.spectral.delta_c,
            "kT": cfg.bath.kT,
            "matsubara_terms": cfg.bath.matsubara_terms,
            "omega_max": cfg.bath.omega_max,
            "quadrature_points": cfg.bath.quadrature_points,
        }
    return {
        "params": {
            "omega0": cfg.params.omega0,
            "epsilon": cfg.params.epsilon,
            "initial_bloch": list(cfg.params.initial_bloch),
        },
        "bath": bath,
        "integrator": {
            "dt": cfg.integrator.dt,
            "t_max": cfg.integrator.t_max,
            "variant": cfg.integrator.variant,
            "deterministic_order": cfg.integrator.deterministic_order,
            "convolution_mode": cfg.integrator.convolution_mode,
        },
        "n_traj": cfg.n_traj,
        "master_seed": cfg.master_seed,
        "output_stride": cfg.output_stride,
        "workers": cfg.workers,
    }


def _take(section: dict, context: str, required: tuple, optional: tuple = ()):
    unknown = set(section) - set(required) - set(optional)
    if unknown:
        raise ConfigurationError(
            f"unknown key(s) in {context}: {', '.join(sorted(unknown))}"
        )
    missing = set(required) - set(section)
    if missing:
        raise ConfigurationError(
            f"missing key(s) in {context}: {', '.join(sorted(missing))}"
        )


def config_from_dict(doc: dict) -> RunConfig:
    """Strict inverse of config_to_dict: unknown keys are errors."""
    _take(doc, "config", ("params", "bath", "integrator", "n_traj",
                          "master_seed"), ("output_stride", "workers"))
    p = doc["params"]
    _take(p, "params", ("omega0", "epsilon", "initial_bloch"))
    params = SpinBosonParams(omega0=p["omega0"], epsilon=p["epsilon"],
                             initial_bloch=tuple(p["initial_bloch"]))
    bath = None
    if doc["bath"] is not None:
        b = doc["bath"]
        _take(b, "bath", ("eta", "delta_c", "kT"),
              ("matsubara_terms", "omega_max", "quadrature_points"))
        spectral = SpectralDensityParams(eta=b["eta"], delta_c=b["delta_c"])
        kwargs = {k: b[k] for k in ("matsubara_terms", "omega_max",
                                    "quadrature_points") if k in b}
        bath = BathParams(spectral=spectral, kT=b["kT"], **kwargs)
    i = doc["integrator"]
    _take(i, "integrator", ("dt", "t_max"),
          ("variant", "deterministic_order", "convolution_mode"))
    integrator = IntegratorConfig(
        dt=i["dt"], t_max=i["t_max"],
        variant=i.get("variant", "complex"),
        deterministic_order=i.get("deterministic_order", "heun"),
        convolution_mode=i.get("convolution_mode", "recursion"),
    )
    return RunConfig(params=params, bath=bath, integrator=integrator,
                     n_traj=doc["n_traj"], master_seed=doc["master_seed"],
                     output_stride=doc.get("output_stride", 1),
                     workers=doc.get("workers", 0))


def write_sidecar(path, cfg: RunConfig, extra: dict | None = None) -> None:
    """Provenance next to each CSV: full config echo plus version."""
    doc = {"version": __version__, "config": config_to_dict(cfg)}
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
