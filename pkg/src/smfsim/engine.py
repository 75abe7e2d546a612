"""Single-trajectory propagation of the stochastic mean-field dynamics.

The reduced density of the two-level system follows the Ito update

    rho <- rho + (dt/i*hbar) [h_S + <B(t)> Q, rho]
               + du_S {Q - <Q>, rho}_+  -  i dv_S [Q - <Q>, rho]

with Q = sigma_x, h_S = hbar*omega0*sigma_x + hbar*epsilon*sigma_z, and the
stochastic mean field accumulated from the trajectory's own past,

    <B(t_n)> = - (1/hbar) sum_{k<n} D(t_n - t_k) <Q(t_k)> dt
               -          sum_{k<n} D(t_n - t_k) du_E(t_k)
               +          sum_{k<n} D1(t_n - t_k) dv_E(t_k),

the k = n term excluded (Ito non-anticipating convention).  The deterministic
commutator is advanced with Heun's method by default (the mean-field
Hamiltonian frozen at the step start, so the corrector equals the exact
order-2 expansion of the linear drift); noise stays explicit Euler.  All
increments are traceless, so Tr(rho) = 1 holds to roundoff along every path;
this is asserted, never renormalized.

The SSE counterpart propagates the dyad rho = |phi1><phi2| / <phi2|phi1>:

    d|phi1> = {(dt/i*hbar) H_S(t) + dxi_S (Q - <Q>)} |phi1>
    d<phi2| = <phi2| {-(dt/i*hbar) H_S(t) + dlam_S (Q - <Q>)}

with <Q> = <phi2|Q|phi1>/<phi2|phi1>.  Both schemes exist in a scalar
reference form (one trajectory, python-level loop) and a vectorized block
form used by the ensemble driver; the block form reproduces the scalar
composition and consumes the noise streams identically, so results do not
depend on which path produced them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .kernels import HBAR, KernelTable
from .noise import (
    NoiseIncrement,
    increments_from_normals,
    normals_per_step,
    sample_increment,
    trajectory_stream,
)

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
IDENTITY = np.eye(2, dtype=complex)

# Coupling operator of the spin-boson model.
Q_OP = SIGMA_X

# Trace tolerance is 1e-12 scaled by the largest matrix norm the path has
# visited: the scheme preserves the trace exactly, but float cancellation
# leaves residues of order eps * ||rho||, and the multiplicative noise of the
# complex variant produces legitimate transient norm excursions far above 1.
_TRACE_TOL = 1e-12
# A reduced density with entries beyond this is treated as divergent; physical
# paths have norms O(1) with heavy but bounded fluctuation tails.
_DIVERGENCE_NORM = 1e6
_OVERLAP_FLOOR = 1e-12
# Steps of pre-drawn noise per vectorized chunk (fixed: the noise stream
# layout must not depend on run-time tuning).
_CHUNK_STEPS = 512

CONVOLUTION_MODES = ("recursion", "direct")
DETERMINISTIC_ORDERS = ("heun", "euler")


@dataclass(frozen=True)
class SpinBosonParams:
    """Two-level system h_S = hbar*omega0*sigma_x + hbar*epsilon*sigma_z."""

    omega0: float
    epsilon: float
    initial_bloch: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        norm = float(np.linalg.norm(self.initial_bloch))
        if norm > 1.0 + 1e-9:
            raise ConfigurationError(
                f"initial Bloch vector has norm {norm:.6f} > 1 (unphysical)"
            )

    @property
    def is_pure(self) -> bool:
        return abs(float(np.linalg.norm(self.initial_bloch)) - 1.0) <= 1e-9

    def h_matrix(self) -> np.ndarray:
        return HBAR * (self.omega0 * SIGMA_X + self.epsilon * SIGMA_Z)

    def rho0(self) -> np.ndarray:
        bx, by, bz = self.initial_bloch
        return 0.5 * (IDENTITY + bx * SIGMA_X + by * SIGMA_Y + bz * SIGMA_Z)

    def psi0(self) -> np.ndarray:
        """State vector of the pure initial state; error when mixed."""
        if not self.is_pure:
            raise ConfigurationError("initial state must be pure (Bloch norm 1)")
        w, v = np.linalg.eigh(self.rho0())
        return np.ascontiguousarray(v[:, int(np.argmax(w))])


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    t_max: float
    variant: str = "complex"
    deterministic_order: str = "heun"
    convolution_mode: str = "recursion"

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        n = round(self.t_max / self.dt)
        if n < 1 or abs(n * self.dt - self.t_max) > 1e-9 * max(self.t_max, 1.0):
            raise ConfigurationError("t_max must be an integer number of steps")
        if self.variant not in ("complex", "real"):
            raise ConfigurationError(f"unknown noise variant {self.variant!r}")
        if self.deterministic_order not in DETERMINISTIC_ORDERS:
            raise ConfigurationError(
                f"unknown deterministic order {self.deterministic_order!r}"
            )
        if self.convolution_mode not in CONVOLUTION_MODES:
            raise ConfigurationError(
                f"unknown convolution mode {self.convolution_mode!r}"
            )

    @property
    def n_steps(self) -> int:
        return round(self.t_max / self.dt)


@dataclass
class TrajectoryState:
    """Mutable per-trajectory state; confined to one worker for its lifetime."""

    rho: np.ndarray
    h: np.ndarray
    step_index: int
    q_history: np.ndarray
    du_e_history: np.ndarray
    dv_e_history: np.ndarray
    # Per-exponential recursive convolution accumulators, already decayed to
    # the current time; None in direct mode.
    acc_d: np.ndarray | None
    acc_d1: np.ndarray | None
    decay_d: np.ndarray | None
    decay_d1: np.ndarray | None
    b_mean: complex = 0.0 + 0.0j
    # Largest entrywise norm seen so far; float trace residue scales with it.
    peak_norm: float = 1.0
    divergent: bool = False
    divergence_step: int | None = None


@dataclass(frozen=True)
class TrajectoryResult:
    times: np.ndarray
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray
    divergent: bool = False
    divergence_step: int | None = None
    degenerate: bool = False


@dataclass(frozen=True)
class BlockResult:
    """Per-block reduction: masked sums ready for deterministic combination.

    Inclusion is resolved per output time: a trajectory contributes at every
    output time strictly before the step at which its divergence (or SSE
    degeneracy) was detected, and at nothing afterwards.  Estimators at times
    before the first death are therefore exactly unbiased; dropping a dead
    trajectory's early, perfectly valid samples would bias them.
    """

    times: np.ndarray
    sum_obs: np.ndarray     # (T, 3) complex, summed over included trajectories
    sumsq_re: np.ndarray    # (T, 3) sums of squared real parts
    sumsq_im: np.ndarray    # (T, 3) sums of squared imaginary parts
    n_included: np.ndarray  # (T,) number of trajectories included at each time
    divergent_steps: tuple  # ((trajectory_index, step), ...)
    degenerate_steps: tuple


def _check_table(table: KernelTable | None, cfg: IntegratorConfig,
                 need_coverage: bool) -> int:
    """Grid compatibility; returns dt/dtau (1 when decoupled)."""
    if table is None:
        return 1
    ratio = round(cfg.dt / table.dtau)
    if ratio < 1 or abs(ratio * table.dtau - cfg.dt) > 1e-9 * cfg.dt:
        raise ConfigurationError("kernel grid spacing must divide the time step")
    if need_coverage and cfg.t_max > table.tau_max * (1 + 1e-12):
        raise ConfigurationError(
            "kernel table does not cover the full propagation window"
        )
    return ratio


def _output_steps(n_steps: int, stride: int) -> np.ndarray:
    """Step indices emitted: every stride-th step plus always the final one."""
    if stride < 1:
        raise ConfigurationError("output stride must be >= 1")
    steps = np.arange(0, n_steps + 1, stride)
    if steps[-1] != n_steps:
        steps = np.append(steps, n_steps)
    return steps


def init_state(params: SpinBosonParams, table: KernelTable | None,
               cfg: IntegratorConfig) -> TrajectoryState:
    n = cfg.n_steps
    use_recursion = cfg.convolution_mode == "recursion" and table is not None
    _check_table(table, cfg, need_coverage=not use_recursion)
    if use_recursion:
        dec = table.exp_decomposition
        acc_d = np.zeros(len(dec.d_rates), dtype=complex)
        acc_d1 = np.zeros(len(dec.d1_rates), dtype=complex)
        decay_d = np.exp(-dec.d_rates * cfg.dt)
        decay_d1 = np.exp(-dec.d1_rates * cfg.dt)
    else:
        acc_d = acc_d1 = decay_d = decay_d1 = None
    return TrajectoryState(
        rho=params.rho0(),
        h=params.h_matrix(),
        step_index=0,
        q_history=np.zeros(n, dtype=complex),
        du_e_history=np.zeros(n, dtype=complex),
        dv_e_history=np.zeros(n, dtype=complex),
        acc_d=acc_d,
        acc_d1=acc_d1,
        decay_d=decay_d,
        decay_d1=decay_d1,
    )


def mean_field_source(state: TrajectoryState, table: KernelTable | None,
                      dt: float, mode: str | None = None) -> complex:
    """<B(t_n)> from the trajectory's own history; the k = n term is excluded."""
    if table is None:
        return 0.0 + 0.0j
    n = state.step_index
    if n == 0:
        return 0.0 + 0.0j
    if mode is None:
        mode = "recursion" if state.acc_d is not None else "direct"
    if mode == "recursion":
        if state.acc_d is None:
            raise ConfigurationError("state was initialized without accumulators")
        dec = table.exp_decomposition
        return complex(
            -np.dot(dec.d_amplitudes, state.acc_d)
            + np.dot(dec.d1_amplitudes, state.acc_d1)
        )
    # Direct summation over the stored history; O(n) per step.
    ratio = round(dt / table.dtau)
    lag_idx = np.arange(n, 0, -1) * ratio  # (t_n - t_k)/dtau for k = 0..n-1
    if lag_idx[0] >= len(table.tau_grid):
        raise ConfigurationError("kernel table too short for requested time")
    q = state.q_history[:n]
    return complex(
        -np.dot(table.d_values[lag_idx], q * (dt / HBAR) + state.du_e_history[:n])
        + np.dot(table.d1_values[lag_idx], state.dv_e_history[:n])
    )


def _drift(h: np.ndarray, b: complex, rho: np.ndarray, dt: float,
           order: str) -> np.ndarray:
    """Deterministic commutator increment, mean field frozen at step start."""
    h_eff = h + b * Q_OP

    def lin(x):
        return (dt / (1j * HBAR)) * (h_eff @ x - x @ h_eff)

    first = lin(rho)
    if order == "euler":
        return first
    return first + 0.5 * lin(first)


def _push_history(state: TrajectoryState, q: complex, inc: NoiseIncrement,
                  dt: float) -> None:
    n = state.step_index
    state.q_history[n] = q
    state.du_e_history[n] = inc.du_e
    state.dv_e_history[n] = inc.dv_e
    if state.acc_d is not None:
        src = q * (dt / HBAR) + inc.du_e
        state.acc_d = state.decay_d * (state.acc_d + src)
        state.acc_d1 = state.decay_d1 * (state.acc_d1 + inc.dv_e)


def smf_step(state: TrajectoryState, table: KernelTable | None,
             inc: NoiseIncrement, cfg: IntegratorConfig) -> TrajectoryState:
    """Advance one Ito step in place; returns the same state object."""
    if state.divergent:
        return state
    rho = state.rho
    q = complex(rho[0, 1] + rho[1, 0])  # Tr(Q rho) with Q = sigma_x
    b = mean_field_source(state, table, cfg.dt)

    qr = Q_OP @ rho
    rq = rho @ Q_OP
    noise = inc.du_s * (qr + rq - 2.0 * q * rho) - 1j * inc.dv_s * (qr - rq)
    new_rho = rho + _drift(state.h, b, rho, cfg.dt, cfg.deterministic_order) + noise

    _push_history(state, q, inc, cfg.dt)
    state.rho = new_rho
    state.b_mean = b
    state.step_index += 1

    flat_max = np.max(np.abs(new_rho))
    if not np.isfinite(flat_max) or flat_max > _DIVERGENCE_NORM:
        state.divergent = True
        state.divergence_step = state.step_index
    else:
        state.peak_norm = max(state.peak_norm, float(flat_max))
        trace_err = abs(new_rho[0, 0] + new_rho[1, 1] - 1.0)
        if trace_err > _TRACE_TOL * state.peak_norm:
            raise DivergenceError(
                f"trace drift {trace_err:.3e} at step {state.step_index}"
            )
    return state


def _observables(rho: np.ndarray) -> tuple[complex, complex, complex]:
    sx = rho[0, 1] + rho[1, 0]
    sy = 1j * (rho[0, 1] - rho[1, 0])
    sz = rho[0, 0] - rho[1, 1]
    return complex(sx), complex(sy), complex(sz)


_ZERO_INC = NoiseIncrement(0.0j, 0.0j, 0.0j, 0.0j)


def run_trajectory(params: SpinBosonParams, table: KernelTable | None,
                   cfg: IntegratorConfig, stream: np.random.Generator,
                   output_stride: int = 1,
                   suppress_noise: bool = False) -> TrajectoryResult:
    """Scalar reference propagation of one density trajectory."""
    state = init_state(params, table, cfg)
    out_steps = _output_steps(cfg.n_steps, output_stride)
    times = out_steps * cfg.dt
    sx = np.full(len(out_steps), np.nan, dtype=complex)
    sy = np.full(len(out_steps), np.nan, dtype=complex)
    sz = np.full(len(out_steps), np.nan, dtype=complex)
    out_pos = {int(s): i for i, s in enumerate(out_steps)}

    sx[0], sy[0], sz[0] = _observables(state.rho)
    for n in range(cfg.n_steps):
        inc = (_ZERO_INC if suppress_noise
               else sample_increment(cfg.dt, cfg.variant, stream))
        smf_step(state, table, inc, cfg)
        if state.divergent:
            break
        i = out_pos.get(n + 1)
        if i is not None:
            sx[i], sy[i], sz[i] = _observables(state.rho)
    return TrajectoryResult(
        times=times, sx=sx, sy=sy, sz=sz,
        divergent=state.divergent, divergence_step=state.divergence_step,
    )


def run_trajectory_sse(params: SpinBosonParams, table: KernelTable | None,
                       cfg: IntegratorConfig, stream: np.random.Generator,
                       output_stride: int = 1,
                       suppress_noise: bool = False) -> TrajectoryResult:
    """Scalar reference propagation of one SSE dyad trajectory."""
    phi = params.psi0().astype(complex)
    bra = phi.conj().copy()  # row vector <phi2|, initially <phi1|
    state = init_state(params, table, cfg)  # reuses the history machinery
    h = state.h
    dt = cfg.dt

    out_steps = _output_steps(cfg.n_steps, output_stride)
    times = out_steps * cfg.dt
    sx = np.full(len(out_steps), np.nan, dtype=complex)
    sy = np.full(len(out_steps), np.nan, dtype=complex)
    sz = np.full(len(out_steps), np.nan, dtype=complex)
    out_pos = {int(s): i for i, s in enumerate(out_steps)}
    degenerate = False

    def dyad_obs(idx):
        overlap = bra @ phi
        sx[idx] = (bra @ Q_OP @ phi) / overlap
        sy[idx] = (bra @ SIGMA_Y @ phi) / overlap
        sz[idx] = (bra @ SIGMA_Z @ phi) / overlap

    dyad_obs(0)
    for n in range(cfg.n_steps):
        inc = (_ZERO_INC if suppress_noise
               else sample_increment(cfg.dt, cfg.variant, stream))
        overlap = bra @ phi
        if abs(overlap) < _OVERLAP_FLOOR:
            degenerate = True
            state.divergence_step = n
            break
        q = complex((bra @ Q_OP @ phi) / overlap)
        b = mean_field_source(state, table, dt)
        h_eff = h + b * Q_OP

        dxi = inc.du_s - 1j * inc.dv_s
        dlam = inc.du_s + 1j * inc.dv_s
        ket_lin = (dt / (1j * HBAR)) * (h_eff @ phi)
        bra_lin = -(dt / (1j * HBAR)) * (bra @ h_eff)
        if cfg.deterministic_order == "heun":
            ket_lin = ket_lin + 0.5 * (dt / (1j * HBAR)) * (h_eff @ ket_lin)
            bra_lin = bra_lin - 0.5 * (dt / (1j * HBAR)) * (bra_lin @ h_eff)
        new_phi = phi + ket_lin + dxi * (Q_OP @ phi - q * phi)
        new_bra = bra + bra_lin + dlam * (bra @ Q_OP - q * bra)

        _push_history(state, q, inc, dt)
        state.step_index += 1
        phi, bra = new_phi, new_bra

        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(bra))) or max(
            np.max(np.abs(phi)), np.max(np.abs(bra))
        ) > _DIVERGENCE_NORM:
            state.divergent = True
            state.divergence_step = state.step_index
            break
        i = out_pos.get(n + 1)
        if i is not None:
            dyad_obs(i)
    return TrajectoryResult(
        times=times, sx=sx, sy=sy, sz=sz,
        divergent=state.divergent, divergence_step=state.divergence_step,
        degenerate=degenerate,
    )


def propagate_block(params: SpinBosonParams, table: KernelTable | None,
                    cfg: IntegratorConfig, master_seed: int,
                    indices: np.ndarray, output_stride: int = 1,
                    suppress_noise: bool = False,
                    scheme: str = "density") -> BlockResult:
    """Vectorized propagation of one fixed block of trajectories.

    The block's noise layout depends only on (master_seed, indices), never on
    worker scheduling, so block results combine deterministically.  Divergent
    (and, for SSE, degenerate) trajectories are reported with the step at
    which they were detected and contribute to the sums only at output times
    strictly before that step.
    """
    if scheme not in ("density", "sse"):
        raise ConfigurationError(f"unknown scheme {scheme!r}")
    use_recursion = cfg.convolution_mode == "recursion" and table is not None
    if table is not None and not use_recursion:
        raise ConfigurationError("block propagation supports recursion mode only")
    _check_table(table, cfg, need_coverage=False)

    nb = len(indices)
    n_steps = cfg.n_steps
    dt = cfg.dt
    out_steps = _output_steps(n_steps, output_stride)
    times = out_steps * dt
    n_out = len(out_steps)
    obs = np.zeros((nb, n_out, 3), dtype=complex)
    out_pos = np.full(n_steps + 1, -1, dtype=int)
    out_pos[out_steps] = np.arange(n_out)

    h = params.h_matrix()
    sse = scheme == "sse"
    if sse:
        psi = params.psi0().astype(complex)
        phi = np.tile(psi, (nb, 1))
        bra = np.tile(psi.conj(), (nb, 1))
        rho = None
    else:
        rho = np.tile(params.rho0(), (nb, 1, 1))
        phi = bra = None

    if use_recursion:
        dec = table.exp_decomposition
        a_d, a_d1 = dec.d_amplitudes, dec.d1_amplitudes
        decay_d = np.exp(-dec.d_rates * dt)
        decay_d1 = np.exp(-dec.d1_rates * dt)
        acc_d = np.zeros((nb, len(a_d)), dtype=complex)
        acc_d1 = np.zeros((nb, len(a_d1)), dtype=complex)

    k_normals = normals_per_step(cfg.variant)
    streams = [trajectory_stream(master_seed, int(i)) for i in indices] \
        if not suppress_noise else None

    alive = np.ones(nb, dtype=bool)
    ok_overlap = np.ones(nb, dtype=bool)
    death_step = np.zeros(nb, dtype=int)
    peak_norm = np.ones(nb)

    def record(idx):
        if sse:
            overlap = np.einsum("bi,bi->b", bra, phi)
            safe = np.where(np.abs(overlap) > 0, overlap, 1.0)
            obs[:, idx, 0] = np.einsum("bi,ij,bj->b", bra, SIGMA_X, phi) / safe
            obs[:, idx, 1] = np.einsum("bi,ij,bj->b", bra, SIGMA_Y, phi) / safe
            obs[:, idx, 2] = np.einsum("bi,ij,bj->b", bra, SIGMA_Z, phi) / safe
        else:
            obs[:, idx, 0] = rho[:, 0, 1] + rho[:, 1, 0]
            obs[:, idx, 1] = 1j * (rho[:, 0, 1] - rho[:, 1, 0])
            obs[:, idx, 2] = rho[:, 0, 0] - rho[:, 1, 1]

    record(0)
    coef = dt / (1j * HBAR)
    for start in range(0, n_steps, _CHUNK_STEPS):
        chunk = min(_CHUNK_STEPS, n_steps - start)
        if suppress_noise:
            du_s = du_e = dv_s = dv_e = np.zeros((nb, chunk), dtype=complex)
        else:
            normals = np.empty((nb, chunk, k_normals))
            for bidx, stream in enumerate(streams):
                normals[bidx] = stream.standard_normal((chunk, k_normals))
            du_s, du_e, dv_s, dv_e = increments_from_normals(
                dt, cfg.variant, normals
            )
        for j in range(chunk):
            n = start + j
            if sse:
                overlap = np.einsum("bi,bi->b", bra, phi)
                newly_degenerate = alive & (np.abs(overlap) < _OVERLAP_FLOOR)
                if newly_degenerate.any():
                    ok_overlap[newly_degenerate] = False
                    alive[newly_degenerate] = False
                    death_step[newly_degenerate] = n
                safe = np.where(np.abs(overlap) > 0, overlap, 1.0)
                q = np.einsum("bi,ij,bj->b", bra, Q_OP, phi) / safe
            else:
                q = rho[:, 0, 1] + rho[:, 1, 0]
            if use_recursion:
                b = -(acc_d @ a_d) + (acc_d1 @ a_d1)
            else:
                b = np.zeros(nb, dtype=complex)

            if not sse:
                qr = rho[:, ::-1, :]          # sigma_x @ rho
                rq = rho[:, :, ::-1]          # rho @ sigma_x
                comm_q = qr - rq
                lin1 = coef * ((h @ rho - rho @ h) + b[:, None, None] * comm_q)
                if cfg.deterministic_order == "heun":
                    lin2 = coef * (
                        (h @ lin1 - lin1 @ h)
                        + b[:, None, None] * (lin1[:, ::-1, :] - lin1[:, :, ::-1])
                    )
                    det = lin1 + 0.5 * lin2
                else:
                    det = lin1
                noise = (
                    du_s[:, j, None, None] * (qr + rq - 2.0 * q[:, None, None] * rho)
                    - 1j * dv_s[:, j, None, None] * comm_q
                )
                new = rho + det + noise
                flat_max = np.max(np.abs(new.reshape(nb, 4)), axis=1)
                bad = alive & (~np.isfinite(flat_max) | (flat_max > _DIVERGENCE_NORM))
                if bad.any():
                    alive[bad] = False
                    death_step[bad] = n + 1
                if not alive.all():
                    # Dead lanes keep computing on benign values (and stay
                    # excluded from every output) so no NaN/inf propagates.
                    new[~alive] = 0.5 * IDENTITY
                rho = new
                if alive.any():
                    peak_norm = np.maximum(peak_norm,
                                           np.where(alive, flat_max, 1.0))
                    trace_err = np.abs(new[alive, 0, 0] + new[alive, 1, 1] - 1.0)
                    rel = trace_err / peak_norm[alive]
                    worst = float(np.max(rel))
                    if worst > _TRACE_TOL:
                        raise DivergenceError(
                            f"trace drift {worst:.3e} at step {n + 1}"
                        )
            else:
                q_phi = phi[:, ::-1]
                q_bra = bra[:, ::-1]
                dxi = du_s[:, j] - 1j * dv_s[:, j]
                dlam = du_s[:, j] + 1j * dv_s[:, j]
                ket_lin = coef * (phi @ h.T + b[:, None] * q_phi)
                bra_lin = -coef * (bra @ h + b[:, None] * q_bra)
                if cfg.deterministic_order == "heun":
                    ket_lin = ket_lin + 0.5 * coef * (
                        ket_lin @ h.T + b[:, None] * ket_lin[:, ::-1]
                    )
                    bra_lin = bra_lin - 0.5 * coef * (
                        bra_lin @ h + b[:, None] * bra_lin[:, ::-1]
                    )
                new_phi = phi + ket_lin + dxi[:, None] * (q_phi - q[:, None] * phi)
                new_bra = bra + bra_lin + dlam[:, None] * (q_bra - q[:, None] * bra)
                mags = np.maximum(
                    np.max(np.abs(new_phi), axis=1), np.max(np.abs(new_bra), axis=1)
                )
                bad = alive & (~np.isfinite(mags) | (mags > _DIVERGENCE_NORM))
                if bad.any():
                    alive[bad] = False
                    death_step[bad] = n + 1
                if not alive.all():
                    new_phi[~alive] = psi
                    new_bra[~alive] = psi.conj()
                phi, bra = new_phi, new_bra

            if use_recursion:
                src = q * (dt / HBAR) + du_e[:, j]
                acc_d = decay_d[None, :] * (acc_d + src[:, None])
                acc_d1 = decay_d1[None, :] * (acc_d1 + dv_e[:, j, None])
            idx = out_pos[n + 1]
            if idx >= 0:
                record(idx)

    inc_mask = np.ones((nb, n_out), dtype=bool)
    dead = np.nonzero(~alive)[0]
    for i in dead:
        inc_mask[i] = out_steps < death_step[i]
    w = inc_mask[:, :, None]
    sum_obs = np.where(w, obs, 0.0).sum(axis=0)
    sumsq_re = np.where(w, obs.real**2, 0.0).sum(axis=0)
    sumsq_im = np.where(w, obs.imag**2, 0.0).sum(axis=0)
    divergent = tuple(
        (int(indices[i]), int(death_step[i])) for i in dead if ok_overlap[i]
    )
    degenerate = tuple(
        (int(indices[i]), int(death_step[i])) for i in dead if not ok_overlap[i]
    )
    return BlockResult(
        times=times, sum_obs=sum_obs, sumsq_re=sumsq_re, sumsq_im=sumsq_im,
        n_included=inc_mask.sum(axis=0), divergent_steps=divergent,
        degenerate_steps=degenerate,
    )
