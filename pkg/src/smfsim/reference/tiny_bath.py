"""Brute-force spin-boson references on a truncated few-mode bath.

The full model couples the two-level system (coupling operator Q = sigma_x) to
a handful of harmonic modes,

    H = h_S + sum_n omega_n (a_n^dag a_n + 1/2) + Q * B,
    B = -sum_n kappa_n x_n,     x_n = (a_n + a_n^dag) / sqrt(2 omega_n),

in natural units (hbar = 1, unit mass).  At desk scale (total dimension
2 * prod fock_dim <= 512) the same physics admits two independent treatments:

* tiny_bath_exact -- RK4 on the Liouville-von Neumann equation for the full
  density matrix; the brute-force oracle.
* tiny_bath_smf -- the stochastic unraveling, each trajectory carried as a
  product rho_S x rho_1 x ... of per-mode factors, either with mean-field
  commutators and centered noise operators (scheme "smf") or in the plain
  uncentered form (scheme "plain").  Ensemble means converge to the oracle;
  lambda_stat(t) = mean Tr(D^dag D) - Tr(mean(D)^dag mean(D)) tracks the
  sampling spread.

Factor updates mirror the production engine: Heun on the frozen-coefficient
drift, explicit Euler noise, Ito left-endpoint values for every coefficient.
Only the complex (exact) noise variant is offered: with it the per-mode
factorization is mean-exact because every inter-factor Ito cross term carries
a zero-mean coefficient (E[du^2] = E[dv^2] = E[du dv] = 0); the real variant
has no such property.  Plain-scheme factors do not conserve their traces
pathwise (the uncentered anticommutator has Tr {B, rho} = 2<B> != 0); the
reduced contribution of a trajectory is rho_S times the product of bath
factor traces, which keeps the ensemble mean faithful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine import IDENTITY, Q_OP, SpinBosonParams
from ..errors import ConfigurationError, DivergenceError, TruncationError
from ..kernels import HBAR
from ..noise import increments_from_normals

_TOP_POPULATION_INITIAL = 1e-6
_TOP_POPULATION_RUNTIME = 1e-4
_PURITY_TOL = 1e-8
_TRACE_TOL = 1e-12
_DIVERGENCE_NORM = 1e6
_MAX_TOTAL_DIM = 512
_KRON_CHUNK = 2048

SCHEMES = ("smf", "plain")


@dataclass(frozen=True)
class BathMode:
    """One harmonic mode: frequency, linear coupling, Fock truncation."""

    omega: float
    kappa: float
    fock_dim: int

    def __post_init__(self):
        if not self.omega > 0:
            raise ConfigurationError("mode frequency must be positive")
        if not np.isfinite(self.kappa):
            raise ConfigurationError("mode coupling must be finite")
        if int(self.fock_dim) != self.fock_dim or self.fock_dim < 4:
            raise ConfigurationError("fock_dim must be an integer >= 4")


@dataclass(frozen=True)
class TinyBathSpec:
    """Few-mode bath: modes (omega, kappa, fock_dim) and temperature kT."""

    modes: tuple
    kT: float

    def __post_init__(self):
        modes = tuple(
            m if isinstance(m, BathMode) else BathMode(*m) for m in self.modes
        )
        object.__setattr__(self, "modes", modes)
        if len(modes) < 1:
            raise ConfigurationError("at least one bath mode is required")
        if not self.kT > 0:
            raise ConfigurationError("kT must be positive")
        if self.total_dim > _MAX_TOTAL_DIM:
            raise ConfigurationError(
                f"total dimension {self.total_dim} exceeds {_MAX_TOTAL_DIM}"
            )
        for i, mode in enumerate(modes):
            top = thermal_mode_density(mode.omega, self.kT, mode.fock_dim)[-1, -1]
            if top.real >= _TOP_POPULATION_INITIAL:
                raise ConfigurationError(
                    f"thermal top-level population {top.real:.2e} of mode {i} "
                    f"is not < {_TOP_POPULATION_INITIAL}; increase fock_dim"
                )

    @property
    def bath_dim(self) -> int:
        return int(np.prod([m.fock_dim for m in self.modes]))

    @property
    def total_dim(self) -> int:
        return 2 * self.bath_dim

    def mean_b_squared_thermal(self) -> float:
        """<B^2> in the thermal bath state: sum kappa^2 coth(omega/2kT)/(2 omega)."""
        return float(
            sum(
                m.kappa**2 / (2.0 * m.omega * np.tanh(m.omega / (2.0 * self.kT)))
                for m in self.modes
            )
        )


def lowering_operator(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1.0, dim)), k=1).astype(complex)


def mode_operators(omega: float, dim: int):
    """(x, h) for one mode: x = (a + a^dag)/sqrt(2 omega), h = omega (n + 1/2)."""
    a = lowering_operator(dim)
    x = (a + a.conj().T) / np.sqrt(2.0 * omega)
    h = omega * np.diag(np.arange(dim) + 0.5).astype(complex)
    return x, h


def thermal_mode_density(omega: float, kT: float, dim: int) -> np.ndarray:
    """Truncated thermal state, renormalized on the kept levels."""
    weights = np.exp(-omega * np.arange(dim) / kT)
    return np.diag(weights / weights.sum()).astype(complex)


def _kron_chain(mats) -> np.ndarray:
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def _embed(spec: TinyBathSpec, index: int, op: np.ndarray) -> np.ndarray:
    """Lift a single-mode operator to the bath product space."""
    mats = [np.eye(m.fock_dim, dtype=complex) for m in spec.modes]
    mats[index] = op
    return _kron_chain(mats)


@dataclass(frozen=True)
class FullOperators:
    """Operators on the full system x bath space, plus bookkeeping masks."""

    h_total: np.ndarray
    q_total: np.ndarray
    b_total: np.ndarray
    top_masks: tuple  # per-mode boolean diagonal masks of the top Fock level


def full_space_operators(spec: TinyBathSpec, params: SpinBosonParams) -> FullOperators:
    d_bath = spec.bath_dim
    eye_bath = np.eye(d_bath, dtype=complex)
    h_bath = np.zeros((d_bath, d_bath), dtype=complex)
    b_bath = np.zeros((d_bath, d_bath), dtype=complex)
    for i, mode in enumerate(spec.modes):
        x, h = mode_operators(mode.omega, mode.fock_dim)
        h_bath += _embed(spec, i, h)
        b_bath -= mode.kappa * _embed(spec, i, x)
    h_total = (
        np.kron(params.h_matrix().astype(complex), eye_bath)
        + np.kron(IDENTITY.astype(complex), h_bath)
        + np.kron(Q_OP.astype(complex), b_bath)
    )
    masks = []
    for i, mode in enumerate(spec.modes):
        level = np.zeros(mode.fock_dim)
        level[-1] = 1.0
        bath_mask = _kron_chain(
            [
                level if j == i else np.ones(m.fock_dim)
                for j, m in enumerate(spec.modes)
            ]
        )
        masks.append(np.concatenate([bath_mask, bath_mask]).astype(bool))
    return FullOperators(
        h_total=h_total,
        q_total=np.kron(Q_OP.astype(complex), eye_bath),
        b_total=np.kron(IDENTITY.astype(complex), b_bath),
        top_masks=tuple(masks),
    )


def initial_total_density(spec: TinyBathSpec, params: SpinBosonParams) -> np.ndarray:
    factors = [params.rho0().astype(complex)]
    factors += [
        thermal_mode_density(m.omega, spec.kT, m.fock_dim) for m in spec.modes
    ]
    return _kron_chain(factors)


def reduce_to_system(d_matrix: np.ndarray, bath_dim: int) -> np.ndarray:
    """Partial trace over the bath: (2*d_bath)^2 matrix -> 2x2."""
    return np.einsum("aibi->ab", d_matrix.reshape(2, bath_dim, 2, bath_dim))


def _validate_grid(dt: float, t_max: float) -> int:
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    n = round(t_max / dt)
    if n < 1 or abs(n * dt - t_max) > 1e-9 * max(t_max, 1.0):
        raise ConfigurationError("t_max must be an integer number of steps")
    return n


def _output_steps(n_steps: int, stride: int) -> np.ndarray:
    if stride < 1:
        raise ConfigurationError("output stride must be >= 1")
    steps = np.arange(0, n_steps + 1, stride)
    if steps[-1] != n_steps:
        steps = np.append(steps, n_steps)
    return steps


@dataclass(frozen=True)
class TinyBathExactResult:
    times: np.ndarray
    reduced: np.ndarray  # (T, 2, 2) reduced system density
    trace_dev: float  # max |Tr D - 1| over the run
    purity_dev: float  # max |Tr D^2 - Tr D0^2| over the run
    peak_top_population: float  # worst top-Fock-level population seen


def tiny_bath_exact(spec: TinyBathSpec, params: SpinBosonParams, dt: float,
                    t_max: float, output_stride: int = 1) -> TinyBathExactResult:
    """RK4 on i hbar dD/dt = [H, D] over the full truncated space."""
    n = _validate_grid(dt, t_max)
    ops = full_space_operators(spec, params)
    h = ops.h_total
    d = initial_total_density(spec, params)
    purity0 = float(np.sum(np.abs(d) ** 2))

    out_steps = _output_steps(n, output_stride)
    emit = np.full(n + 1, -1, dtype=int)
    emit[out_steps] = np.arange(len(out_steps))
    reduced = np.zeros((len(out_steps), 2, 2), dtype=complex)
    reduced[0] = reduce_to_system(d, spec.bath_dim)

    def rhs(m):
        return (-1j / HBAR) * (h @ m - m @ h)

    trace_dev = 0.0
    purity_dev = 0.0
    peak_top = 0.0
    for k in range(n):
        k1 = rhs(d)
        k2 = rhs(d + 0.5 * dt * k1)
        k3 = rhs(d + 0.5 * dt * k2)
        k4 = rhs(d + dt * k3)
        d = d + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

        diag = np.einsum("ii->i", d).real
        for i, mask in enumerate(ops.top_masks):
            pop = float(diag[mask].sum())
            peak_top = max(peak_top, pop)
            if pop > _TOP_POPULATION_RUNTIME:
                raise TruncationError(
                    f"top Fock-level population {pop:.2e} in mode {i} at step "
                    f"{k + 1} exceeds {_TOP_POPULATION_RUNTIME}; increase fock_dim"
                )
        trace_dev = max(trace_dev, abs(float(diag.sum()) - 1.0))
        purity_dev = max(purity_dev, abs(float(np.sum(np.abs(d) ** 2)) - purity0))
        if trace_dev > _TRACE_TOL * 10 or purity_dev > _PURITY_TOL:
            raise ConfigurationError(
                f"conservation drift at step {k + 1} (trace {trace_dev:.2e}, "
                f"purity {purity_dev:.2e}); reduce dt"
            )
        i = emit[k + 1]
        if i >= 0:
            reduced[i] = reduce_to_system(d, spec.bath_dim)

    return TinyBathExactResult(
        times=out_steps * dt, reduced=reduced, trace_dev=trace_dev,
        purity_dev=purity_dev, peak_top_population=peak_top,
    )


def _frozen_drift(h_eff: np.ndarray, rho: np.ndarray, dt: float) -> np.ndarray:
    """Order-2 expansion of the frozen-coefficient commutator flow (batched)."""

    def lin(x):
        return (dt / (1j * HBAR)) * (h_eff @ x - x @ h_eff)

    first = lin(rho)
    return first + 0.5 * lin(first)


def _step_system_factor(rho_s, q, b_mean, h_s, du_s, dv_s, dt, centered):
    """One Ito step of the system factors (batched over trajectories)."""
    if centered:
        h_eff = h_s[None, :, :] + b_mean[:, None, None] * Q_OP[None, :, :]
    else:
        h_eff = np.broadcast_to(h_s, rho_s.shape)
    qr = Q_OP[None, :, :] @ rho_s
    rq = rho_s @ Q_OP[None, :, :]
    noise = du_s[:, None, None] * (qr + rq) - 1j * dv_s[:, None, None] * (qr - rq)
    if centered:
        noise -= 2.0 * (du_s * q)[:, None, None] * rho_s
    return rho_s + _frozen_drift(h_eff, rho_s, dt) + noise


def _step_mode_factor(rho_n, q, b_n_mean, x_op, h_op, kappa, du_e, dv_e, dt,
                      centered):
    """One Ito step of one bath-mode factor (batched over trajectories).

    The mode's coupling operator is B_n = -kappa * x; environment noise pairs
    (dv_e with the anticommutator, du_e with the commutator), the mirror of
    the system side.
    """
    b_op = -kappa * x_op
    if centered:
        h_eff = h_op[None, :, :] + q[:, None, None] * b_op[None, :, :]
    else:
        h_eff = np.broadcast_to(h_op, rho_n.shape)
    br = b_op[None, :, :] @ rho_n
    rb = rho_n @ b_op[None, :, :]
    noise = dv_e[:, None, None] * (br + rb) - 1j * du_e[:, None, None] * (br - rb)
    if centered:
        noise -= 2.0 * (dv_e * b_n_mean)[:, None, None] * rho_n
    return rho_n + _frozen_drift(h_eff, rho_n, dt) + noise


def _mean_total_density(rho_s, factors, include):
    """Mean of rho_S x rho_1 x ... over the included trajectories.

    Sums of Kronecker products are assembled as matrix products: for each
    chunk the bath factors are combined once, then sum_t kron(A_t, Z_t) is a
    (4, N) @ (N, dZ^2) contraction reshaped back to matrix layout.
    """
    idx = np.nonzero(include)[0]
    dims = [f.shape[-1] for f in factors]
    d_bath = int(np.prod(dims))
    total = np.zeros((2 * d_bath, 2 * d_bath), dtype=complex)
    for lo in range(0, len(idx), _KRON_CHUNK):
        sel = idx[lo : lo + _KRON_CHUNK]
        z = factors[0][sel]
        for f in factors[1:]:
            zf = np.einsum("tab,tcd->tacbd", z, f[sel])
            z = zf.reshape(len(sel), z.shape[1] * f.shape[1], -1)
        a = rho_s[sel].reshape(len(sel), 4)
        m = a.T @ z.reshape(len(sel), d_bath * d_bath)
        m = m.reshape(2, 2, d_bath, d_bath).transpose(0, 2, 1, 3)
        total += m.reshape(2 * d_bath, 2 * d_bath)
    return total / max(len(idx), 1)


@dataclass(frozen=True)
class TinyBathSmfResult:
    times: np.ndarray
    reduced_mean: np.ndarray  # (T, 2, 2) ensemble-mean reduced density
    mean_sx: np.ndarray  # (T,) complex ensemble means
    mean_sy: np.ndarray
    mean_sz: np.ndarray
    err_sx: np.ndarray  # (T,) combined stderr sqrt((var_re + var_im)/n)
    err_sy: np.ndarray
    err_sz: np.ndarray
    lambda_stat: np.ndarray  # (T,)
    n_included: np.ndarray  # (T,) trajectories contributing at each time
    n_traj: int
    n_divergent: int
    scheme: str


def tiny_bath_smf(spec: TinyBathSpec, params: SpinBosonParams, dt: float,
                  t_max: float, n_traj: int, scheme: str,
                  stream: np.random.Generator, output_stride: int = 1,
                  divergence_threshold: float = 0.01) -> TinyBathSmfResult:
    """Stochastic unraveling on the tiny bath, vectorized over trajectories."""
    n = _validate_grid(dt, t_max)
    if scheme not in SCHEMES:
        raise ConfigurationError(f"unknown scheme {scheme!r}")
    if n_traj < 1:
        raise ConfigurationError("n_traj must be >= 1")
    centered = scheme == "smf"
    h_s = params.h_matrix().astype(complex)
    mode_ops = [mode_operators(m.omega, m.fock_dim) for m in spec.modes]

    rho_s = np.broadcast_to(params.rho0().astype(complex), (n_traj, 2, 2)).copy()
    factors = [
        np.broadcast_to(
            thermal_mode_density(m.omega, spec.kT, m.fock_dim),
            (n_traj, m.fock_dim, m.fock_dim),
        ).copy()
        for m in spec.modes
    ]

    out_steps = _output_steps(n, output_stride)
    emit = np.full(n + 1, -1, dtype=int)
    emit[out_steps] = np.arange(len(out_steps))
    n_out = len(out_steps)

    sum_obs = np.zeros((3, n_out), dtype=complex)
    sumsq_re = np.zeros((3, n_out))
    sumsq_im = np.zeros((3, n_out))
    lam = np.zeros(n_out)
    n_included = np.zeros(n_out, dtype=int)
    reduced_mean = np.zeros((n_out, 2, 2), dtype=complex)

    alive = np.ones(n_traj, dtype=bool)
    death_step = np.full(n_traj, n + 1, dtype=int)
    peak = np.ones(n_traj)

    def record(step):
        i = emit[step]
        if i < 0:
            return
        include = death_step > step
        if scheme == "plain":
            # Tr_E of a product trajectory is rho_S times the bath traces.
            w = np.ones(n_traj, dtype=complex)
            for f in factors:
                w = w * np.einsum("tii->t", f)
            contrib = rho_s * w[:, None, None]
        else:
            contrib = rho_s
        obs = np.stack(
            [
                contrib[:, 0, 1] + contrib[:, 1, 0],
                1j * (contrib[:, 0, 1] - contrib[:, 1, 0]),
                contrib[:, 0, 0] - contrib[:, 1, 1],
            ]
        )
        obs = np.where(include[None, :], obs, 0.0)
        sum_obs[:, i] = obs.sum(axis=1)
        sumsq_re[:, i] = (obs.real**2).sum(axis=1)
        sumsq_im[:, i] = (obs.imag**2).sum(axis=1)
        n_included[i] = int(include.sum())
        reduced_mean[i] = contrib[include].sum(axis=0) / max(int(include.sum()), 1)
        # lambda_stat: Tr(D^dag D) factorizes over the product structure.
        tr2 = np.einsum("tab,tab->t", rho_s.conj(), rho_s)
        for f in factors:
            tr2 = tr2 * np.einsum("tab,tab->t", f.conj(), f)
        m = _mean_total_density(rho_s, factors, include)
        lam[i] = float(tr2[include].mean().real - np.sum(np.abs(m) ** 2))

    record(0)
    for k in range(n):
        normals = stream.standard_normal((n_traj, 4))
        du_s, du_e, dv_s, dv_e = increments_from_normals(dt, "complex", normals)

        if centered:
            q = rho_s[:, 0, 1] + rho_s[:, 1, 0]
            b_modes = [
                -mode.kappa * np.einsum("tab,ba->t", factors[j], mode_ops[j][0])
                for j, mode in enumerate(spec.modes)
            ]
            b_mean = np.sum(b_modes, axis=0)
        else:
            q = b_mean = np.zeros(n_traj, dtype=complex)
            b_modes = [q] * len(spec.modes)

        rho_s = _step_system_factor(rho_s, q, b_mean, h_s, du_s, dv_s, dt,
                                    centered)
        for j, mode in enumerate(spec.modes):
            x_op, h_op = mode_ops[j]
            factors[j] = _step_mode_factor(
                factors[j], q, b_modes[j], x_op, h_op, mode.kappa, du_e, dv_e,
                dt, centered,
            )

        # Divergence and trace accounting, mirroring the engine conventions.
        worst = np.max(np.abs(rho_s), axis=(1, 2))
        for f in factors:
            worst = np.maximum(worst, np.max(np.abs(f), axis=(1, 2)))
        bad = alive & (~np.isfinite(worst) | (worst > _DIVERGENCE_NORM))
        if np.any(bad):
            death_step[bad] = k + 1
            alive &= ~bad
            rho_s[bad] = 0.5 * IDENTITY
            for f, mode in zip(factors, spec.modes):
                f[bad] = thermal_mode_density(mode.omega, spec.kT, mode.fock_dim)
        peak = np.where(alive, np.maximum(peak, worst), peak)
        if centered and np.any(alive):
            tr_dev = np.abs(np.einsum("tii->t", rho_s) - 1.0)
            for f in factors:
                tr_dev = np.maximum(tr_dev, np.abs(np.einsum("tii->t", f) - 1.0))
            leak = alive & (tr_dev > _TRACE_TOL * peak)
            if np.any(leak):
                t = int(np.nonzero(leak)[0][0])
                raise DivergenceError(
                    f"trace drift {tr_dev[t]:.3e} in trajectory {t} at step {k + 1}"
                )
        record(k + 1)

    n_divergent = int(n_traj - alive.sum())
    if n_divergent > divergence_threshold * n_traj:
        raise DivergenceError(
            f"{n_divergent}/{n_traj} divergent trajectories exceed the "
            f"{divergence_threshold:.1%} threshold for scheme {scheme!r}"
        )

    counts = np.maximum(n_included, 1)
    mean_obs = sum_obs / counts
    var = (
        sumsq_re / counts - mean_obs.real**2
        + sumsq_im / counts - mean_obs.imag**2
    )
    err = np.sqrt(np.maximum(var, 0.0) / counts)

    return TinyBathSmfResult(
        times=out_steps * dt, reduced_mean=reduced_mean,
        mean_sx=mean_obs[0], mean_sy=mean_obs[1], mean_sz=mean_obs[2],
        err_sx=err[0], err_sy=err[1], err_sz=err[2],
        lambda_stat=lam, n_included=n_included, n_traj=n_traj,
        n_divergent=n_divergent, scheme=scheme,
    )
