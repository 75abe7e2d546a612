"""Monte Carlo and pathwise checks of the unraveling identities.

Three statements about the stochastic scheme are verifiable without trusting
any long-time integration:

* one_step_mean_check -- the one-step exactness identity.  Averaged over the
  noise, a single Ito step of the factorized trajectory D = rho_S x rho_E
  reproduces the Liouville-von Neumann increment,

      E[dD] = (dt / i hbar) [H, D],

  element by element on the full product space, for both the mean-field
  ("smf") and the uncentered ("plain") scheme.  The check draws n_samples
  one-step evolutions from a pure separable state and reports the worst
  |deviation| / (4 stderr) over matrix elements.

* lambda_stat_growth_check -- the first-step growth rate of the sampling
  spread lambda_stat = mean Tr(D^dag D) - Tr(mean(D)^dag mean(D)).  From a
  pure separable state the schemes predict

      smf:   d lambda = (2 dt / hbar) [(<Q^2> - <Q>^2) + (<B^2> - <B>^2)],
      plain: d lambda = (2 dt / hbar) [<Q^2> + <B^2>],

    which is why centering pays: only the quantum fluctuations of Q and B
    drive the spread, not their full second moments.  The check measures the
    empirical first-step d lambda with a jackknife standard error and returns
    both predictions alongside it.

* single_mode_moment_check -- pathwise constancy of the environment moments.
  Along every noise path of one bath mode the centered second moments

      sigma_-- = <aa> - <a>^2,   sigma_++ = <a^dag a^dag> - <a^dag>^2,
      sigma_-+ = <a a^dag> - <a><a^dag>

  stay frozen at their thermal values (0, 0, N_bar + 1), with
  coth(hbar omega / 2 kT) = 2 N_bar + 1.  Only first moments move; the noise
  is engineered so every path keeps the thermal covariance.  The check
  integrates a thermal mode under a constant mean-field drive <Q> = 1 and
  records the worst drift of the three moments.

The mean checks start the bath modes in their ground states: the growth
formulas and the purity-sensitive exactness statement assume a pure separable
initial TotalDensity, and the truncated vacuum is the pure bath state that
needs no extra machinery.  A mixed initial system state is rejected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine import Q_OP, SpinBosonParams
from ..errors import ConfigurationError
from ..kernels import HBAR
from ..noise import increments_from_normals
from .tiny_bath import (
    SCHEMES,
    TinyBathSpec,
    _kron_chain,
    _step_mode_factor,
    _step_system_factor,
    full_space_operators,
    lowering_operator,
    mode_operators,
    thermal_mode_density,
)

_PURITY_TOL = 1e-9
_MAX_STEP_ACTION = 1e-2  # dt * ||H|| / hbar must stay below this
_CHUNK_BUDGET = 4.0e6  # complex entries per chunk of full-space products
_ZERO_STDERR_ATOL = 1e-12
_MOMENT_PATHS = 3
_MOMENT_TAIL_TARGET = 1e-9
_MAX_MOMENT_DIM = 64


def _pure_system_state(params: SpinBosonParams) -> np.ndarray:
    rho_s = params.rho0()
    purity = np.trace(rho_s @ rho_s).real
    if abs(purity - 1.0) > _PURITY_TOL:
        raise ConfigurationError(
            "mean checks require a pure initial system state "
            f"(Tr rho^2 = {purity:.6f}, need 1); put the Bloch vector on the "
            "unit sphere"
        )
    return rho_s


def _ground_state(dim: int) -> np.ndarray:
    rho = np.zeros((dim, dim), dtype=complex)
    rho[0, 0] = 1.0
    return rho


def _coherent_state(alpha: float, dim: int) -> np.ndarray:
    """Truncated coherent state |alpha><alpha|, renormalized on kept levels."""
    log_fact = np.cumsum(np.concatenate([[0.0], np.log(np.arange(1.0, dim))]))
    psi = np.exp(np.arange(dim) * np.log(complex(alpha)) - 0.5 * log_fact)
    psi /= np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def _bath_pure_states(spec: TinyBathSpec, mode_displacements) -> list:
    if mode_displacements is None:
        return [_ground_state(m.fock_dim) for m in spec.modes]
    if len(mode_displacements) != len(spec.modes):
        raise ConfigurationError(
            "mode_displacements must give one displacement per bath mode"
        )
    return [
        _coherent_state(a, m.fock_dim) if a != 0.0 else _ground_state(m.fock_dim)
        for a, m in zip(mode_displacements, spec.modes)
    ]


def _validate_mean_check_args(spec, params, dt, n_samples, scheme):
    if scheme not in SCHEMES:
        raise ConfigurationError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    if not (np.isfinite(dt) and dt > 0):
        raise ConfigurationError("dt must be positive and finite")
    if int(n_samples) != n_samples or n_samples < 16:
        raise ConfigurationError("n_samples must be an integer >= 16")
    ops = full_space_operators(spec, params)
    h_norm = float(np.abs(np.linalg.eigvalsh(ops.h_total)).max())
    if dt * h_norm / HBAR > _MAX_STEP_ACTION:
        raise ConfigurationError(
            f"dt * ||H|| / hbar = {dt * h_norm / HBAR:.3e} exceeds "
            f"{_MAX_STEP_ACTION}; reduce dt"
        )
    return ops


def _one_step_factors(spec, params, rho_s0, mode_states, dt, scheme, normals):
    """Advance one Ito step from the shared separable state (batched)."""
    n = normals.shape[0]
    centered = scheme == "smf"
    du_s, du_e, dv_s, dv_e = increments_from_normals(dt, "complex", normals)
    h_s = params.h_matrix()
    q0 = np.full(n, np.trace(Q_OP @ rho_s0).real)
    b_means = [
        np.trace(-mode.kappa * mode_operators(mode.omega, mode.fock_dim)[0] @ rho_n).real
        for mode, rho_n in zip(spec.modes, mode_states)
    ]
    b_total = np.full(n, sum(b_means))
    rho_s1 = _step_system_factor(
        np.broadcast_to(rho_s0, (n, 2, 2)), q0, b_total, h_s, du_s, dv_s, dt,
        centered,
    )
    new_modes = []
    for mode, rho_n, b_mean in zip(spec.modes, mode_states, b_means):
        x_op, h_op = mode_operators(mode.omega, mode.fock_dim)
        new_modes.append(
            _step_mode_factor(
                np.broadcast_to(rho_n, (n,) + rho_n.shape), q0,
                np.full(n, b_mean), x_op, h_op, mode.kappa, du_e, dv_e, dt,
                centered,
            )
        )
    return rho_s1, new_modes


def _chain_bath(mode_factors) -> np.ndarray:
    """Kronecker-chain per-trajectory bath factors: (n, dB, dB)."""
    z = mode_factors[0]
    for f in mode_factors[1:]:
        zf = np.einsum("tab,tcd->tacbd", z, f)
        z = zf.reshape(z.shape[0], z.shape[1] * f.shape[1], -1)
    return z


@dataclass(frozen=True)
class OneStepMeanReport:
    """Element-wise comparison of mean dD against (dt / i hbar)[H, D]."""

    deviation: np.ndarray  # (2 dB, 2 dB) complex, mean dD minus the target
    stderr: np.ndarray  # (2 dB, 2 dB) combined stderr sqrt((var_re + var_im)/n)
    max_ratio: float  # worst |deviation| / (4 stderr)
    n_samples: int
    scheme: str
    dt: float


def one_step_mean_check(spec: TinyBathSpec, params: SpinBosonParams, dt: float,
                        n_samples: int, scheme: str,
                        stream: np.random.Generator,
                        mode_displacements: tuple | None = None) -> OneStepMeanReport:
    """Monte Carlo test of the one-step exactness identity E[dD] = (dt/i hbar)[H, D].

    The trajectory starts from a pure separable state (system state from
    params, each mode in its ground state or, with mode_displacements, in a
    small coherent state), takes a single Ito step of the chosen scheme, and
    the sample mean of dD is compared to the Liouville-von Neumann increment
    element by element.  A modest displacement is the recommended setup: from
    the bare vacuum some matrix elements receive no pathwise noise at all, so
    their finite-dt integrator bias - an O(dt^2) nuisance outside the O(dt)
    identity under test - has no stderr to hide behind and the ratio diverges;
    a coherent state has support on every Fock level and gives each element a
    genuine O(sqrt(dt)) sampling error.  Elements whose sampled increment
    still has exactly zero variance must match the target to roundoff;
    everywhere else the report carries |deviation| / (4 stderr).
    """
    ops = _validate_mean_check_args(spec, params, dt, n_samples, scheme)
    n_samples = int(n_samples)
    rho_s0 = _pure_system_state(params)
    mode_states = _bath_pure_states(spec, mode_displacements)
    d0 = np.kron(rho_s0, _kron_chain(mode_states))
    target = (dt / (1j * HBAR)) * (ops.h_total @ d0 - d0 @ ops.h_total)

    dim = spec.total_dim
    chunk = max(256, min(65536, int(_CHUNK_BUDGET / dim**2)))
    total = np.zeros((dim, dim), dtype=complex)
    sumsq_re = np.zeros((dim, dim))
    sumsq_im = np.zeros((dim, dim))
    done = 0
    while done < n_samples:
        c = min(chunk, n_samples - done)
        normals = stream.standard_normal((c, 4))
        rho_s1, new_modes = _one_step_factors(
            spec, params, rho_s0, mode_states, dt, scheme, normals)
        z = _chain_bath(new_modes)
        d1 = np.einsum("tab,tij->taibj", rho_s1, z).reshape(c, dim, dim)
        delta = d1 - d0[None, :, :]
        total += delta.sum(axis=0)
        sumsq_re += (delta.real**2).sum(axis=0)
        sumsq_im += (delta.imag**2).sum(axis=0)
        done += c

    mean = total / n_samples
    var_re = (sumsq_re - n_samples * mean.real**2) / (n_samples - 1)
    var_im = (sumsq_im - n_samples * mean.imag**2) / (n_samples - 1)
    stderr = np.sqrt(np.clip(var_re + var_im, 0.0, None) / n_samples)
    deviation = mean - target
    ratio = np.zeros_like(stderr)
    live = stderr > 0
    ratio[live] = np.abs(deviation[live]) / (4.0 * stderr[live])
    dead_bad = ~live & (np.abs(deviation) > _ZERO_STDERR_ATOL)
    ratio[dead_bad] = np.inf
    return OneStepMeanReport(
        deviation=deviation,
        stderr=stderr,
        max_ratio=float(ratio.max()),
        n_samples=n_samples,
        scheme=scheme,
        dt=dt,
    )


@dataclass(frozen=True)
class LambdaGrowthReport:
    """First-step growth of lambda_stat against the scheme predictions."""

    empirical: float  # lambda_stat(dt) - lambda_stat(0), the latter exactly 0
    predicted_smf: float  # (2 dt / hbar) [var Q + var B] on the initial state
    predicted_plain: float  # (2 dt / hbar) [<Q^2> + <B^2>] on the initial state
    stderr: float  # jackknife standard error of the empirical value
    n_samples: int
    scheme: str


def lambda_stat_growth_check(spec: TinyBathSpec, params: SpinBosonParams,
                             dt: float, n_samples: int, scheme: str,
                             stream: np.random.Generator) -> LambdaGrowthReport:
    """Measure the first-step d lambda_stat and compare with the scheme formulas.

    All trajectories share the pure separable initial state (system from
    params, modes in their ground states), so lambda_stat(0) = 0 exactly and
    the first step isolates the predicted growth rate.  The empirical value
    is mean Tr(D^dag D) - Tr(mean(D)^dag mean(D)) after one step; its
    standard error comes from a leave-one-out jackknife, which respects the
    nonlinearity of the Tr(mean^dag mean) term.
    """
    _validate_mean_check_args(spec, params, dt, n_samples, scheme)
    n_samples = int(n_samples)
    rho_s0 = _pure_system_state(params)
    mode_states = [_ground_state(m.fock_dim) for m in spec.modes]

    q_sq = np.trace(Q_OP @ Q_OP @ rho_s0).real
    q_mean = np.trace(Q_OP @ rho_s0).real
    b_sq = []
    b_mean = []
    for mode, rho_n in zip(spec.modes, mode_states):
        b_op = -mode.kappa * mode_operators(mode.omega, mode.fock_dim)[0]
        b_sq.append(np.trace(b_op @ b_op @ rho_n).real)
        b_mean.append(np.trace(b_op @ rho_n).real)
    var_b = sum(s - m**2 for s, m in zip(b_sq, b_mean))
    # <B^2> for the product state: per-mode second moments plus cross terms.
    mean_b_sq = sum(b_sq) + sum(b_mean) ** 2 - sum(m**2 for m in b_mean)
    predicted_smf = (2.0 * dt / HBAR) * ((q_sq - q_mean**2) + var_b)
    predicted_plain = (2.0 * dt / HBAR) * (q_sq + mean_b_sq)

    dim = spec.total_dim
    d_bath = spec.bath_dim
    chunk = max(256, min(65536, int(_CHUNK_BUDGET / dim**2)))
    kept = []  # (rho_s1, bath_chain) per chunk, reused for the jackknife pass
    tr_sq = np.empty(n_samples)
    s2 = np.zeros((dim, dim), dtype=complex)
    done = 0
    while done < n_samples:
        c = min(chunk, n_samples - done)
        normals = stream.standard_normal((c, 4))
        rho_s1, new_modes = _one_step_factors(
            spec, params, rho_s0, mode_states, dt, scheme, normals)
        z = _chain_bath(new_modes)
        # Tr(D^dag D) factorizes: the Frobenius norm is multiplicative under
        # Kronecker products.
        tr_sq[done : done + c] = (
            np.abs(rho_s1).reshape(c, -1) ** 2).sum(axis=1) * (
            np.abs(z).reshape(c, -1) ** 2).sum(axis=1)
        m = rho_s1.reshape(c, 4).T @ z.reshape(c, d_bath * d_bath)
        m = m.reshape(2, 2, d_bath, d_bath).transpose(0, 2, 1, 3)
        s2 += m.reshape(dim, dim)
        kept.append((rho_s1, z))
        done += c

    s1 = float(tr_sq.sum())
    t2 = float((np.abs(s2) ** 2).sum())
    n = n_samples
    empirical = s1 / n - t2 / n**2

    # Leave-one-out values from the same accumulators: removing trajectory i
    # shifts S2 by -D_i, and Tr((S2 - D_i)^dag (S2 - D_i)) expands into the
    # stored cross term Re Tr(S2^dag D_i).
    g = s2.conj().reshape(2, d_bath, 2, d_bath)
    cross = np.empty(n_samples)
    done = 0
    for rho_s1, z in kept:
        c = rho_s1.shape[0]
        cross[done : done + c] = np.einsum(
            "aibj,tab,tij->t", g, rho_s1, z).real
        done += c
    loo = (s1 - tr_sq) / (n - 1) - (t2 - 2.0 * cross + tr_sq) / (n - 1) ** 2
    stderr = float(np.sqrt((n - 1) / n * ((loo - loo.mean()) ** 2).sum()))

    return LambdaGrowthReport(
        empirical=float(empirical),
        predicted_smf=float(predicted_smf),
        predicted_plain=float(predicted_plain),
        stderr=stderr,
        n_samples=n_samples,
        scheme=scheme,
    )


@dataclass(frozen=True)
class MomentCheckReport:
    """Worst pathwise drift of the environment second moments."""

    n_bar: float
    fock_dim: int
    n_steps: int
    n_paths: int
    max_dev_mm: float  # worst |sigma_--|
    max_dev_pp: float  # worst |sigma_++|
    max_dev_mp: float  # worst |sigma_-+ - (N_bar + 1)|

    @property
    def max_dev(self) -> float:
        return max(self.max_dev_mm, self.max_dev_pp, self.max_dev_mp)


def _moment_fock_dim(omega_n: float, kT: float) -> int:
    """Smallest truncation whose thermal tail cannot spoil a 1e-6 check."""
    q = np.exp(-HBAR * omega_n / kT)
    for dim in range(6, _MAX_MOMENT_DIM + 1):
        if dim * (1.0 - q) * q ** (dim - 1) < _MOMENT_TAIL_TARGET:
            return dim
    raise ConfigurationError(
        f"kT/omega = {kT / omega_n:.2f} needs more than {_MAX_MOMENT_DIM} "
        "Fock levels for the moment check; lower the temperature"
    )


def single_mode_moment_check(omega_n: float, kappa_n: float, kT: float,
                             dt: float, t_max: float,
                             stream: np.random.Generator) -> MomentCheckReport:
    """Verify that thermal second moments are pathwise constants of the motion.

    One bath mode starts in its truncated thermal state and evolves under the
    stochastic environment equation with a constant mean-field drive <Q> = 1
    (any c-number drive only displaces first moments).  Along each path the
    centered moments sigma_--, sigma_++ must stay at 0 and sigma_-+ at
    N_bar + 1; the report records the worst drift over all steps and paths.
    """
    if not (np.isfinite(omega_n) and omega_n > 0):
        raise ConfigurationError("omega_n must be positive and finite")
    if not np.isfinite(kappa_n):
        raise ConfigurationError("kappa_n must be finite")
    if not kT > 0:
        raise ConfigurationError("kT must be positive")
    if not (np.isfinite(dt) and dt > 0):
        raise ConfigurationError("dt must be positive and finite")
    n_steps = int(round(t_max / dt))
    if n_steps < 1 or abs(n_steps * dt - t_max) > 1e-9 * max(t_max, dt):
        raise ConfigurationError("t_max must be a positive integer multiple of dt")

    n_bar = 1.0 / np.expm1(HBAR * omega_n / kT)
    dim = _moment_fock_dim(omega_n, kT)
    a_op = lowering_operator(dim)
    x_op, h_op = mode_operators(omega_n, dim)
    b_op = -kappa_n * x_op
    aa_op = a_op @ a_op
    ad_op = a_op.conj().T
    adad_op = ad_op @ ad_op
    aad_op = a_op @ ad_op

    rho = np.broadcast_to(
        thermal_mode_density(omega_n, kT, dim), (_MOMENT_PATHS, dim, dim)
    ).copy()
    q_drive = np.ones(_MOMENT_PATHS)

    def moments(r):
        am = np.einsum("ij,tji->t", a_op, r)
        adm = np.einsum("ij,tji->t", ad_op, r)
        s_mm = np.einsum("ij,tji->t", aa_op, r) - am**2
        s_pp = np.einsum("ij,tji->t", adad_op, r) - adm**2
        s_mp = np.einsum("ij,tji->t", aad_op, r) - am * adm
        return s_mm, s_pp, s_mp

    dev_mm = dev_pp = dev_mp = 0.0
    for _ in range(n_steps):
        b_mean = np.einsum("ij,tji->t", b_op, rho).real
        normals = stream.standard_normal((_MOMENT_PATHS, 4))
        _, du_e, _, dv_e = increments_from_normals(dt, "complex", normals)
        rho = _step_mode_factor(
            rho, q_drive, b_mean, x_op, h_op, kappa_n, du_e, dv_e, dt,
            centered=True,
        )
        s_mm, s_pp, s_mp = moments(rho)
        dev_mm = max(dev_mm, float(np.abs(s_mm).max()))
        dev_pp = max(dev_pp, float(np.abs(s_pp).max()))
        dev_mp = max(dev_mp, float(np.abs(s_mp - (n_bar + 1.0)).max()))

    return MomentCheckReport(
        n_bar=float(n_bar),
        fock_dim=dim,
        n_steps=n_steps,
        n_paths=_MOMENT_PATHS,
        max_dev_mm=dev_mm,
        max_dev_pp=dev_pp,
        max_dev_mp=dev_mp,
    )
