"""Bath memory kernels for the Ohmic-Drude spectral density.

Natural units, hbar = 1.  The two kernels driving the mean field are

    D(tau)  = 2 * int_0^inf J(w) sin(w*tau) dw          (dissipation kernel)
    D1(tau) = 2 * int_0^inf J(w) coth(w/(2*kT)) cos(w*tau) dw   (noise kernel)

with J(w) = eta * w * dc^2 / (dc^2 + w^2).  Both are sums of decaying
exponentials:

    D(tau)  = pi*eta*dc^2 * exp(-dc*tau)                 for tau > 0, D(0) = 0
    D1(tau) = pi*eta*dc^2 * cot(dc/(2*kT)) * exp(-dc*tau)
            + sum_k  4*pi*eta*kT*dc^2 * nu_k/(nu_k^2 - dc^2) * exp(-nu_k*tau)

where nu_k = 2*pi*k*kT are the Matsubara rates.  The series converges slowly
at small tau (D1(0) is logarithmically divergent in the frequency cutoff, so
the table stores the omega_max-truncated quadrature value there; that sample
multiplies only the same-step increment, which the Ito convention excludes
from the convolutions, so the cutoff sensitivity never enters the dynamics).

A table built for an integrator step dtau needs D1 accurate down to
tau = dtau, which the default term count cannot deliver on its own.  The
slow Matsubara tail beyond the K kept terms is therefore compressed into a
handful of effective exponentials: the next few exact Matsubara rates plus
geometrically spaced ones up to ~1/dtau, with amplitudes from a weighted
least-squares fit against a near-converged reference series.  The result is
a single flat exponential sum, so the per-step recursive convolution costs
O(K + R) state updates, and the tabulated D1 samples are evaluated from that
same sum, making the recursive and direct convolution routes agree to
roundoff.  When the fit cannot reach tolerance the build fails loudly and
asks for more Matsubara terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad, simpson
from scipy.special import exp1, sici

from .errors import ConfigurationError

HBAR = 1.0

# Relative accuracy the fitted tail aims for; the table acceptance threshold
# is 1e-4 so this leaves two orders of headroom.
_FIT_TARGET = 1e-6
# Worst fit still accepted; beyond this the configuration must supply more
# Matsubara terms instead.
_FIT_ACCEPT = 2e-5
# Tail term counts tried in order; the sweep stops at the first hit below
# _FIT_TARGET.
_FIT_SIZES = (8, 10, 12, 14, 16, 18, 20, 24)
# Of each tail, this many rates are the exact next Matsubara frequencies; the
# rest are geometrically spaced up to ~1/dtau.
_FIT_EXACT_RATES = 4
# Lag window the fit is anchored on (beyond it the residual has decayed).
_FIT_MAX_LAGS = 4096
# Tikhonov weight (relative to column norms) taming amplitude blow-up.
_FIT_RIDGE = 1e-10
# Target relative accuracy of the reference series the tail is fitted to.
_REFERENCE_REL = 1e-10


@dataclass(frozen=True)
class SpectralDensityParams:
    """Ohmic spectral density with Drude cutoff: J(w) = eta*w*dc^2/(dc^2+w^2)."""

    eta: float
    delta_c: float
    kind: str = "OhmicDrude"

    def __post_init__(self):
        if self.kind != "OhmicDrude":
            raise ConfigurationError(f"unsupported spectral density kind {self.kind!r}")
        if not (self.eta > 0):
            raise ConfigurationError("eta must be positive")
        if not (self.delta_c > 0):
            raise ConfigurationError("delta_c must be positive")

    def j(self, omega):
        """Evaluate J(omega); accepts scalars or arrays."""
        w = np.asarray(omega, dtype=float)
        return self.eta * w * self.delta_c**2 / (self.delta_c**2 + w**2)


@dataclass(frozen=True)
class BathParams:
    """Heat-bath parameters: spectral density, temperature and quadrature knobs.

    kT is the temperature in energy units (k_B absorbed).  omega_max and
    quadrature_points control the truncated frequency integral used for D1(0)
    and for the build-time cross check of the Matsubara series.
    """

    spectral: SpectralDensityParams
    kT: float
    matsubara_terms: int = 20
    omega_max: float | None = None
    quadrature_points: int = 4000

    def __post_init__(self):
        if not (self.kT > 0):
            raise ConfigurationError("kT must be positive")
        if self.matsubara_terms < 1:
            raise ConfigurationError("matsubara_terms must be >= 1")
        if self.omega_max is None:
            object.__setattr__(self, "omega_max", 50.0 * self.spectral.delta_c)
        if self.omega_max < 10.0 * self.spectral.delta_c:
            raise ConfigurationError("omega_max must be >= 10*delta_c")
        if self.quadrature_points < 16:
            raise ConfigurationError("quadrature_points must be >= 16")


@dataclass(frozen=True)
class ExpDecomposition:
    """Flat exponential-sum representation K(tau) = sum_m a_m * exp(-g_m * tau).

    D carries the single Drude term; D1 carries the Drude pole, the kept
    Matsubara terms and the fitted tail, in that order.  fit_residual is the
    worst weighted relative deviation of the fitted sum from the reference
    series (0.0 when no tail fit was needed), n_fit_terms the tail length.
    """

    d_amplitudes: np.ndarray
    d_rates: np.ndarray
    d1_amplitudes: np.ndarray
    d1_rates: np.ndarray
    fit_residual: float = 0.0
    n_fit_terms: int = 0

    def __post_init__(self):
        for arr in (self.d_amplitudes, self.d_rates, self.d1_amplitudes, self.d1_rates):
            arr.flags.writeable = False
        if np.any(self.d_rates <= 0) or np.any(self.d1_rates <= 0):
            raise ConfigurationError("exponential rates must be positive")
        if len(self.d_amplitudes) != len(self.d_rates):
            raise ConfigurationError("d amplitude/rate length mismatch")
        if len(self.d1_amplitudes) != len(self.d1_rates):
            raise ConfigurationError("d1 amplitude/rate length mismatch")

    def d_eval(self, tau):
        """Evaluate the D sum at tau > 0 (the tau = 0 limit of the sum, not 0)."""
        return _exp_sum(self.d_amplitudes, self.d_rates, tau)

    def d1_eval(self, tau):
        """Evaluate the D1 sum at tau > 0."""
        return _exp_sum(self.d1_amplitudes, self.d1_rates, tau)


@dataclass(frozen=True)
class KernelTable:
    """Kernel samples on a uniform tau grid plus the exponential decomposition.

    Immutable: arrays are read-only, safe to share across workers.
    d1_values[1:] are evaluated from the decomposition; d1_values[0] is the
    cutoff-truncated quadrature value (see module docstring).
    """

    bath: BathParams
    tau_grid: np.ndarray
    d_values: np.ndarray
    d1_values: np.ndarray
    exp_decomposition: ExpDecomposition

    def __post_init__(self):
        for arr in (self.tau_grid, self.d_values, self.d1_values):
            arr.flags.writeable = False
        if self.d_values[0] != 0.0:
            raise ConfigurationError("d_values[0] must be exactly zero (D is odd)")

    @property
    def dtau(self) -> float:
        return float(self.tau_grid[1] - self.tau_grid[0])

    @property
    def tau_max(self) -> float:
        return float(self.tau_grid[-1])


def _exp_sum(amps: np.ndarray, rates: np.ndarray, tau):
    """sum_m amps[m] * exp(-rates[m] * tau), chunked over terms."""
    tau = np.asarray(tau, dtype=float)
    out = np.zeros(tau.shape)
    for lo in range(0, len(amps), 512):
        hi = min(lo + 512, len(amps))
        out = out + np.einsum(
            "k,k...->...", amps[lo:hi], np.exp(-np.multiply.outer(rates[lo:hi], tau))
        )
    return out


def _coth(x):
    """coth for positive arguments, stable at small x (-> 1/x)."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 1e-8
    out[small] = 1.0 / np.where(small, x, 1.0)[small]
    out[~small] = 1.0 / np.tanh(x[~small])
    return out


def _matsubara_rates(kT: float, n_terms: int) -> np.ndarray:
    return 2.0 * np.pi * kT * np.arange(1, n_terms + 1) / HBAR


def _d1_exponential_terms(bath: BathParams, n_terms: int):
    """Amplitudes and rates of the n_terms Matsubara representation of D1."""
    eta, dc, kT = bath.spectral.eta, bath.spectral.delta_c, bath.kT
    x = HBAR * dc / (2.0 * kT)
    if abs(np.sin(x)) < 1e-12:
        raise ConfigurationError(
            "delta_c/(2*kT) is a multiple of pi; the Drude pole amplitude diverges"
        )
    nu = _matsubara_rates(kT, n_terms)
    if np.any(np.abs(nu - dc) < 1e-9 * dc):
        raise ConfigurationError(
            "a Matsubara rate coincides with delta_c; perturb kT or delta_c"
        )
    amp_drude = np.pi * eta * HBAR * dc**2 / np.tan(x)
    amps = 4.0 * np.pi * eta * kT * dc**2 * nu / (nu**2 - dc**2)
    return amp_drude, amps, nu


def _d1_series(bath: BathParams, tau, n_terms: int):
    """n_terms Matsubara series for D1 at tau (> 0), vectorized."""
    amp_drude, amps, nu = _d1_exponential_terms(bath, n_terms)
    tau = np.asarray(tau, dtype=float)
    out = amp_drude * np.exp(-bath.spectral.delta_c * tau)
    return out + _exp_sum(amps, nu, tau)


def _reference_terms(bath: BathParams, tau_min: float) -> int:
    """Series length making the Matsubara tail negligible down to tau_min.

    Tail beyond K terms is bounded by 2*eta*dc^2 * E1(nu_1*tau_min*K); solve
    for the K that pushes it below _REFERENCE_REL of the Drude amplitude scale.
    """
    eta, dc = bath.spectral.eta, bath.spectral.delta_c
    nu1 = 2.0 * np.pi * bath.kT / HBAR
    scale = np.pi * eta * dc**2
    budget = _REFERENCE_REL * scale
    k = max(bath.matsubara_terms, 8)
    while k < 2_000_000:
        tail = 2.0 * eta * dc**2 * exp1(nu1 * tau_min * k)
        if tail < budget:
            return k
        k *= 2
    raise ConfigurationError(
        "Matsubara reference series does not converge at tau = dtau; "
        "kT*dtau is too small, increase matsubara_terms or coarsen the grid"
    )


def d_closed_form(bath: BathParams, tau):
    """Drude closed form pi*eta*dc^2*exp(-dc*tau) for tau > 0; D(0) = 0."""
    eta, dc = bath.spectral.eta, bath.spectral.delta_c
    tau = np.asarray(tau, dtype=float)
    out = np.pi * eta * HBAR * dc**2 * np.exp(-dc * tau)
    return np.where(tau == 0.0, 0.0, out)


def d_quadrature(bath: BathParams, tau):
    """Adaptive quadrature of D(tau) = 2*int J(w) sin(w tau) dw.

    Independent of the closed form; used as the verification oracle.  The
    integral is evaluated in the phase variable u = w*tau,

        D(tau) = 2*eta*dc^2 * int_0^inf u*sin(u) / ((dc*tau)^2 + u^2) du,

    whose integrand is well scaled for every tau (straight w-space Fourier
    quadrature loses accuracy at small tau, where the 1/w tail spans orders
    of magnitude within a single sine period).  Head by plain adaptive
    quadrature, 1/u tail by the oscillatory-weight algorithm.
    """
    eta, dc = bath.spectral.eta, bath.spectral.delta_c

    def one(t):
        if t == 0.0:
            return 0.0
        b = dc * t

        def g(u):
            return 2.0 * HBAR * eta * dc**2 * u / (b**2 + u**2)

        split = 10.0 * max(1.0, b)
        head = quad(
            lambda u: g(u) * np.sin(u), 0, split,
            limit=800, epsabs=1e-14, epsrel=1e-13, full_output=1,
        )
        # full_output suppresses the benign slow-convergence warning; the
        # result tuple grows a message element when one is attached.
        tail = quad(
            g, split, np.inf, weight="sin", wvar=1.0,
            limit=800, epsabs=1e-14, epsrel=1e-13, full_output=1,
        )
        return head[0] + tail[0]

    tau = np.asarray(tau, dtype=float)
    if tau.ndim == 0:
        return one(float(tau))
    return np.array([one(t) for t in tau])


def d1_quadrature(bath: BathParams, tau):
    """Adaptive Fourier quadrature of D1(tau); tau must be positive.

    The integrand decays only as 1/w, so the integral is conditionally
    convergent and needs the oscillatory-weight algorithm; plain truncation is
    handled by d1_truncated_quadrature.
    """
    eta, dc, kT = bath.spectral.eta, bath.spectral.delta_c, bath.kT

    def f(w):
        if w == 0.0:
            return 2.0 * HBAR * eta * kT * 2.0 / HBAR  # limit of J*coth
        return (
            2.0 * HBAR * eta * w * dc**2 / (dc**2 + w**2)
            * (1.0 / np.tanh(HBAR * w / (2.0 * kT)))
        )

    split = 10.0 * max(dc, kT / HBAR)

    def one(t):
        if t <= 0.0:
            raise ValueError("d1_quadrature requires tau > 0 (D1(0) is cutoff-dependent)")
        head = quad(
            lambda w: f(w) * np.cos(w * t), 0, split,
            limit=800, epsabs=1e-12, epsrel=1e-12, full_output=1,
        )
        tail = quad(
            f, split, np.inf, weight="cos", wvar=t,
            limit=800, epsabs=1e-12, epsrel=1e-12, full_output=1,
        )
        return head[0] + tail[0]

    tau = np.asarray(tau, dtype=float)
    if tau.ndim == 0:
        return one(float(tau))
    return np.array([one(t) for t in tau])


def _truncated_grid(bath: BathParams) -> np.ndarray:
    """Frequency grid on [0, omega_max], refined near w = 0.

    Half the points resolve [0, w_knee] where the coth factor varies fastest
    (w_knee tied to min(kT, delta_c)), the rest cover the algebraic tail.
    """
    n = bath.quadrature_points
    knee = min(10.0 * min(bath.kT / HBAR, bath.spectral.delta_c), bath.omega_max / 4.0)
    n_lo = n // 2
    lo = np.linspace(0.0, knee, n_lo, endpoint=False)
    hi = np.linspace(knee, bath.omega_max, n - n_lo)
    return np.concatenate([lo, hi])


def d1_truncated_quadrature(bath: BathParams, tau, tail_correction: bool = True):
    """D1 by Simpson quadrature truncated at omega_max.

    With tail_correction the analytic large-w remainder
    -2*eta*dc^2*Ci(omega_max*tau) (from J*coth -> eta*dc^2/w) is added, giving
    a secondary oracle good to ~1e-6 relative for tau >= ~20/omega_max.  With
    tail_correction=False this is the cutoff-dependent value stored for D1(0).
    """
    eta, dc, kT = bath.spectral.eta, bath.spectral.delta_c, bath.kT
    w = _truncated_grid(bath)
    jcoth = np.empty_like(w)
    jcoth[0] = 2.0 * eta * kT / HBAR
    wp = w[1:]
    jcoth[1:] = eta * wp * dc**2 / (dc**2 + wp**2) * _coth(HBAR * wp / (2.0 * kT))

    tau = np.asarray(tau, dtype=float)
    scalar = tau.ndim == 0
    tau2 = np.atleast_1d(tau)
    vals = np.empty_like(tau2)
    for i, t in enumerate(tau2):
        vals[i] = 2.0 * HBAR * simpson(jcoth * np.cos(w * t), x=w)
        if tail_correction:
            if t <= 0.0:
                raise ValueError("tail correction undefined at tau <= 0")
            _, ci = sici(bath.omega_max * t)
            vals[i] += -2.0 * HBAR * eta * dc**2 * ci
    return float(vals[0]) if scalar else vals


def d_short_time_integral(bath: BathParams, delta: float) -> float:
    """int_0^delta D(tau) dtau, closed form of the exponential kernel."""
    eta, dc = bath.spectral.eta, bath.spectral.delta_c
    return float(np.pi * eta * HBAR * dc * -np.expm1(-dc * delta))


def d1_short_time_integral(bath: BathParams, delta: float) -> float:
    """int_0^delta D1(tau) dtau by adaptive quadrature.

    The exponential decomposition only represents D1 at tau >= dtau; its
    integrable log-like mass below the first grid cell is not small and is
    needed by consumers that integrate the kernel from tau = 0 (TCL2).
    Frequency form: 2*hbar * int J(w) coth(hbar*w/2kT) sin(w*delta)/w dw,
    split at delta_c with the oscillatory tail handled by a sine-weighted
    rule.
    """
    if delta <= 0.0:
        return 0.0
    eta, dc, kT = bath.spectral.eta, bath.spectral.delta_c, bath.kT

    def jcoth_over_w(w):
        # J(w) * coth(hbar*w / (2*kT)) / w; diverges ~1/w at w -> 0.
        return (eta * dc**2 / (dc**2 + w**2)) * _coth(HBAR * w / (2.0 * kT))

    def low(w):
        # Full integrand jcoth_over_w * sin(w*delta); finite limit at w = 0.
        if w == 0.0:
            return 2.0 * eta * kT / HBAR * delta
        return jcoth_over_w(w) * np.sin(w * delta)

    head = quad(low, 0.0, dc, limit=200)[0]
    tail = quad(jcoth_over_w, dc, np.inf, weight="sin", wvar=delta,
                limit=400)[0]
    return float(2.0 * HBAR * (head + tail))


def _suggest_terms(bath: BathParams, dtau: float) -> int:
    """Smallest K whose raw tail at tau = dtau is ~1% of the kernel scale."""
    nu1 = 2.0 * np.pi * bath.kT / HBAR
    k = bath.matsubara_terms
    while k < 2_000_000 and exp1(nu1 * dtau * k) > 0.01 * np.pi / 2.0:
        k *= 2
    return k


def _fit_tail(bath: BathParams, dtau: float, n_lags: int, d1_k: np.ndarray):
    """Compress the Matsubara tail beyond K terms into a few exponentials.

    d1_k holds the K-term series on the grid (lag 0 included).  Returns
    (amps, rates, residual); empty arrays when the K-term series already meets
    the target.  Raises ConfigurationError when no tried tail size reaches
    _FIT_ACCEPT.
    """
    eta, dc, kT = bath.spectral.eta, bath.spectral.delta_c, bath.kT
    K = bath.matsubara_terms
    nu1 = 2.0 * np.pi * kT / HBAR
    scale = np.pi * eta * dc**2

    k_ref = _reference_terms(bath, dtau)
    window = min(n_lags, _FIT_MAX_LAGS)
    lags = np.arange(1, window + 1) * dtau
    ref = _d1_series(bath, lags, k_ref)
    resid = ref - d1_k[1 : window + 1]
    wts = 1.0 / np.maximum(np.abs(ref), 1e-3 * scale)

    empty = (np.zeros(0), np.zeros(0), 0.0)
    if np.max(np.abs(resid) * wts) <= _FIT_TARGET:
        return empty

    # Anchor lags: where the residual still matters.  Validation probes extend
    # over the rest of the grid to catch out-of-window misbehaviour.
    needed = np.abs(resid) * wts > 1e-8
    L = int(np.max(np.nonzero(needed)[0])) + 1
    probe_idx = np.zeros(0, dtype=int)
    if n_lags > window:
        probe_idx = np.unique(np.geomspace(window + 1, n_lags, 16).astype(int))
    probe_tau = probe_idx * dtau
    probe_resid = (
        _d1_series(bath, probe_tau, k_ref) - d1_k[probe_idx]
        if len(probe_idx)
        else np.zeros(0)
    )
    probe_wts = 1.0 / np.maximum(np.abs(probe_resid + d1_k[probe_idx]), 1e-3 * scale)

    best = None
    for size in _FIT_SIZES:
        r = min(size, max(2, L))
        n_ex = min(_FIT_EXACT_RATES, r - 1)
        exact = nu1 * (K + np.arange(1, n_ex + 1))
        hi_rate = max(30.0 / dtau, 2.0 * nu1 * (K + r))
        geo = np.geomspace(0.9 * nu1 * (K + n_ex + 1), hi_rate, r - n_ex)
        rates = np.concatenate([exact, geo])

        basis = np.exp(-np.outer(lags[:L], rates)) * wts[:L, None]
        col_norm = np.linalg.norm(basis, axis=0)
        system = np.vstack([basis, np.diag(_FIT_RIDGE * col_norm)])
        rhs = np.concatenate([resid[:L] * wts[:L], np.zeros(r)])
        amps, *_ = np.linalg.lstsq(system, rhs, rcond=None)

        err = np.max(np.abs(basis @ amps - rhs[:L]))
        if L < window:
            tail_dev = (
                np.exp(-np.outer(lags[L:], rates)) @ amps - resid[L:]
            ) * wts[L:]
            err = max(err, np.max(np.abs(tail_dev)))
        if len(probe_idx):
            probe_dev = (
                np.exp(-np.outer(probe_tau, rates)) @ amps - probe_resid
            ) * probe_wts
            err = max(err, np.max(np.abs(probe_dev)))

        if best is None or err < best[2]:
            best = (amps, rates, err)
        if err <= _FIT_TARGET:
            break

    amps, rates, err = best
    if err > _FIT_ACCEPT:
        raise ConfigurationError(
            "Matsubara tail estimate not convergent at tau >= dtau (relative "
            f"residual {err:.2e}); increase matsubara_terms "
            f"(>= {_suggest_terms(bath, dtau)} suggested) or coarsen the grid"
        )
    return amps, rates, float(err)


def build_kernel_table(bath: BathParams, tau_max: float, dtau: float) -> KernelTable:
    """Sample D and D1 on a uniform grid and build the exponential decomposition.

    Raises ConfigurationError when the Matsubara series plus the fitted tail
    cannot reach the residual target at tau >= dtau (the fix is more
    matsubara_terms or a coarser grid).
    """
    if not (tau_max > 0 and dtau > 0):
        raise ConfigurationError("tau_max and dtau must be positive")
    n_lags = int(round(tau_max / dtau))
    if n_lags < 1 or abs(n_lags * dtau - tau_max) > 1e-9 * max(tau_max, 1.0):
        raise ConfigurationError("tau_max must be an integer multiple of dtau")

    eta, dc = bath.spectral.eta, bath.spectral.delta_c
    tau_grid = np.arange(n_lags + 1) * dtau
    scale = np.pi * eta * dc**2

    d_values = d_closed_form(bath, tau_grid)
    d_amps = np.array([np.pi * eta * HBAR * dc**2])
    d_rates = np.array([dc])

    K = bath.matsubara_terms
    amp_drude, amps_k, nu_k = _d1_exponential_terms(bath, K)
    d1_k = _d1_series(bath, tau_grid, K)
    fit_amps, fit_rates, fit_residual = _fit_tail(bath, dtau, n_lags, d1_k)

    d1_amps = np.concatenate([[amp_drude], amps_k, fit_amps])
    d1_rates = np.concatenate([[dc], nu_k, fit_rates])
    decomp = ExpDecomposition(
        d_amplitudes=d_amps,
        d_rates=d_rates,
        d1_amplitudes=d1_amps,
        d1_rates=d1_rates,
        fit_residual=fit_residual,
        n_fit_terms=len(fit_amps),
    )

    # Stored samples come from the decomposition itself so the recursive and
    # direct convolution routes see identical numbers.
    d1_values = decomp.d1_eval(tau_grid)
    # Lag 0: cutoff-truncated value by definition (never enters the dynamics).
    d1_values[0] = d1_truncated_quadrature(bath, 0.0, tail_correction=False)

    # Build-time smoke check against the tail-corrected truncated quadrature at
    # a few probe lags.  Only meaningful where that quadrature itself holds:
    # tau >= 20/omega_max (Ci tail correction valid) and tau small enough that
    # the frequency grid resolves cos(w*tau).  Precision checks live in the
    # test suite.
    grid_w = _truncated_grid(bath)
    h_hi = grid_w[-1] - grid_w[-2]
    probe_lo = max(dtau, 20.0 / bath.omega_max)
    probe_hi = min(tau_max, 2.0 / dc, 0.3 / h_hi)
    probes = np.zeros(0, dtype=int)
    if probe_hi > probe_lo:
        probes = np.unique(
            np.clip(
                np.round(np.geomspace(probe_lo, probe_hi, 6) / dtau).astype(int),
                1,
                n_lags,
            )
        )
    if len(probes):
        approx = d1_truncated_quadrature(bath, probes * dtau)
        ref_scale = np.maximum(np.abs(approx), 1e-3 * scale)
        worst = np.max(np.abs(d1_values[probes] - approx) / ref_scale)
        if worst > 2e-3:
            raise ConfigurationError(
                f"kernel table failed the truncated-quadrature cross check "
                f"(relative deviation {worst:.2e}); inconsistent bath parameters"
            )

    return KernelTable(
        bath=bath,
        tau_grid=tau_grid,
        d_values=d_values,
        d1_values=d1_values,
        exp_decomposition=decomp,
    )


def kernel_eval(table: KernelTable, tau):
    """Linear interpolation of (D, D1) on the table grid.

    tau outside [0, tau_max] is a domain error; extended-range callers must map
    negative lags through D(-tau) = -D(tau), D1(-tau) = D1(tau) themselves.
    """
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(tau_arr < 0.0) or np.any(tau_arr > table.tau_max * (1 + 1e-12)):
        raise ValueError("tau outside the tabulated range [0, tau_max]")
    d = np.interp(tau_arr, table.tau_grid, table.d_values)
    d1 = np.interp(tau_arr, table.tau_grid, table.d1_values)
    if tau_arr.ndim == 0:
        return float(d), float(d1)
    return d, d1
