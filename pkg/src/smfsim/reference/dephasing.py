"""Closed-form reference for the pure-dephasing limit (epsilon = 0).

With h_S = hbar*omega0*sigma_x and coupling sigma_x (x) B the system part of
the Hamiltonian commutes with the coupling, so the model is an independent
boson model: <sigma_x> is conserved and the coherence in the sigma_x
eigenbasis dephases exactly,

    <sigma_z(t)> + i <sigma_y(t)> = (<sigma_z>_0 + i <sigma_y>_0)
                                    * exp(-2i*omega0*t - Gamma(t)),

    Gamma(t) = 4 * int_0^inf J(w) coth(w / 2kT) (1 - cos(w t)) / w^2 dw.

The symmetric +-B level splitting produces no extra deterministic phase (the
polaron shifts of the two branches are equal).  Everything here is evaluated
by adaptive quadrature, independent of the kernel tables.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import quad

from ..errors import ConfigurationError
from ..kernels import BathParams
from ..engine import SpinBosonParams


def dephasing_exponent(bath: BathParams, t: float) -> float:
    """Gamma(t); quadrature split to keep the oscillatory tail accurate."""
    if t == 0.0:
        return 0.0
    t = float(abs(t))
    eta = bath.spectral.eta
    dc = bath.spectral.delta_c
    kt = bath.kT

    def smooth(w):
        # J(w) coth(w/2kT) / w^2, finite at 0 only together with (1 - cos).
        return eta * dc**2 / (w * (dc**2 + w**2)) / np.tanh(w / (2.0 * kt))

    def low(w):
        if w == 0.0:
            return eta * kt * t**2
        return smooth(w) * (1.0 - np.cos(w * t))

    i_low = quad(low, 0.0, dc, limit=400)[0]
    i_flat = quad(smooth, dc, np.inf, limit=200)[0]
    i_osc = quad(smooth, dc, np.inf, weight="cos", wvar=t, limit=400)[0]
    return 4.0 * (i_low + i_flat - i_osc)


def pure_dephasing_reference(params: SpinBosonParams, bath: BathParams,
                             times: np.ndarray):
    """Exact Bloch components at the requested times; requires epsilon = 0."""
    if params.epsilon != 0.0:
        raise ConfigurationError(
            "pure dephasing reference requires epsilon = 0"
        )
    times = np.asarray(times, dtype=float)
    x0, y0, z0 = params.initial_bloch
    gamma = np.array([dephasing_exponent(bath, t) for t in times])
    zeta = (z0 + 1j * y0) * np.exp(-2j * params.omega0 * times - gamma)
    sx = np.full_like(times, float(x0))
    return sx, zeta.imag.copy(), zeta.real.copy()
