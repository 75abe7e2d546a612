"""Noise increments for the stochastic unraveling.

Two variants:

* ``complex`` (exact): four independent standard normals g1..g4 per step map to

      du_s = s*(g1 + i*g2)/sqrt(2)    du_e = s*(g1 - i*g2)/sqrt(2)
      dv_s = s*(g3 + i*g4)/sqrt(2)    dv_e = s*(g3 - i*g4)/sqrt(2)

  with s = sqrt(dt/(2*hbar)).  This realizes the required cross moments
  E[du_s*du_e] = E[dv_s*dv_e] = dt/(2*hbar) with every same-side second moment
  and every u-v cross moment equal to zero.  Conjugate moments such as
  E[du_s*conj(du_s)] = dt/(2*hbar) are not constrained by the scheme and are a
  property of this particular construction.

* ``real`` (approximate): two normals per step, du_s = du_e = s*g1 and
  dv_s = dv_e = s*g2.  Cross moments match the exact contract but same-side
  squares no longer vanish; trajectories stay Hermitian.

Derived variables: dxi_s = du_s - i*dv_s, dlam_s = du_s + i*dv_s on the system
side, and dxi_e = dv_e - i*du_e, dlam_e = dv_e + i*du_e on the environment side
(note the role swap), giving E[dxi_s*dxi_e] = dt/(i*hbar) and
E[dlam_s*dlam_e] = -dt/(i*hbar).

Reproducibility: the stream for trajectory ``i`` under master seed ``m`` is the
counter-based generator Philox(key=(m, i)); each step consumes one row of
standard_normal((n, k)) with k = normals_per_step(variant), so any partitioning
of trajectories across workers yields identical draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

HBAR = 1.0

VARIANTS = ("complex", "real")


@dataclass(frozen=True)
class NoiseIncrement:
    """One step's worth of increments; all entries are O(sqrt(dt))."""

    du_s: complex
    du_e: complex
    dv_s: complex
    dv_e: complex


def normals_per_step(variant: str) -> int:
    if variant == "complex":
        return 4
    if variant == "real":
        return 2
    raise ConfigurationError(f"unknown noise variant {variant!r}")


def increments_from_normals(dt: float, variant: str, normals: np.ndarray):
    """Map pre-drawn standard normals to (du_s, du_e, dv_s, dv_e).

    normals has shape (..., k) with k = normals_per_step(variant); the outputs
    share the leading shape.  This is the single source of the construction;
    the scalar sampler and the block propagators both go through it.
    """
    normals = np.asarray(normals, dtype=float)
    k = normals_per_step(variant)
    if normals.shape[-1] != k:
        raise ConfigurationError(
            f"variant {variant!r} needs {k} normals per step, got shape {normals.shape}"
        )
    sigma = np.sqrt(dt / (2.0 * HBAR))
    if variant == "complex":
        g1, g2, g3, g4 = np.moveaxis(normals, -1, 0)
        r = sigma / np.sqrt(2.0)
        du_s = r * (g1 + 1j * g2)
        du_e = r * (g1 - 1j * g2)
        dv_s = r * (g3 + 1j * g4)
        dv_e = r * (g3 - 1j * g4)
    else:
        g1, g2 = np.moveaxis(normals, -1, 0)
        du_s = du_e = (sigma * g1).astype(complex)
        dv_s = dv_e = (sigma * g2).astype(complex)
    return du_s, du_e, dv_s, dv_e


def sample_increment(dt: float, variant: str, rng: np.random.Generator) -> NoiseIncrement:
    """Draw one step's increments from the given stream."""
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    normals = rng.standard_normal(normals_per_step(variant))
    du_s, du_e, dv_s, dv_e = increments_from_normals(dt, variant, normals)
    return NoiseIncrement(complex(du_s), complex(du_e), complex(dv_s), complex(dv_e))


def derived_xi_lambda(inc: NoiseIncrement):
    """(dxi_s, dlam_s, dxi_e, dlam_e) from one increment set."""
    dxi_s = inc.du_s - 1j * inc.dv_s
    dlam_s = inc.du_s + 1j * inc.dv_s
    dxi_e = inc.dv_e - 1j * inc.du_e
    dlam_e = inc.dv_e + 1j * inc.du_e
    return dxi_s, dlam_s, dxi_e, dlam_e


def trajectory_stream(master_seed: int, index: int) -> np.random.Generator:
    """Counter-based per-trajectory stream; independent of worker layout."""
    if not (0 <= master_seed < 2**64):
        raise ConfigurationError("master_seed must fit in 64 bits")
    if not (0 <= index < 2**64):
        raise ConfigurationError("trajectory index must fit in 64 bits")
    return np.random.Generator(np.random.Philox(key=np.array([master_seed, index], dtype=np.uint64)))
