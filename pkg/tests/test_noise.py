"""Noise increment moment contracts and stream reproducibility."""

import numpy as np
import pytest

from smfsim.errors import ConfigurationError
from smfsim.noise import (
    NoiseIncrement,
    derived_xi_lambda,
    increments_from_normals,
    normals_per_step,
    sample_increment,
    trajectory_stream,
)

DT = 1e-3
N = 1_000_000


def _draw(variant, n=N, seed=2024):
    rng = trajectory_stream(seed, 0)
    normals = rng.standard_normal((n, normals_per_step(variant)))
    return increments_from_normals(DT, variant, normals)


def _assert_mean(samples, target, label):
    # 5-sigma band around the target; the std of the product samples sets the
    # scale, with a floor for identically-zero combinations.
    mean = np.mean(samples)
    stderr = max(np.std(samples) / np.sqrt(len(samples)), 1e-18)
    assert abs(mean - target) <= 5.0 * stderr, (
        f"{label}: mean {mean} vs target {target} ({abs(mean - target) / stderr:.1f} stderr)"
    )


def test_complex_cross_moments():
    du_s, du_e, dv_s, dv_e = _draw("complex")
    _assert_mean(du_s * du_e, DT / 2.0, "E[du_s du_e]")
    _assert_mean(dv_s * dv_e, DT / 2.0, "E[dv_s dv_e]")
    _assert_mean(du_s * dv_e, 0.0, "E[du_s dv_e]")
    _assert_mean(dv_s * du_e, 0.0, "E[dv_s du_e]")
    _assert_mean(du_s * dv_s, 0.0, "E[du_s dv_s]")
    _assert_mean(du_e * dv_e, 0.0, "E[du_e dv_e]")


def test_complex_same_side_moments_vanish():
    du_s, du_e, dv_s, dv_e = _draw("complex")
    for samples, label in [
        (du_s**2, "E[du_s^2]"),
        (du_e**2, "E[du_e^2]"),
        (dv_s**2, "E[dv_s^2]"),
        (dv_e**2, "E[dv_e^2]"),
    ]:
        _assert_mean(samples, 0.0, label)


def test_complex_first_moments_vanish():
    du_s, du_e, dv_s, dv_e = _draw("complex")
    for samples, label in [(du_s, "E[du_s]"), (du_e, "E[du_e]"),
                           (dv_s, "E[dv_s]"), (dv_e, "E[dv_e]")]:
        _assert_mean(samples, 0.0, label)


def test_real_variant_moments():
    du_s, du_e, dv_s, dv_e = _draw("real")
    assert np.array_equal(du_s, du_e)
    assert np.array_equal(dv_s, dv_e)
    assert np.all(du_s.imag == 0.0) and np.all(dv_s.imag == 0.0)
    _assert_mean(du_s * du_e, DT / 2.0, "E[du_s du_e]")
    _assert_mean(dv_s * dv_e, DT / 2.0, "E[dv_s dv_e]")
    _assert_mean(du_s * dv_e, 0.0, "E[du_s dv_e]")
    # Same-side moments do NOT vanish here; that is what makes it approximate.
    _assert_mean(du_s**2, DT / 2.0, "E[du_s^2]")


def test_derived_variable_moments():
    du_s, du_e, dv_s, dv_e = _draw("complex")
    inc = NoiseIncrement(du_s, du_e, dv_s, dv_e)
    dxi_s, dlam_s, dxi_e, dlam_e = derived_xi_lambda(inc)
    _assert_mean(dxi_s * dxi_e, -1j * DT, "E[dxi_s dxi_e]")
    _assert_mean(dlam_s * dlam_e, 1j * DT, "E[dlam_s dlam_e]")
    _assert_mean(dxi_s * dlam_e, 0.0, "E[dxi_s dlam_e]")
    _assert_mean(dlam_s * dxi_e, 0.0, "E[dlam_s dxi_e]")


def test_derived_variable_identities():
    rng = trajectory_stream(5, 3)
    inc = sample_increment(DT, "complex", rng)
    dxi_s, dlam_s, dxi_e, dlam_e = derived_xi_lambda(inc)
    assert dxi_s == inc.du_s - 1j * inc.dv_s
    assert dlam_s == inc.du_s + 1j * inc.dv_s
    assert dxi_e == inc.dv_e - 1j * inc.du_e
    assert dlam_e == inc.dv_e + 1j * inc.du_e


def test_sqrt_dt_scaling():
    rng = trajectory_stream(11, 0)
    normals = rng.standard_normal((64, 4))
    small = increments_from_normals(DT, "complex", normals)
    large = increments_from_normals(4.0 * DT, "complex", normals)
    for a, b in zip(small, large):
        assert np.allclose(2.0 * a, b)


def test_stream_reproducibility():
    a = trajectory_stream(123, 7).standard_normal(16)
    b = trajectory_stream(123, 7).standard_normal(16)
    assert np.array_equal(a, b)
    c = trajectory_stream(123, 8).standard_normal(16)
    d = trajectory_stream(124, 7).standard_normal(16)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_block_draw_matches_sequential_draw():
    # The block propagator pre-draws (n_steps, k) in one call; per-step
    # scalar evolution draws k at a time.  Both must consume the stream
    # identically or the two code paths would diverge.
    block = trajectory_stream(9, 2).standard_normal((32, 4))
    rng = trajectory_stream(9, 2)
    seq = np.stack([rng.standard_normal(4) for _ in range(32)])
    assert np.array_equal(block, seq)


def test_invalid_inputs():
    with pytest.raises(ConfigurationError):
        normals_per_step("gaussian")
    with pytest.raises(ConfigurationError):
        increments_from_normals(DT, "complex", np.zeros((5, 2)))
    with pytest.raises(ConfigurationError):
        sample_increment(0.0, "complex", trajectory_stream(0, 0))
