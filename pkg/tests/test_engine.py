"""Trajectory engine correctness: analytic limits, hand-set oracles,
convolution-mode equivalence, divergence accounting, block/scalar parity."""

import numpy as np
import pytest

from smfsim.engine import (
    IDENTITY,
    SIGMA_X,
    IntegratorConfig,
    SpinBosonParams,
    init_state,
    mean_field_source,
    propagate_block,
    run_trajectory,
    run_trajectory_sse,
    smf_step,
)
from smfsim.errors import ConfigurationError, DivergenceError
from smfsim.kernels import BathParams, SpectralDensityParams, build_kernel_table
from smfsim.noise import NoiseIncrement, sample_increment, trajectory_stream

WEAK_BATH = BathParams(SpectralDensityParams(eta=0.2 / np.pi, delta_c=5.0), kT=2.0)

# Frozen symbolic single-step results (rational inputs, exact decimals):
# dt = 0.01, omega0 = 0.3, epsilon = 0.7, initial Bloch (0.6, 0, 0.8),
# du_S = 0.01 + 0.02j, dv_S = -0.005 + 0.001j, no mean field.
STEP_INC = NoiseIncrement(du_s=0.01 + 0.02j, du_e=0.0j,
                          dv_s=-0.005 + 0.001j, dv_e=0.0j)
STEP_EULER = np.array([[0.8952 - 0.0096j, 0.3056 + 0.0070j],
                       [0.3072 + 0.0186j, 0.1048 + 0.0096j]])
STEP_HEUN = np.array([[0.8952054 - 0.0096j, 0.3055874 + 0.0070j],
                      [0.3071874 + 0.0186j, 0.1047946 + 0.0096j]])


@pytest.fixture(scope="module")
def weak_table():
    return build_kernel_table(WEAK_BATH, tau_max=0.6, dtau=1.2e-3)


def _bloch_step(v, omega0, epsilon, b, du, dv, dt, order):
    """Independent route: the same Ito update in Bloch components."""
    def lin(u):
        x, y, z = u
        return np.array([
            -2.0 * dt * epsilon * y,
            2.0 * dt * (-(omega0 + b) * z + epsilon * x),
            2.0 * dt * (omega0 + b) * y,
        ])

    x, y, z = v
    drift = lin(v)
    if order == "heun":
        drift = drift + 0.5 * lin(drift)
    noise = np.array([
        2.0 * du * (1.0 - x * x),
        -2.0 * du * x * y - 2.0 * dv * z,
        -2.0 * du * x * z + 2.0 * dv * y,
    ])
    return np.asarray(v, dtype=complex) + drift + noise


def _rho_from_bloch(v):
    x, y, z = v
    return 0.5 * np.array([[1.0 + z, x - 1j * y], [x + 1j * y, 1.0 - z]])


def test_free_evolution_matches_cosine():
    # Uncoupled, noise suppressed: <sigma_z(t)> = cos(2 omega0 t).
    params = SpinBosonParams(omega0=1.0, epsilon=0.0, initial_bloch=(0, 0, 1))
    cfg = IntegratorConfig(dt=1.2e-3, t_max=8334 * 1.2e-3)
    res = run_trajectory(params, None, cfg, trajectory_stream(0, 0),
                         output_stride=100, suppress_noise=True)
    err = np.max(np.abs(res.sz.real - np.cos(2.0 * res.times)))
    assert err <= 1e-3
    assert np.max(np.abs(res.sz.imag)) <= 1e-12


def test_precession_about_z():
    # omega0 = 0: (sx, sy) rotates at angular frequency 2 epsilon.
    params = SpinBosonParams(omega0=0.0, epsilon=0.7, initial_bloch=(1, 0, 0))
    cfg = IntegratorConfig(dt=1e-3, t_max=2.0)
    res = run_trajectory(params, None, cfg, trajectory_stream(0, 0),
                         output_stride=50, suppress_noise=True)
    assert np.max(np.abs(res.sx.real - np.cos(1.4 * res.times))) <= 1e-5
    assert np.max(np.abs(res.sy.real - np.sin(1.4 * res.times))) <= 1e-5
    assert np.max(np.abs(res.sz)) <= 1e-12


def test_euler_vs_heun_deterministic_order():
    params = SpinBosonParams(omega0=1.0, epsilon=0.0, initial_bloch=(0, 0, 1))
    errs = {}
    for order in ("euler", "heun"):
        cfg = IntegratorConfig(dt=1.2e-3, t_max=10.0008,
                               deterministic_order=order)
        res = run_trajectory(params, None, cfg, trajectory_stream(0, 0),
                             output_stride=200, suppress_noise=True)
        errs[order] = np.max(np.abs(res.sz.real - np.cos(2.0 * res.times)))
    assert errs["heun"] <= 1e-4
    assert errs["euler"] >= 100 * errs["heun"]


@pytest.mark.parametrize("order,frozen", [("euler", STEP_EULER),
                                          ("heun", STEP_HEUN)])
def test_single_step_matches_frozen_literals(order, frozen):
    params = SpinBosonParams(omega0=0.3, epsilon=0.7,
                             initial_bloch=(0.6, 0.0, 0.8))
    cfg = IntegratorConfig(dt=0.01, t_max=0.03, deterministic_order=order)
    state = init_state(params, None, cfg)
    smf_step(state, None, STEP_INC, cfg)
    assert np.max(np.abs(state.rho - frozen)) <= 1e-14
    assert state.step_index == 1
    assert state.q_history[0] == pytest.approx(0.6, abs=1e-15)
    assert state.b_mean == 0.0


@pytest.mark.parametrize("order", ["euler", "heun"])
def test_single_step_with_mean_field_matches_bloch_oracle(order, weak_table):
    # One recorded history step feeds a nonzero <B>; the expected matrix is
    # rebuilt through Bloch-component algebra, an independent route from the
    # engine's matrix operations.
    dt = weak_table.dtau
    params = SpinBosonParams(omega0=0.9, epsilon=0.4,
                             initial_bloch=(0.36, 0.48, 0.8))
    cfg = IntegratorConfig(dt=dt, t_max=4 * dt, deterministic_order=order,
                           convolution_mode="direct")
    state = init_state(params, weak_table, cfg)
    q0, due0, dve0 = 0.37 - 0.21j, 0.011 + 0.007j, -0.009 + 0.013j
    state.q_history[0] = q0
    state.du_e_history[0] = due0
    state.dv_e_history[0] = dve0
    state.step_index = 1

    b_hand = (-weak_table.d_values[1] * (q0 * dt + due0)
              + weak_table.d1_values[1] * dve0)
    inc = NoiseIncrement(du_s=0.012 - 0.004j, du_e=0.002 + 0.001j,
                         dv_s=0.003 + 0.008j, dv_e=-0.001 + 0.002j)
    expected = _rho_from_bloch(_bloch_step(
        (0.36, 0.48, 0.8), 0.9, 0.4, b_hand, inc.du_s, inc.dv_s, dt, order))

    smf_step(state, weak_table, inc, cfg)
    assert np.max(np.abs(state.rho - expected)) <= 1e-14
    assert state.b_mean == pytest.approx(b_hand, abs=1e-15)


def test_mean_field_source_empty_history(weak_table):
    params = SpinBosonParams(omega0=1.0, epsilon=0.0, initial_bloch=(0, 0, 1))
    cfg = IntegratorConfig(dt=weak_table.dtau, t_max=5 * weak_table.dtau)
    state = init_state(params, weak_table, cfg)
    assert mean_field_source(state, weak_table, cfg.dt) == 0.0


def test_mean_field_source_decoupled_is_zero():
    # Zero coupling is represented by running without a kernel table.
    params = SpinBosonParams(omega0=1.0, epsilon=0.0, initial_bloch=(0, 0, 1))
    cfg = IntegratorConfig(dt=1e-3, t_max=0.05, variant="complex")
    state = init_state(params, None, cfg)
    stream = trajectory_stream(3, 0)
    for _ in range(50):
        inc = sample_increment(cfg.dt, cfg.variant, stream)
        smf_step(state, None, inc, cfg)
        assert state.b_mean == 0.0


def test_mean_field_source_two_step_hand_sum(weak_table):
    dt = weak_table.dtau
    params = SpinBosonParams(omega0=1.0, epsilon=0.0, initial_bloch=(0, 0, 1))
    q = (0.31 - 0.12j, -0.64 + 0.05j)
    du_e = (0.013 + 0.004j, -0.008 + 0.011j)
    dv_e = (-0.006 + 0.009j, 0.014 - 0.002j)

    states = {}
    for mode in ("direct", "recursion"):
        cfg = IntegratorConfig(dt=dt, t_max=5 * dt, convolution_mode=mode)
        state = init_state(params, weak_table, cfg)
        for k in range(2):
            state.q_history[k] = q[k]
            state.du_e_history[k] = du_e[k]
            state.dv_e_history[k] = dv_e[k]
            if state.acc_d is not None:
                src = q[k] * dt + du_e[k]
                state.acc_d = state.decay_d * (state.acc_d + src)
                state.acc_d1 = state.decay_d1 * (state.acc_d1 + dv_e[k])
            state.step_index += 1
        states[mode] = mean_field_source(state, weak_table, dt)

    hand = sum(
        -weak_table.d_values[2 - k] * (q[k] * dt + du_e[k])
        + weak_table.d1_values[2 - k] * dv_e[k]
        for k in range(2)
    )
    assert states["direct"] == pytest.approx(hand, rel=1e-13)
    assert states["recursion"] == pytest.approx(states["direct"], rel=1e-12)


@pytest.mark.parametrize("variant", ["complex", "real"])
def test_recursion_equals_direct_pathwise(variant, weak_table):
    # Same noise stream through both convolution modes; <B> agrees to 1e-10
    # relative at every step.
    dt = weak_table.dtau
    params = SpinBosonParams(omega0=1.0, epsilon=0.0, initial_bloch=(0, 0, 1))
    cfgs = {
        mode: IntegratorConfig(dt=dt, t_max=300 * dt, variant=variant,
                               convolution_mode=mode)
        for mode in ("recursion", "direct")
    }
    state_r = init_state(params, weak_table, cfgs["recursion"])
    state_d = init_state(params, weak_table, cfgs["direct"])
    stream = trajectory_stream(11, 4)
    scale = 0.0
    for _ in range(300):
        inc = sample_increment(dt, variant, stream)
        smf_step(state_r, weak_table, inc, cfgs["recursion"])
        smf_step(state_d, weak_table, inc, cfgs["direct"])
        scale = max(scale, abs(state_d.b_mean))
        assert abs(state_r.b_mean - state_d.b_mean) <= 1e-10 * max(scale, 1e-12)
    assert np.max(np.abs(state_r.rho - state_d.rho)) <= 1e-10


def test_single_weak_coupling_trajectory_stays_sane(weak_table):
    # One full-length weak-coupling trajectory: finite, never trips the trace
    # assertion, not flagged divergent (frozen stream).
    dt = 1.2e-3
    table = build_kernel_table(WEAK_BATH, tau_max=8334 * dt, dtau=dt)
    params = SpinBosonParams(omega0=1.0, epsilon=0.0, initial_bloch=(0, 0, 1))
    cfg = IntegratorConfig(dt=dt, t_max=8334 * dt, variant="complex")
    res = run_trajectory(params, table, cfg, trajectory_stream(77, 0),
                         output_stride=500)
    assert not res.divergent
    for series in (res.sx, res.sy, res.sz):
        assert np.all(np.isfinite(series.real)) and np.all(np.isfinite(series.imag))


def test_trace_tolerance_scales_with_peak_norm():
    params = SpinBosonParams(omega0=1.0, epsilon=0.0, initial_bloch=(0, 0, 1))
    cfg = IntegratorConfig(dt=1e-3, t_max=0.01)
    state = init_state(params, None, cfg)
    # Legitimate large-norm state (complex-variant excursions): trace still 1,
    # roundoff residue ~eps * ||rho|| must not abort the path.
    state.rho = np.array([[0.5, 50.0 + 20.0j], [50.0 - 10.0j, 0.5]],
                         dtype=complex)
    inc = NoiseIncrement(du_s=0.01 + 0.01j, du_e=0.0j, dv_s=0.005j, dv_e=0.0j)
    smf_step(state, None, inc, cfg)
    assert state.peak_norm >= 50.0
    assert not state.divergent

    # A genuine trace leak is still caught: well above eps * peak_norm.
    state.rho = state.rho + 1e-8 * IDENTITY
    with pytest.raises(DivergenceError):
        smf_step(state, None, inc, cfg)


def test_real_variant_hermitian_pathwise(weak_table):
    # Real-noise paths keep rho Hermitian, so all observables stay real.
    params = SpinBosonParams(omega0=1.0, epsilon=0.3, initial_bloch=(0, 0, 1))
    cfg = IntegratorConfig(dt=weak_table.dtau, t_max=0.48, variant="real")
    res = run_trajectory(params, weak_table, cfg, trajectory_stream(9, 2),
                         output_stride=1)
    for series in (res.sx, res.sy, res.sz):
        assert np.max(np.abs(series.imag)) <= 1e-12


def test_complex_variant_observables_are_complex(weak_table):
    # The exact variant is non-Hermitian along paths by design.
    params = SpinBosonParams(omega0=1.0, epsilon=0.3, initial_bloch=(0, 0, 1))
    cfg = IntegratorConfig(dt=weak_table.dtau, t_max=0.48, variant="complex")
    res = run_trajectory(params, weak_table, cfg, trajectory_stream(9, 2),
                         output_stride=1)
    assert np.max(np.abs(res.sz.imag)) > 1e-6


def test_maximally_mixed_anticommutator_term():
    # At rho = I/2 the centered anticommutator equals Q exactly, the centered
    # commutator vanishes, and omega0 = epsilon = 0 kills the drift: one step
    # is rho + du_S * sigma_x.
    params = SpinBosonParams(omega0=0.0, epsilon=0.0, initial_bloch=(0, 0, 0))
    cfg = IntegratorConfig(dt=0.01, t_max=0.03)
    state = init_state(params, None, cfg)
    inc = NoiseIncrement(du_s=0.02 - 0.015j, du_e=0.0j,
                         dv_s=0.007 + 0.003j, dv_e=0.0j)
    smf_step(state, None, inc, cfg)
    expected = 0.5 * IDENTITY + inc.du_s * SIGMA_X
    assert np.max(np.abs(state.rho - expected)) <= 1e-16


def test_divergence_marker_and_noop_after_death():
    params = SpinBosonParams(omega0=0.0, epsilon=0.0, initial_bloch=(0, 0, 1))
    cfg = IntegratorConfig(dt=0.01, t_max=0.05)
    state = init_state(params, None, cfg)
    huge = NoiseIncrement(du_s=1e7 + 0.0j, du_e=0.0j, dv_s=0.0j, dv_e=0.0j)
    smf_step(state, None, huge, cfg)
    assert state.divergent and state.divergence_step == 1
    frozen = state.rho.copy()
    smf_step(state, None, huge, cfg)
    assert state.step_index == 1
    assert np.array_equal(state.rho, frozen)


def test_scalar_divergence_matches_block_fixture():
    # Stream (7, 5) at these settings dies at step 33; the scalar path must
    # reproduce the block accounting exactly, with NaN outputs past death.
    params = SpinBosonParams(omega0=1.0, epsilon=0.0, initial_bloch=(0, 0, 1))
    cfg = IntegratorConfig(dt=0.05, t_max=5.0, variant="complex")
    res = run_trajectory(params, None, cfg, trajectory_stream(7, 5),
                         output_stride=10)
    assert res.divergent and res.divergence_step == 33
    assert np.all(np.isnan(res.sz.real[res.times > 33 * 0.05]))


def test_block_per_time_inclusion_counts():
    params = SpinBosonParams(omega0=1.0, epsilon=0.0, initial_bloch=(0, 0, 1))
    cfg = IntegratorConfig(dt=0.05, t_max=5.0, variant="complex")
    res = propagate_block(params, None, cfg, 7, np.arange(8), output_stride=10)
    assert res.divergent_steps == ((5, 33), (7, 48))
    steps = np.round(res.times / cfg.dt).astype(int)
    expected = 8 - (steps >= 33).astype(int) - (steps >= 48).astype(int)
    assert np.array_equal(res.n_included, expected)
    assert np.all(np.isfinite(res.sum_obs.real))
    assert np.all(np.isfinite(res.sumsq_re)) and np.all(res.sumsq_re >= 0.0)


@pytest.mark.parametrize("variant,scheme", [("complex", "density"),
                                            ("real", "density"),
                                            ("complex", "sse")])
def test_block_matches_scalar_runs(variant, scheme, weak_table):
    params = SpinBosonParams(omega0=1.0, epsilon=0.2, initial_bloch=(0, 0, 1))
    cfg = IntegratorConfig(dt=weak_table.dtau, t_max=0.3, variant=variant)
    indices = np.array([0, 1, 2])
    block = propagate_block(params, weak_table, cfg, 42, indices,
                            output_stride=50, scheme=scheme)
    runner = run_trajectory_sse if scheme == "sse" else run_trajectory
    total = np.zeros_like(block.sum_obs)
    for idx in indices:
        res = runner(params, weak_table, cfg, trajectory_stream(42, int(idx)),
                     output_stride=50)
        total += np.stack([res.sx, res.sy, res.sz], axis=1)
    assert np.array_equal(block.n_included, np.full(len(block.times), 3))
    assert np.max(np.abs(block.sum_obs - total)) <= 1e-10


def test_sse_equals_density_without_noise():
    # Both reduce to unitary evolution; they agree with the exact rotation and
    # with each other to integrator order (the two discretizations differ at
    # O(dt^3) per step).
    from scipy.linalg import expm

    params = SpinBosonParams(omega0=0.8, epsilon=0.5, initial_bloch=(0, 0, 1))
    cfg = IntegratorConfig(dt=1e-3, t_max=1.0)
    rd = run_trajectory(params, None, cfg, trajectory_stream(0, 0),
                        output_stride=100, suppress_noise=True)
    rs = run_trajectory_sse(params, None, cfg, trajectory_stream(0, 0),
                            output_stride=100, suppress_noise=True)
    h = params.h_matrix()
    for res in (rd, rs):
        for i, t in enumerate(res.times):
            u = expm(-1j * t * h)
            rho = u @ params.rho0() @ u.conj().T
            assert abs(res.sz[i] - (rho[0, 0] - rho[1, 1])) <= 1e-5
            assert abs(res.sx[i] - (rho[0, 1] + rho[1, 0])) <= 1e-5
    for a, b in ((rd.sx, rs.sx), (rd.sy, rs.sy), (rd.sz, rs.sz)):
        assert np.max(np.abs(a - b)) <= 1e-5


def test_sse_requires_pure_initial_state():
    params = SpinBosonParams(omega0=1.0, epsilon=0.0,
                             initial_bloch=(0.0, 0.0, 0.5))
    cfg = IntegratorConfig(dt=1e-3, t_max=0.01)
    with pytest.raises(ConfigurationError):
        run_trajectory_sse(params, None, cfg, trajectory_stream(0, 0))


def test_sse_mean_agrees_with_density_mean():
    # The two unravelings share the ensemble mean for the complex variant
    # (E[dxi*dlam] = 0 kills the extra Ito cross term of the dyad product);
    # decoupled system, active noise, agreement within 4 combined stderr.
    params = SpinBosonParams(omega0=1.0, epsilon=0.0, initial_bloch=(0, 0, 1))
    cfg = IntegratorConfig(dt=1e-3, t_max=0.4, variant="complex")
    stats = {}
    for scheme in ("density", "sse"):
        res = propagate_block(params, None, cfg, 21, np.arange(2048),
                              output_stride=100, scheme=scheme)
        n = res.n_included[:, None]
        mean = res.sum_obs.real / n
        var = np.maximum(res.sumsq_re / n - mean**2, 0.0)
        stats[scheme] = (mean, np.sqrt(var / n))
    gap = np.abs(stats["density"][0] - stats["sse"][0])
    comb = np.hypot(stats["density"][1], stats["sse"][1])
    assert np.all(gap[1:] <= 4.0 * np.maximum(comb[1:], 1e-9))


def test_output_stride_always_emits_final_step():
    params = SpinBosonParams(omega0=1.0, epsilon=0.0, initial_bloch=(0, 0, 1))
    cfg = IntegratorConfig(dt=0.01, t_max=1.0)
    res = run_trajectory(params, None, cfg, trajectory_stream(0, 0),
                         output_stride=33, suppress_noise=True)
    steps = np.round(res.times / cfg.dt).astype(int)
    assert steps[0] == 0 and steps[-1] == 100
    assert np.all(np.diff(steps) > 0)

    res = run_trajectory(params, None, cfg, trajectory_stream(0, 0),
                         output_stride=1000, suppress_noise=True)
    assert np.round(res.times / cfg.dt).astype(int).tolist() == [0, 100]


def test_configuration_validation():
    good = SpinBosonParams(omega0=1.0, epsilon=0.0, initial_bloch=(0, 0, 1))
    with pytest.raises(ConfigurationError):
        SpinBosonParams(omega0=1.0, epsilon=0.0, initial_bloch=(1.0, 0.4, 0.0))
    with pytest.raises(ConfigurationError):
        IntegratorConfig(dt=-1e-3, t_max=1.0)
    with pytest.raises(ConfigurationError):
        IntegratorConfig(dt=1e-3, t_max=1.0005)
    with pytest.raises(ConfigurationError):
        IntegratorConfig(dt=1e-3, t_max=1.0, variant="imaginary")
    with pytest.raises(ConfigurationError):
        IntegratorConfig(dt=1e-3, t_max=1.0, deterministic_order="rk4")
    with pytest.raises(ConfigurationError):
        IntegratorConfig(dt=1e-3, t_max=1.0, convolution_mode="fft")

    table = build_kernel_table(WEAK_BATH, tau_max=0.1, dtau=1e-3)
    cfg = IntegratorConfig(dt=1e-3, t_max=0.5, convolution_mode="direct")
    with pytest.raises(ConfigurationError):
        run_trajectory(good, table, cfg, trajectory_stream(0, 0))
    with pytest.raises(ConfigurationError):
        propagate_block(good, table, cfg, 0, np.arange(2))
    with pytest.raises(ConfigurationError):
        # Kernel grid must divide the step.
        bad_cfg = IntegratorConfig(dt=1.5e-3, t_max=0.015)
        run_trajectory(good, table, bad_cfg, trajectory_stream(0, 0))
