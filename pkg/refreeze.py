"""Re-verify every value about to be frozen into tests/test_reference.py."""
import time

import numpy as np
from scipy.linalg import expm

from smfsim.engine import SpinBosonParams
from smfsim.kernels import BathParams, SpectralDensityParams
from smfsim.reference import (
    TinyBathSpec,
    lambda_stat_growth_check,
    one_step_mean_check,
    pure_dephasing_reference,
    single_mode_moment_check,
    tcl2_run,
    tiny_bath_exact,
    tiny_bath_smf,
)

BATH = BathParams(SpectralDensityParams(eta=0.2 / np.pi, delta_c=2.0), kT=1.0)


def bloch_of(rho):
    return np.array([(rho[0, 1] + rho[1, 0]).real,
                     (1j * (rho[0, 1] - rho[1, 0])).real,
                     (rho[0, 0] - rho[1, 1]).real])


# --- TCL2 free evolution vs expm rotation ---
p = SpinBosonParams(omega0=0.3, epsilon=0.7, initial_bloch=(0.6, 0.0, 0.8))
res = tcl2_run(p, None, dt=1e-3, t_max=3.0, output_stride=100)
h = p.h_matrix()
worst = 0.0
for i, t in enumerate(res.times):
    u = expm(-1j * h * t)
    rho = u @ p.rho0() @ u.conj().T
    v = bloch_of(rho)
    worst = max(worst, abs(res.sx[i] - v[0]), abs(res.sy[i] - v[1]),
                abs(res.sz[i] - v[2]))
print(f"tcl2 free vs expm: {worst:.3e}")

# --- TCL2 vs dephasing ---
p0 = SpinBosonParams(omega0=0.3, epsilon=0.0, initial_bloch=(0.0, 0.0, 1.0))
t0 = time.time()
res = tcl2_run(p0, BATH, dt=2.5e-4, t_max=4.0, output_stride=400)
sx, sy, sz = pure_dephasing_reference(p0, BATH, res.times)
print(f"tcl2 vs dephasing: sy {np.max(np.abs(res.sy - sy)):.3e} "
      f"sz {np.max(np.abs(res.sz - sz)):.3e} sx {np.max(np.abs(res.sx - sx)):.3e} "
      f"({time.time()-t0:.1f}s)")

# --- TCL2 frozen spot values ---
p1 = SpinBosonParams(omega0=0.3, epsilon=0.7, initial_bloch=(0.0, 0.0, 1.0))
res = tcl2_run(p1, BATH, dt=2.5e-4, t_max=4.0, output_stride=400)
for tq in (0.4, 2.0, 4.0):
    i = int(np.argmin(np.abs(res.times - tq)))
    print(f"tcl2 spot t={res.times[i]:.1f}: ({res.sx[i]:+.6f}, {res.sy[i]:+.6f}, "
          f"{res.sz[i]:+.6f})")

# --- exact oracle: kappa=0 Rabi ---
spec0 = TinyBathSpec(modes=((1.3, 0.0, 4),), kT=0.25)
pp = SpinBosonParams(omega0=1.0, epsilon=0.5, initial_bloch=(0.8, 0.0, 0.6))
ex = tiny_bath_exact(spec0, pp, dt=2e-3, t_max=2.0, output_stride=100)
h = pp.h_matrix()
worst = 0.0
for i, t in enumerate(ex.times):
    u = expm(-1j * h * t)
    rho = u @ pp.rho0() @ u.conj().T
    worst = max(worst, np.max(np.abs(ex.reduced[i] - rho)))
print(f"exact kappa=0 vs expm: {worst:.3e}  trace_dev={ex.trace_dev:.2e} "
      f"purity_dev={ex.purity_dev:.2e}")

# --- exact vs direct eigendecomposition ---
from smfsim.reference.tiny_bath import (full_space_operators,
                                        initial_total_density,
                                        reduce_to_system)
spec2 = TinyBathSpec(modes=((1.1, 0.25, 8), (0.7, 0.2, 12)), kT=0.5)
ex2 = tiny_bath_exact(spec2, pp, dt=2e-3, t_max=1.0, output_stride=100)
ops = full_space_operators(spec2, pp)
w, v = np.linalg.eigh(ops.h_total)
d0 = initial_total_density(spec2, pp)
d0e = v.conj().T @ d0 @ v
worst = 0.0
for i, t in enumerate(ex2.times):
    ph = np.exp(-1j * w * t)
    d = v @ (ph[:, None] * d0e * ph.conj()[None, :]) @ v.conj().T
    worst = max(worst, np.max(np.abs(ex2.reduced[i]
                                     - reduce_to_system(d, spec2.bath_dim))))
print(f"exact vs eigh: {worst:.3e}")

# --- one-step seeds at N=2e5 ---
spec4 = TinyBathSpec(modes=((1.3, 0.4, 4),), kT=0.25)
for scheme in ("smf", "plain"):
    for seed in (0, 1, 2):
        t0 = time.time()
        rep = one_step_mean_check(spec4, pp, dt=1e-3, n_samples=200000,
                                  scheme=scheme,
                                  stream=np.random.default_rng(seed),
                                  mode_displacements=(0.25,))
        print(f"one-step {scheme} seed {seed}: max_ratio={rep.max_ratio:.3f} "
              f"({time.time()-t0:.1f}s)")

# --- CRN stderr comparison ---
rep_s = one_step_mean_check(spec4, pp, dt=1e-3, n_samples=200000, scheme="smf",
                            stream=np.random.default_rng(3),
                            mode_displacements=(0.25,))
rep_p = one_step_mean_check(spec4, pp, dt=1e-3, n_samples=200000, scheme="plain",
                            stream=np.random.default_rng(3),
                            mode_displacements=(0.25,))
viol = np.sum(rep_s.stderr > rep_p.stderr + 1e-6 * rep_p.stderr + 1e-12)
print(f"crn: violations={viol} worst margin="
      f"{np.max(rep_s.stderr - rep_p.stderr):.3e}")

# --- lambda growth ---
for scheme in ("smf", "plain"):
    for seed in (0, 1):
        rep = lambda_stat_growth_check(spec4, pp, dt=1e-3, n_samples=200000,
                                       scheme=scheme,
                                       stream=np.random.default_rng(seed))
        pred = rep.predicted_smf if scheme == "smf" else rep.predicted_plain
        print(f"lambda {scheme} seed {seed}: pull="
              f"{(rep.empirical - pred) / rep.stderr:+.2f} "
              f"pred_smf={rep.predicted_smf:.6e} pred_plain={rep.predicted_plain:.6e}")

# --- lambda trivial identity at bloch (1,0,0) ---
px = SpinBosonParams(omega0=1.0, epsilon=0.5, initial_bloch=(1.0, 0.0, 0.0))
rep = lambda_stat_growth_check(spec4, px, dt=1e-3, n_samples=1000,
                               scheme="smf", stream=np.random.default_rng(0))
var_b = 0.4**2 / (2 * 1.3)
print(f"lambda trivial: pred_smf={rep.predicted_smf:.12e} "
      f"2dt*varB={2e-3 * var_b:.12e} "
      f"plain-smf={rep.predicted_plain - rep.predicted_smf:.12e} 2dt={2e-3}")

# --- moment check ---
for seed in (0, 1):
    rep = single_mode_moment_check(1.0, 0.005, 0.5, dt=1e-5, t_max=1e-2,
                                   stream=np.random.default_rng(seed))
    print(f"moment seed {seed}: max_dev={rep.max_dev:.3e} n_bar={rep.n_bar:.6f} "
          f"fock_dim={rep.fock_dim}")

# --- SMF free evolution seed 5 ---
t0 = time.time()
sm = tiny_bath_smf(spec0, pp, dt=2e-3, t_max=0.5, n_traj=1024, scheme="smf",
                   stream=np.random.default_rng(5), output_stride=25,
                   divergence_threshold=0.05)
h = pp.h_matrix()
worst = 0.0
for i, t in enumerate(sm.times):
    u = expm(-1j * h * t)
    v = bloch_of(u @ pp.rho0() @ u.conj().T)
    for mean, err, ref in ((sm.mean_sx, sm.err_sx, v[0]),
                           (sm.mean_sy, sm.err_sy, v[1]),
                           (sm.mean_sz, sm.err_sz, v[2])):
        if err[i] > 0:
            worst = max(worst, abs(mean[i] - ref) / err[i])
print(f"smf free seed 5: ratio={worst:.2f} divergent={sm.n_divergent} "
      f"lambda_T={sm.lambda_stat[-1]:.3f} ({time.time()-t0:.1f}s)")

# --- SMF vs exact window, seed 9, both schemes ---
spec_w = TinyBathSpec(modes=((1.1, 0.25, 8), (1.5, 0.3, 8)), kT=0.55)
exw = tiny_bath_exact(spec_w, pp, dt=2.5e-3, t_max=1.5, output_stride=60)
for scheme in ("smf", "plain"):
    t0 = time.time()
    sm = tiny_bath_smf(spec_w, pp, dt=2.5e-3, t_max=1.5, n_traj=1024,
                       scheme=scheme, stream=np.random.default_rng(9),
                       output_stride=60, divergence_threshold=0.25)
    worst = 0.0
    for i in range(len(sm.times)):
        v = bloch_of(exw.reduced[i])
        for mean, err, ref in ((sm.mean_sx, sm.err_sx, v[0]),
                               (sm.mean_sy, sm.err_sy, v[1]),
                               (sm.mean_sz, sm.err_sz, v[2])):
            if err[i] > 0:
                worst = max(worst, abs(mean[i] - ref) / err[i])
    print(f"window {scheme} seed 9: ratio={worst:.2f} divergent={sm.n_divergent} "
          f"lambda_T={sm.lambda_stat[-1]:.4f} ({time.time()-t0:.1f}s)")
