"""Conventional vs transformed Kalman filter on the same measurement stream.

The conventional filter tracks the full state; its covariance keeps growing
along the unobservable ensemble-mean directions.  The transformed filter only
carries the observable block and its cross term with the mean.

Run: python3 demos/03_filters.py
"""
import numpy as np

from clockens.decomposition import build_transform
from clockens.ensemble import assemble_system, simulate
from clockens.filters import (ckf_init, ckf_step, sstkf_step, steady_gains, tkf_from_ckf,
                              tkf_init, tkf_step)
from clockens.harness import load_config

cfg = load_config("paper_sec5")
spec = cfg.ensemble_spec()
sysm = assemble_system(spec)
b = build_transform(spec, cfg.weight_vector(spec))
trace = simulate(sysm, spec, None, 5000, seed=1)
u0 = np.zeros(spec.N)

# start both filters from the same (zero) covariance
ckf = ckf_init(spec.n_state)
tkf = tkf_from_ckf(ckf, b)
gap = []
print(f"{'k':>6} {'CKF max diag P':>15} {'TKF |P_oo|':>12}")
for k in range(5001):
    ckf = ckf_step(ckf, trace.y[k], u0, sysm, spec.r)
    tkf = tkf_step(tkf, trace.y[k], u0, b, sysm.Q, spec.r)
    eta_o = (b.T @ ckf.xhat)[: b.n_o]
    gap.append(np.linalg.norm(eta_o - tkf.eta_o_hat) / np.linalg.norm(tkf.eta_o_hat))
    if k in (0, 10, 100, 1000, 2000, 5000):
        print(f"{k:>6} {np.diag(ckf.P).max():15.3e} {np.linalg.norm(tkf.P_oo):12.3e}")

# the two filters agree on everything the measurements can tell apart
print(f"\nobservable-part gap between the filters: {max(gap[:200]):.1e} over the first"
      f" 200 steps, {max(gap):.1e} over all 5000")

# steady-state gains: Riccati by doubling, cross covariance by one linear solve
g = steady_gains(b, sysm.Q, spec.r)
print(f"steady gains after {g.riccati_iterations} doublings, "
      f"closed-loop spectral radius {g.closed_loop_spectral_radius:.9f}")
print("(the slow maser-drift modes sit this close to 1, which is why the time-varying\n"
      " covariance is still creeping after thousands of steps)")

ss = tkf_init(b)
for k in range(5001):
    ss = sstkf_step(ss, trace.y[k], u0, b, g)
print("steady-state vs time-varying estimate gap [s]:", np.abs(ss.eta_o_hat - tkf.eta_o_hat).max())
