"""Steering every clock onto the weighted ensemble mean.

Run: python3 demos/04_synchronisation.py
"""
import numpy as np

from clockens.control import closed_loop_simulate, feedback_gains, phase_spread
from clockens.decomposition import build_transform
from clockens.ensemble import assemble_system, simulate
from clockens.filters import steady_gains
from clockens.harness import load_config

cfg = load_config("paper_sec5")
spec = cfg.ensemble_spec()
sysm = assemble_system(spec)
b = build_transform(spec, cfg.weight_vector(spec))
gains = steady_gains(b, sysm.Q, spec.r)

H = 10_000
free = simulate(sysm, spec, None, H, seed=1)
for gamma in (0.1, 0.5, 1.0, 1.9):
    tr = closed_loop_simulate(spec, b, gains, feedback_gains(gamma, spec.tau), H, seed=1)
    spread = phase_spread(tr.phases)[int(0.8 * H):].mean()
    print(f"gamma={gamma:<4} final-20% spread {spread:.3e} s   max|u| {tr.extras['max_abs_u']:.2e}")
print(f"uncontrolled  final-20% spread {phase_spread(free.phases)[int(0.8 * H):].mean():.3e} s")

# the input is built from V+ so it never moves the weighted mean
tr = closed_loop_simulate(spec, b, gains, feedback_gains(0.1, spec.tau), 1000, seed=2)
print("\nlargest |q^T u|:", np.abs(tr.u @ b.q).max(), " vs largest |u|:", np.abs(tr.u).max())

# |1 - gamma| >= 1 is rejected unless explicitly allowed, and then it blows up
try:
    feedback_gains(2.5, spec.tau)
except ValueError as exc:
    print("\nrefused:", exc)
bad = closed_loop_simulate(spec, b, gains, feedback_gains(2.5, spec.tau, allow_unstable=True), 200, 1)
print("gamma=2.5 spread at k=50, 100, 200:", phase_spread(bad.phases)[[50, 100, 200]])
