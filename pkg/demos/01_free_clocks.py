"""Free-running clocks: process noise, simulation and Hadamard variance.

Run: python3 demos/01_free_clocks.py
"""
import numpy as np

from clockens.clock_models import (ClockSpec, hm_process_covariance, simulate_free_clock,
                                   theoretical_free_hvar)
from clockens.stability import hvar_estimate, octave_grid

cs = ClockSpec("Cs", 0.17e-9, 0.15e-12)              # a cesium clock
hm = ClockSpec("Hm", 0.0216e-9, 0.0829e-12, 1e-19)   # a hydrogen maser (with drift)

print("maser one-second covariance:\n", hm_process_covariance(1.0, hm))

rng = np.random.default_rng(0)
steps = 200_000
p_cs = simulate_free_clock(cs, 1.0, steps, rng)
p_hm = simulate_free_clock(hm, 1.0, steps, rng)

# white FM dominates at short intervals, random walk FM (and drift) later on
print(f"\n{'m tau [s]':>10} {'Cs est':>11} {'Cs theory':>11} {'Hm est':>11} {'Hm theory':>11}")
for m in octave_grid(steps)[::2]:
    print(f"{m:>10} {hvar_estimate(p_cs, 1.0, m):11.3e} {theoretical_free_hvar(m, cs):11.3e}"
          f" {hvar_estimate(p_hm, 1.0, m):11.3e} {theoretical_free_hvar(m, hm):11.3e}")

# a linear frequency drift is invisible to the third difference
k = np.arange(1000.0)
print("\nHVAR of a pure quadratic phase:", hvar_estimate(1e-9 + 1e-12 * k + 1e-18 * k**2, 1.0, 4))
