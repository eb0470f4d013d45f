"""Which weighted mean is most stable, and at which averaging time.

Run: python3 demos/05_weights_and_stability.py
"""
import numpy as np

from clockens.harness import load_config
from clockens.stability import (PsiModel, hvar_psi, optimal_weight, weight_long_term,
                                weight_short_term)

spec = load_config("paper_sec5").ensemble_spec()
S1, S2, S3 = (spec.sigma_diag(i) for i in (1, 2, 3))
q0 = weight_short_term(S1)
qinf = weight_long_term(S2, spec.N, spec.M)
np.set_printoptions(precision=4, suppress=True)
print("short-term optimum q0  :", q0)
print("long-term optimum qinf :", qinf)

# the masers win at short intervals and are dropped at long ones (their drift)
print("\n tau [s]   Hm share of q_H(tau)")
for tau in (1e-3, 1.0, 1e3, 1e4, 1e5, 1e6, 1e8):
    print(f"{tau:8.0e}   {optimal_weight(tau, S1, S2, S3)[7:].sum():.6f}")

print(f"\n{'tau [s]':>8} {'Psi(q0)':>10} {'Psi(qinf)':>10} {'Psi(q_H)':>10}")
for tau in (1.0, 10.0, 1e2, 1e3, 1e4, 1e5):
    vals = [hvar_psi(PsiModel.from_spec(spec, q, tau))
            for q in (q0, qinf, optimal_weight(tau, S1, S2, S3))]
    print(f"{tau:8.0e} " + " ".join(f"{v:10.3e}" for v in vals))
