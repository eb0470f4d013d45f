"""The ten-clock ensemble, what the measurements can see, and the decomposition.

Run: python3 demos/02_ensemble_structure.py
"""
import numpy as np

from clockens.decomposition import build_transform
from clockens.ensemble import assemble_system, observability_matrix, unobservable_basis
from clockens.harness import load_config

cfg = load_config("paper_sec5")        # 7 Cs + 3 Hm, tau = 1 s
spec = cfg.ensemble_spec()
sysm = assemble_system(spec)
print(f"N={spec.N}, M={spec.M}, state dimension {spec.n_state}")

# only clock differences are measured, so the common phase and frequency are lost
O = observability_matrix(sysm.Acal, sysm.Ccal)
print("observability rank:", np.linalg.matrix_rank(O), "of", spec.n_state)
print("C @ [1;0;0] and C @ [0;1;0] vanish:", not (sysm.Ccal @ unobservable_basis(spec.N, spec.M)).any())

# pick a weighted mean q and split the state into differences and the mean
q = cfg.weight_vector(spec)
b = build_transform(spec, q)
print("\nweights q:", np.round(q, 4))
print("V V+ = I:", np.allclose(spec.V @ b.Vplus, np.eye(spec.N - 1)),
      "  q^T V+ = 0:", np.abs(q @ b.Vplus).max() < 1e-12)

At = b.T @ sysm.Acal @ b.Tinv
print("upper-right block of T A T^-1 (mean never feeds the differences):",
      np.abs(At[: b.n_o, b.n_o:]).max())
print("shapes: A_oo", b.A_oo.shape, " A_obar_o", b.A_obar_o.shape, " C_o", b.C_o.shape)

s = np.random.default_rng(1).standard_normal(spec.n_state)
eta_o, eta_obar = b.split(s)
print("eta_obar equals (q^T p, q^T f):", np.allclose(eta_obar, [q @ s[:10], q @ s[10:20]]))
