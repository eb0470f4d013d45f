"""Weight-parameterised observable canonical decomposition of the ensemble.

For a weight vector q with ``q @ 1 = 1`` the transform T maps the stacked
state to ``[eta_o; eta_obar]``.  ``eta_o`` (length 2(N-1)+M) holds the
measurable clock differences ``(I_2 (x) V) x`` followed by the maser drifts
``z``; ``eta_obar = (I_2 (x) q^T) x`` is the weighted ensemble mean phase and
frequency, which difference measurements cannot see.

Index conventions inside ``eta_o``: ``xi_p = eta_o[:N-1]``,
``xi_f = eta_o[N-1:2(N-1)]``, ``nu = eta_o[2(N-1):]`` (equal to z).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensemble import EnsembleSpec, assemble_system, selector

Q_SUM_ATOL = 1e-12
COND_LIMIT = 1e12


class DecompositionError(np.linalg.LinAlgError):
    pass


def as_weight(q) -> np.ndarray:
    q = np.array(q, dtype=float).ravel()
    if not np.all(np.isfinite(q)):
        raise ValueError("weight vector must be finite")
    if abs(q.sum() - 1.0) > Q_SUM_ATOL:
        raise ValueError(f"weights must sum to 1, got sum {q.sum()!r}")
    return q


def build_W(q) -> np.ndarray:
    """Full-column-rank W with ``q^T W = 0``, taken as ``(I - 1 q^T) S``.

    S selects the first N-1 coordinates.
    """
    q = as_weight(q)
    N = q.size
    # columns of (I - 1 q^T) only satisfy the single relation sum = 0,
    # so any N-1 of them are independent
    return (np.eye(N) - np.outer(np.ones(N), q))[:, : N - 1]


def generalized_inverse(V, q) -> np.ndarray:
    """Right inverse ``V+ = W (V W)^{-1}`` with ``V V+ = I`` and ``q^T V+ = 0``."""
    V = np.asarray(V, dtype=float)
    W = build_W(q)
    VW = V @ W
    cond = np.linalg.cond(VW)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise DecompositionError(f"V W is singular (condition number {cond:.3e})")
    return W @ np.linalg.inv(VW)


@dataclass(frozen=True)
class DecompositionBundle:
    q: np.ndarray
    V: np.ndarray
    W: np.ndarray
    Vplus: np.ndarray
    T: np.ndarray
    Tinv: np.ndarray
    A_oo: np.ndarray
    A_obar_o: np.ndarray
    A_obar: np.ndarray
    B_o: np.ndarray
    B_obar: np.ndarray
    C_o: np.ndarray
    T_o: np.ndarray
    T_obar: np.ndarray
    N: int
    M: int

    @property
    def n_o(self) -> int:
        return 2 * (self.N - 1) + self.M

    @property
    def xi_p(self) -> slice:
        return slice(0, self.N - 1)

    @property
    def xi_f(self) -> slice:
        return slice(self.N - 1, 2 * (self.N - 1))

    @property
    def nu(self) -> slice:
        return slice(2 * (self.N - 1), self.n_o)

    @property
    def A_full(self) -> np.ndarray:
        """Transformed dynamics ``[[A_oo, 0], [A_obar_o, A]]``."""
        return np.block([[self.A_oo, np.zeros((self.n_o, 2))], [self.A_obar_o, self.A_obar]])

    @property
    def B_full(self) -> np.ndarray:
        return np.vstack([self.B_o, self.B_obar])

    def split(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Stacked state -> (eta_o, eta_obar)."""
        eta = self.T @ s
        return eta[: self.n_o], eta[self.n_o:]


def build_transform(spec: EnsembleSpec, q) -> DecompositionBundle:
    q = as_weight(q)
    N, M = spec.N, spec.M
    if q.size != N:
        raise ValueError(f"weight vector has length {q.size}, ensemble has {N} clocks")
    V = spec.V
    W = build_W(q)
    Vplus = generalized_inverse(V, q)
    I2 = np.eye(2)
    one = np.ones((N, 1))

    T = np.block([
        [np.kron(I2, V), np.zeros((2 * (N - 1), M))],
        [np.zeros((M, 2 * N)), np.eye(M)],
        [np.kron(I2, q[None, :]), np.zeros((2, M))],
    ])
    Tinv = np.block([
        [np.kron(I2, Vplus), np.zeros((2 * N, M)), np.kron(I2, one)],
        [np.zeros((M, 2 * (N - 1))), np.eye(M), np.zeros((M, 2))],
    ])
    T_o = T[: 2 * (N - 1) + M]
    T_obar = T[2 * (N - 1) + M:]

    sysm = assemble_system(spec)
    base = sysm.base
    J = selector(N, M)
    A_oo = np.block([
        [np.kron(base.A, np.eye(N - 1)), np.kron(base.beta, V @ J)],
        [np.zeros((M, 2 * (N - 1))), np.eye(M)],
    ])
    A_obar_o = np.hstack([np.zeros((2, 2 * (N - 1))), np.kron(base.beta, q[None, :] @ J)])
    B_o = np.vstack([np.kron(base.B, V), np.zeros((M, N))])
    B_obar = np.kron(base.B, q[None, :])
    C_o = np.hstack([np.kron(base.C, np.eye(N - 1)), np.zeros((N - 1, M))])
    return DecompositionBundle(
        q=q, V=np.array(V), W=W, Vplus=Vplus, T=T, Tinv=Tinv, A_oo=A_oo, A_obar_o=A_obar_o,
        A_obar=base.A.copy(), B_o=B_o, B_obar=B_obar, C_o=C_o, T_o=T_o, T_obar=T_obar,
        N=N, M=M,
    )
