"""Kalman filters for the clock ensemble.

* ``ckf_step``   - conventional filter on the full, undetectable model.  Its
  covariance grows without bound along the ensemble-mean directions.
* ``tkf_step``   - filter in the decomposed coordinates.  Only the observable
  block ``P_oo`` and the cross block ``P_obar_o`` are propagated; the
  diverging ``P_obar_obar`` block is never formed.
* ``sstkf_step`` - the same filter with the steady-state gains from
  ``steady_gains``.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .decomposition import DecompositionBundle
from .ensemble import SystemMatrices

GAINS_FORMAT_VERSION = 1
DEFAULT_P_OO0 = 1e-18


class FilterError(np.linalg.LinAlgError):
    pass


class SolverError(RuntimeError):
    pass


def _sym(P: np.ndarray) -> np.ndarray:
    return (P + P.T) / 2


def _innovation_solve(S: np.ndarray, rhs_T: np.ndarray) -> np.ndarray:
    """Return ``rhs_T @ S^{-1}`` for symmetric positive-definite S."""
    try:
        c = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise FilterError("innovation covariance is not positive definite") from exc
    # X S = R  <=>  S X^T = R^T
    tmp = np.linalg.solve(c, rhs_T.T)
    return np.linalg.solve(c.T, tmp).T


# --------------------------------------------------------------------------- CKF

@dataclass
class CkfState:
    xhat: np.ndarray
    P: np.ndarray
    L: np.ndarray | None = None
    P_prior: np.ndarray | None = None


def ckf_init(n: int, P0: float | np.ndarray = 0.0) -> CkfState:
    P = np.eye(n) * P0 if np.isscalar(P0) else np.array(P0, dtype=float)
    return CkfState(np.zeros(n), P)


def ckf_step(state: CkfState, y, u, sys: SystemMatrices, r: float,
             form: Literal["standard", "as_printed"] = "standard") -> CkfState:
    """One predict/correct cycle.

    ``u`` is the input applied over the previous interval.  With
    ``form="as_printed"`` the corrected estimate is
    ``A @ xhat_prior + L (y - C xhat_prior)``, i.e. the transition matrix is
    applied a second time; ``"standard"`` uses ``xhat_prior + L (...)``.
    """
    A, B, C = sys.Acal, sys.Bcal, sys.Ccal
    x_prior = A @ state.xhat + B @ np.asarray(u, dtype=float)
    P_prior = _sym(A @ state.P @ A.T + sys.Q)
    S = C @ P_prior @ C.T + r * np.eye(C.shape[0])
    L = _innovation_solve(S, P_prior @ C.T)
    P = _sym((np.eye(A.shape[0]) - L @ C) @ P_prior)
    innov = np.asarray(y, dtype=float) - C @ x_prior
    if form == "standard":
        xhat = x_prior + L @ innov
    elif form == "as_printed":
        xhat = A @ x_prior + L @ innov
    else:
        raise ValueError(f"unknown CKF update form {form!r}")
    return CkfState(xhat, P, L, P_prior)


# --------------------------------------------------------------------------- TKF

@dataclass
class TkfState:
    eta_o_hat: np.ndarray
    eta_obar_hat: np.ndarray
    P_oo: np.ndarray | None = None
    P_obar_o: np.ndarray | None = None
    L_o: np.ndarray | None = None
    L_obar: np.ndarray | None = None
    P_oo_prior: np.ndarray | None = None
    P_obar_o_prior: np.ndarray | None = None

    @property
    def eta(self) -> np.ndarray:
        return np.concatenate([self.eta_o_hat, self.eta_obar_hat])


def tkf_init(bundle: DecompositionBundle, P_oo0: float | np.ndarray = DEFAULT_P_OO0,
             P_obar_o0: np.ndarray | None = None) -> TkfState:
    n_o = bundle.n_o
    P_oo = np.eye(n_o) * P_oo0 if np.isscalar(P_oo0) else np.array(P_oo0, dtype=float)
    P_bo = np.zeros((2, n_o)) if P_obar_o0 is None else np.array(P_obar_o0, dtype=float)
    return TkfState(np.zeros(n_o), np.zeros(2), P_oo, P_bo)


def tkf_from_ckf(ckf: CkfState, bundle: DecompositionBundle) -> TkfState:
    """Express a CKF state in decomposed coordinates (P_obar_obar is dropped)."""
    eta = bundle.T @ ckf.xhat
    Pb = bundle.T @ ckf.P @ bundle.T.T
    n = bundle.n_o
    return TkfState(eta[:n], eta[n:], _sym(Pb[:n, :n]), Pb[n:, :n].copy())


def noise_blocks(bundle: DecompositionBundle, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(T_o Q T_o^T, T_obar Q T_o^T)``."""
    QoT = Q @ bundle.T_o.T
    return _sym(bundle.T_o @ QoT), bundle.T_obar @ QoT


def tkf_step(state: TkfState, y, u, bundle: DecompositionBundle, Q: np.ndarray,
             r: float) -> TkfState:
    A_oo, A_bo, A = bundle.A_oo, bundle.A_obar_o, bundle.A_obar
    C_o = bundle.C_o
    Q_oo, Q_bo = noise_blocks(bundle, Q)
    u = np.asarray(u, dtype=float)

    eo_prior = A_oo @ state.eta_o_hat + bundle.B_o @ u
    eb_prior = A_bo @ state.eta_o_hat + A @ state.eta_obar_hat + bundle.B_obar @ u

    P_oo_prior = _sym(A_oo @ state.P_oo @ A_oo.T + Q_oo)
    P_bo_prior = (A_bo @ state.P_oo + A @ state.P_obar_o) @ A_oo.T + Q_bo

    S = C_o @ P_oo_prior @ C_o.T + r * np.eye(C_o.shape[0])
    L_o = _innovation_solve(S, P_oo_prior @ C_o.T)
    L_b = _innovation_solve(S, P_bo_prior @ C_o.T)

    I_o = np.eye(bundle.n_o)
    P_oo = _sym((I_o - L_o @ C_o) @ P_oo_prior)
    P_bo = P_bo_prior @ (I_o - C_o.T @ L_o.T)

    innov = np.asarray(y, dtype=float) - C_o @ eo_prior
    return TkfState(eo_prior + L_o @ innov, eb_prior + L_b @ innov, P_oo, P_bo,
                    L_o, L_b, P_oo_prior, P_bo_prior)


def joseph_posterior(P_prior: np.ndarray, L: np.ndarray, C: np.ndarray, r: float) -> np.ndarray:
    """Joseph-form posterior covariance, used as a PSD cross-check."""
    I_L = np.eye(P_prior.shape[0]) - L @ C
    return _sym(I_L @ P_prior @ I_L.T + r * L @ L.T)


# ------------------------------------------------------------------ steady state

@dataclass
class SteadyGains:
    P_oo_star: np.ndarray
    L_o_star: np.ndarray
    P_obar_o_star: np.ndarray
    L_obar_star: np.ndarray
    closed_loop_spectral_radius: float
    q: np.ndarray | None = None
    riccati_iterations: int = 0
    meta: dict = field(default_factory=dict)

    def save(self, path) -> None:
        np.savez(path, version=GAINS_FORMAT_VERSION, P_oo_star=self.P_oo_star,
                 L_o_star=self.L_o_star, P_obar_o_star=self.P_obar_o_star,
                 L_obar_star=self.L_obar_star,
                 closed_loop_spectral_radius=self.closed_loop_spectral_radius,
                 q=np.array([]) if self.q is None else self.q,
                 riccati_iterations=self.riccati_iterations)

    @classmethod
    def load(cls, path) -> "SteadyGains":
        with np.load(path) as data:
            version = int(data["version"])
            if version != GAINS_FORMAT_VERSION:
                raise ValueError(f"unsupported gains file version {version}")
            q = data["q"]
            return cls(data["P_oo_star"], data["L_o_star"], data["P_obar_o_star"],
                       data["L_obar_star"], float(data["closed_loop_spectral_radius"]),
                       q if q.size else None, int(data["riccati_iterations"]))

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        self.save(buf)
        return buf.getvalue()


def riccati_map(P: np.ndarray, A: np.ndarray, C: np.ndarray, Qn: np.ndarray, r: float) -> np.ndarray:
    """One step of the prior-covariance recursion of the observable block."""
    S = C @ P @ C.T + r * np.eye(C.shape[0])
    APC = A @ P @ C.T
    return _sym(Qn + A @ P @ A.T - _innovation_solve(S, APC) @ APC.T)


def riccati_residual(P: np.ndarray, bundle: DecompositionBundle, Q: np.ndarray, r: float) -> float:
    Q_oo, _ = noise_blocks(bundle, Q)
    R = riccati_map(P, bundle.A_oo, bundle.C_o, Q_oo, r)
    return float(np.linalg.norm(R - P) / np.linalg.norm(P))


def _doubling(A, C, Qn, r, *, log2_steps=None, rtol=1e-15, max_doublings=200):
    """Structure-preserving doubling for the filter-form Riccati recursion.

    Iterate j returns exactly the 2^j-th prior covariance of
    ``P+ = A P A^T + Qn - A P C^T (C P C^T + rI)^{-1} C P A^T`` started at
    ``P = 0``.  The recursion is homogeneous in (P, Qn, r), so it runs on the
    r-scaled problem.
    """
    n = A.shape[0]
    I = np.eye(n)
    Ak = A.T.copy()
    G = C.T @ C
    H = Qn / r
    doublings = log2_steps if log2_steps is not None else max_doublings
    for j in range(1, doublings + 1):
        W = np.linalg.solve(I + G @ H, np.hstack([Ak, G]))
        WA, WG = W[:, :n], W[:, n:]
        H_next = _sym(H + Ak.T @ H @ WA)
        G = _sym(G + Ak @ WG @ Ak.T)
        Ak = Ak @ WA
        if log2_steps is None:
            change = np.linalg.norm(H_next - H) / np.linalg.norm(H_next)
            H = H_next
            if change <= rtol:
                return H * r, j
        else:
            H = H_next
    if log2_steps is None:
        raise SolverError(f"doubling did not converge in {max_doublings} doublings")
    return H * r, doublings


def solve_riccati(bundle: DecompositionBundle, Q: np.ndarray, r: float, *,
                  method: Literal["doubling", "iterate"] = "doubling", rtol: float = 1e-12,
                  max_iter: int = 1_000_000, P0: np.ndarray | None = None,
                  return_iterations: bool = False):
    """Steady prior covariance ``P*_oo`` of the observable block.

    ``method="iterate"`` applies the Riccati map from ``P0`` (zero by default)
    until the relative change drops below ``rtol``.  On ensembles with masers
    the slowest closed-loop mode sits within ~1e-6 of the unit circle, so the
    default is the doubling form of the same recursion, which covers 2^j steps
    in j doublings.
    """
    Q_oo, _ = noise_blocks(bundle, Q)
    A, C = bundle.A_oo, bundle.C_o
    if method == "doubling":
        P, it = _doubling(A, C, Q_oo, r)
        residual = riccati_residual(P, bundle, Q, r)
        if residual > 1e-8:
            raise SolverError(f"doubling finished with Riccati residual {residual:.3e}")
        return (P, it) if return_iterations else P
    if method != "iterate":
        raise ValueError(f"unknown Riccati method {method!r}")
    P = np.zeros_like(A) if P0 is None else np.array(P0, dtype=float)
    change = np.inf
    for it in range(1, max_iter + 1):
        P_next = riccati_map(P, A, C, Q_oo, r)
        norm = np.linalg.norm(P_next)
        change = np.linalg.norm(P_next - P) / norm if norm > 0 else 0.0
        P = P_next
        if change <= rtol:
            break
    else:
        raise SolverError(f"Riccati iteration did not converge in {max_iter} steps "
                          f"(last relative change {change:.3e})")
    return (P, it) if return_iterations else P


def tkf_covariance_after(bundle: DecompositionBundle, Q: np.ndarray, r: float,
                         log2_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Prior ``(P_oo, P_obar_o)`` of the transformed filter at step ``2**log2_steps``.

    The filter is taken to start from a zero covariance.  The whole
    transformed recursion is doubled, including the diverging
    ``P_obar_obar`` block, which never feeds back into the other two.
    """
    Qt = bundle.T @ Q @ bundle.T.T
    C = np.hstack([bundle.C_o, np.zeros((bundle.C_o.shape[0], 2))])
    P, _ = _doubling(bundle.A_full, C, _sym(Qt), r, log2_steps=log2_steps)
    n = bundle.n_o
    return P[:n, :n], P[n:, :n]


def observable_gain(P_oo: np.ndarray, bundle: DecompositionBundle, r: float) -> np.ndarray:
    C = bundle.C_o
    S = C @ P_oo @ C.T + r * np.eye(C.shape[0])
    return _innovation_solve(S, P_oo @ C.T)


def closed_loop_matrix(bundle: DecompositionBundle, L_o: np.ndarray) -> np.ndarray:
    return bundle.A_oo @ (np.eye(bundle.n_o) - L_o @ bundle.C_o)


def cross_covariance_rhs(bundle, Q, P_oo_star, L_o_star) -> np.ndarray:
    _, Q_bo = noise_blocks(bundle, Q)
    I_LC = np.eye(bundle.n_o) - L_o_star @ bundle.C_o
    return Q_bo + bundle.A_obar_o @ I_LC @ P_oo_star @ bundle.A_oo.T


def cross_covariance_residual(X, bundle, Q, P_oo_star, L_o_star) -> float:
    Mcl = closed_loop_matrix(bundle, L_o_star)
    K = cross_covariance_rhs(bundle, Q, P_oo_star, L_o_star)
    R = bundle.A_obar @ X @ Mcl.T + K
    return float(np.linalg.norm(R - X) / np.linalg.norm(X))


def solve_cross_covariance(bundle: DecompositionBundle, Q: np.ndarray, r: float,
                           P_oo_star: np.ndarray, L_o_star: np.ndarray) -> np.ndarray:
    """Steady prior cross-covariance ``P_obar_o`` from its vectorised linear equation.

    Solves ``X = A X Mcl^T + K`` as ``(I - Mcl (x) A) vec X = vec K`` with
    column-major vec and ``Mcl = A_oo (I - L_o C_o)``.
    """
    Mcl = closed_loop_matrix(bundle, L_o_star)
    rho = float(np.max(np.abs(np.linalg.eigvals(Mcl))))
    if rho >= 1.0:
        raise SolverError(f"closed-loop spectral radius {rho:.6f} >= 1, no unique solution")
    K = cross_covariance_rhs(bundle, Q, P_oo_star, L_o_star)
    A = bundle.A_obar
    n = Mcl.shape[0]
    lhs = np.eye(2 * n) - np.kron(Mcl, A)
    vec = np.linalg.solve(lhs, K.reshape(-1, order="F"))
    return vec.reshape((2, n), order="F")


def steady_gains(bundle: DecompositionBundle, Q: np.ndarray, r: float, **riccati_kw) -> SteadyGains:
    P, iters = solve_riccati(bundle, Q, r, return_iterations=True, **riccati_kw)
    L_o = observable_gain(P, bundle, r)
    X = solve_cross_covariance(bundle, Q, r, P, L_o)
    C = bundle.C_o
    S = C @ P @ C.T + r * np.eye(C.shape[0])
    L_b = _innovation_solve(S, X @ C.T)
    rho = float(np.max(np.abs(np.linalg.eigvals(closed_loop_matrix(bundle, L_o)))))
    return SteadyGains(P, L_o, X, L_b, rho, bundle.q.copy(), iters)


def sstkf_step(state: TkfState, y, u, bundle: DecompositionBundle, gains: SteadyGains) -> TkfState:
    """Mean-only update with fixed gains; covariance fields are left unset."""
    u = np.asarray(u, dtype=float)
    eo_prior = bundle.A_oo @ state.eta_o_hat + bundle.B_o @ u
    eb_prior = (bundle.A_obar_o @ state.eta_o_hat + bundle.A_obar @ state.eta_obar_hat
                + bundle.B_obar @ u)
    innov = np.asarray(y, dtype=float) - bundle.C_o @ eo_prior
    return TkfState(eo_prior + gains.L_o_star @ innov, eb_prior + gains.L_obar_star @ innov)


def run_tkf(bundle, Q, r, Y, U, state: TkfState | None = None, keep: bool = False):
    """Filter a measurement stream; ``U[k]`` is the input applied after ``Y[k]``."""
    state = tkf_init(bundle) if state is None else state
    out = []
    u_prev = np.zeros(bundle.N)
    for k in range(len(Y)):
        state = tkf_step(state, Y[k], u_prev, bundle, Q, r)
        u_prev = U[k]
        if keep:
            out.append(state)
    return (state, out) if keep else state


__all__ = [
    "CkfState", "TkfState", "SteadyGains", "FilterError", "SolverError",
    "ckf_init", "ckf_step", "tkf_init", "tkf_from_ckf", "tkf_step", "sstkf_step",
    "solve_riccati", "tkf_covariance_after", "solve_cross_covariance", "steady_gains", "riccati_residual",
    "cross_covariance_residual", "observable_gain", "closed_loop_matrix", "noise_blocks",
    "joseph_posterior", "run_tkf",
]
