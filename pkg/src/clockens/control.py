"""Explicit ensemble mean synchronisation.

Every clock is steered so that its phase follows the weighted ensemble mean
``theta = q^T p``.  The input is ``u = V+ phi`` with
``phi = -[F (x) I_{N-1}, D (x) V J] eta_o_hat``, ``F = [gamma/tau, 1]`` and
``D = tau/2``.  Because ``q^T V+ = 0`` the input never moves the weighted
mean itself; the synchronisation error ``p - 1 theta = V+ xi_p`` obeys
``xi_p[k+1] = (1 - gamma) xi_p[k] + ...`` and settles iff ``|1 - gamma| < 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clock_models import _check_tau
from .decomposition import DecompositionBundle
from .ensemble import (EnsembleSpec, ProcessNoise, SimulationTrace, assemble_system,
                       measurement_noise, selector, simulate)
from .filters import SteadyGains, TkfState, sstkf_step, tkf_init, tkf_step


class UnstableControllerError(ValueError):
    pass


@dataclass(frozen=True)
class ControllerConfig:
    gamma: float
    tau: float
    F: np.ndarray
    D: float
    stable: bool


def feedback_gains(gamma: float, tau: float, allow_unstable: bool = False) -> ControllerConfig:
    tau = _check_tau(tau)
    gamma = float(gamma)
    stable = abs(1.0 - gamma) < 1.0
    if not stable and not allow_unstable:
        raise UnstableControllerError(
            f"gamma={gamma} violates |1 - gamma| < 1; pass allow_unstable=True to build it anyway")
    return ControllerConfig(gamma, tau, np.array([[gamma / tau, 1.0]]), tau / 2, stable)


def feedback_matrix(cfg: ControllerConfig, bundle: DecompositionBundle) -> np.ndarray:
    """``[F (x) I_{N-1}, D (x) V J]`` as an (N-1) x (2(N-1)+M) matrix."""
    N, M = bundle.N, bundle.M
    VJ = bundle.V @ selector(N, M)
    return np.hstack([np.kron(cfg.F, np.eye(N - 1)), cfg.D * VJ])


def control_input(eta_o_hat, cfg: ControllerConfig, bundle: DecompositionBundle,
                  K: np.ndarray | None = None) -> np.ndarray:
    eta_o_hat = np.asarray(eta_o_hat, dtype=float)
    if eta_o_hat.shape != (bundle.n_o,):
        raise ValueError(f"observable estimate must have shape {(bundle.n_o,)}, "
                         f"got {eta_o_hat.shape}")
    if K is None:
        K = feedback_matrix(cfg, bundle)
    return bundle.Vplus @ (-(K @ eta_o_hat))


class SyncPolicy:
    """Filter + feedback, usable as a ``simulate`` policy.

    ``filter="sstkf"`` runs the steady-state filter, ``"tkf"`` the
    time-varying one.  Posterior estimates are kept in ``self.estimates``.
    """

    def __init__(self, spec, bundle, gains: SteadyGains | None, cfg: ControllerConfig,
                 filter: str = "sstkf", initial: TkfState | None = None):
        if filter not in ("sstkf", "tkf"):
            raise ValueError(f"unknown filter {filter!r}")
        if filter == "sstkf" and gains is None:
            raise ValueError("the steady-state filter needs precomputed gains")
        self.spec, self.bundle, self.gains, self.cfg = spec, bundle, gains, cfg
        self.filter = filter
        self.Q = assemble_system(spec).Q
        self.K = feedback_matrix(cfg, bundle)
        self.state = initial if initial is not None else tkf_init(bundle)
        self.u_prev = np.zeros(bundle.N)
        self.estimates: list[np.ndarray] = []

    def __call__(self, k: int, y: np.ndarray) -> np.ndarray:
        if self.filter == "sstkf":
            self.state = sstkf_step(self.state, y, self.u_prev, self.bundle, self.gains)
        else:
            self.state = tkf_step(self.state, y, self.u_prev, self.bundle, self.Q, self.spec.r)
        self.estimates.append(self.state.eta)
        u = control_input(self.state.eta_o_hat, self.cfg, self.bundle, self.K)
        self.u_prev = u
        return u


def psi_trajectory(v: np.ndarray, q, spec: EnsembleSpec, g0=None) -> np.ndarray:
    """Free-running weighted-mean dynamics driven by recorded process noise.

    ``g[k+1] = A g[k] + (I_2 (x) q^T) v_x[k]``; returns g with shape
    (len(v) + 1, 2).
    """
    q = np.asarray(q, dtype=float)
    N, tau = spec.N, spec.tau
    drive = np.column_stack([v[:, :N] @ q, v[:, N:2 * N] @ q])
    g = np.zeros((len(v) + 1, 2))
    if g0 is not None:
        g[0] = g0
    # f[k] = f0 + cumsum of frequency noise; p[k+1] = p[k] + tau f[k] + noise
    g[1:, 1] = g[0, 1] + np.cumsum(drive[:, 1])
    g[1:, 0] = g[0, 0] + np.cumsum(tau * g[:-1, 1] + drive[:, 0])
    return g


def destination_trajectory(trace: SimulationTrace, v: np.ndarray, bundle: DecompositionBundle,
                           spec: EnsembleSpec) -> np.ndarray:
    """Integrate the synchronisation-destination dynamics with the true drifts.

    ``eta_obar[k+1] = A eta_obar[k] + (beta (x) q^T J) z[k] + (I_2 (x) q^T) v_x[k]``,
    started from the true weighted mean at k = 0.
    """
    q, N, M = bundle.q, spec.N, spec.M
    A = bundle.A_obar
    coupling = bundle.A_obar_o[:, 2 * (N - 1):]
    drive = np.column_stack([v[:, :N] @ q, v[:, N:2 * N] @ q]) + trace.z[:-1] @ coupling.T
    eta = np.empty((trace.horizon + 1, 2))
    eta[0] = [trace.x[0, :N] @ q, trace.x[0, N:] @ q]
    for k in range(trace.horizon):
        eta[k + 1] = A @ eta[k] + drive[k]
    return eta


def closed_loop_simulate(spec: EnsembleSpec, bundle: DecompositionBundle, gains: SteadyGains | None,
                         cfg: ControllerConfig, horizon: int, seed: int, *,
                         filter: str = "sstkf", reference: str = "true",
                         initial: np.ndarray | None = None,
                         initial_estimate: TkfState | None = None) -> SimulationTrace:
    """Closed-loop run; the returned trace carries the estimates and references.

    Extras on the trace: ``eta_hat`` (posterior estimates), ``p_hat`` (the
    phase estimates they imply), ``theta`` (the
    synchronisation destination, from the true states when
    ``reference="true"`` or integrated separately when
    ``reference="integrated"``), ``sync_error`` (``p - theta``) and
    ``max_abs_u``.
    """
    if reference not in ("true", "integrated"):
        raise ValueError(f"unknown reference mode {reference!r}")
    sysm = assemble_system(spec)
    policy = SyncPolicy(spec, bundle, gains, cfg, filter=filter, initial=initial_estimate)
    v = ProcessNoise(spec, seed).draw(horizon)
    w = measurement_noise(spec, seed, horizon + 1)
    trace = simulate(sysm, spec, policy, horizon, seed, initial=initial,
                     process_noise=v, meas_noise=w, record_noise=True)
    if reference == "true":
        theta = trace.phases @ bundle.q
    else:
        theta = destination_trajectory(trace, v, bundle, spec)[:, 0]
    eta_hat = np.array(policy.estimates)
    trace.extras["eta_hat"] = eta_hat
    trace.extras["p_hat"] = eta_hat @ bundle.Tinv[:spec.N].T
    trace.extras["theta"] = theta
    trace.extras["sync_error"] = trace.phases - theta[:, None]
    trace.extras["max_abs_u"] = float(np.max(np.abs(trace.u)))
    return trace


def phase_spread(phases: np.ndarray) -> np.ndarray:
    """Per-step ``max_ij |p_i - p_j|``."""
    return phases.max(axis=1) - phases.min(axis=1)
