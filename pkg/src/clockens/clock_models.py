"""Single-clock stochastic deviation models.

A cesium-type (Cs) clock carries two states, phase ``p`` [s] and fractional
frequency ``f``.  A hydrogen-maser-type (Hm) clock adds a frequency drift
state ``z`` [1/s] driven by a random run.  Noise levels are stored in SI
units, without the 1e-9 / 1e-12 / 1e-19 table scalings.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class ClockKind(str, Enum):
    CS = "Cs"
    HM = "Hm"


@dataclass(frozen=True)
class ClockSpec:
    """Noise description of one clock.

    sigma1, sigma2 and sigma3 are the standard deviations of the white
    frequency noise, the random-walk frequency noise and the random run of
    the frequency drift.  ``sigma3`` must be zero for a Cs clock.
    """

    kind: ClockKind
    sigma1: float
    sigma2: float
    sigma3: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ClockKind(self.kind))
        for name in ("sigma1", "sigma2", "sigma3"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {value!r}")
            object.__setattr__(self, name, value)
        if self.kind is ClockKind.CS and self.sigma3 != 0.0:
            raise ValueError("a Cs clock has no drift state, sigma3 must be 0")

    @property
    def dim(self) -> int:
        return 2 if self.kind is ClockKind.CS else 3


@dataclass(frozen=True)
class ClockState:
    p: float
    f: float
    z: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.p, self.f, self.z)):
            raise ValueError("clock state must be finite")


@dataclass(frozen=True)
class BaseMatrices:
    """The per-clock building blocks A, B, beta and C for a sampling interval."""

    tau: float
    A: np.ndarray
    B: np.ndarray
    beta: np.ndarray
    C: np.ndarray

    @classmethod
    def from_tau(cls, tau: float) -> "BaseMatrices":
        tau = _check_tau(tau)
        return cls(
            tau=tau,
            A=np.array([[1.0, tau], [0.0, 1.0]]),
            B=np.array([[tau], [1.0]]),
            beta=np.array([[tau**2 / 2], [tau]]),
            C=np.array([[1.0, 0.0]]),
        )


def _check_tau(tau) -> float:
    tau = float(tau)
    if not (tau > 0) or not math.isfinite(tau):
        raise ValueError(f"sampling interval tau must be positive, got {tau!r}")
    return tau


def cs_process_covariance(tau: float, spec: ClockSpec) -> np.ndarray:
    """2x2 process-noise covariance of a Cs clock over one interval."""
    tau = _check_tau(tau)
    if spec.kind is not ClockKind.CS:
        raise TypeError("cs_process_covariance needs a Cs clock")
    s1, s2 = spec.sigma1**2, spec.sigma2**2
    return np.array([
        [tau * s1 + tau**3 / 3 * s2, tau**2 / 2 * s2],
        [tau**2 / 2 * s2, tau * s2],
    ])


def hm_process_covariance(tau: float, spec: ClockSpec) -> np.ndarray:
    """3x3 process-noise covariance of an Hm clock over one interval."""
    tau = _check_tau(tau)
    if spec.kind is not ClockKind.HM:
        raise TypeError("hm_process_covariance needs an Hm clock")
    s1, s2, s3 = spec.sigma1**2, spec.sigma2**2, spec.sigma3**2
    return np.array([
        [tau * s1 + tau**3 / 3 * s2 + tau**5 / 20 * s3,
         tau**2 / 2 * s2 + tau**4 / 8 * s3,
         tau**3 / 6 * s3],
        [tau**2 / 2 * s2 + tau**4 / 8 * s3, tau * s2 + tau**3 / 3 * s3, tau**2 / 2 * s3],
        [tau**3 / 6 * s3, tau**2 / 2 * s3, tau * s3],
    ])


def process_covariance(tau: float, spec: ClockSpec) -> np.ndarray:
    if spec.kind is ClockKind.CS:
        return cs_process_covariance(tau, spec)
    return hm_process_covariance(tau, spec)


def noise_factor(Q: np.ndarray) -> np.ndarray:
    """Return L with L @ L.T == Q, tolerating singular (PSD) Q."""
    try:
        return np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        w, U = np.linalg.eigh((Q + Q.T) / 2)
        return U * np.sqrt(np.clip(w, 0.0, None))


def transition(spec: ClockSpec, base: BaseMatrices) -> tuple[np.ndarray, np.ndarray]:
    """(Phi, G) of one clock: state_next = Phi @ state + G * u + noise."""
    if spec.kind is ClockKind.CS:
        return base.A, base.B[:, 0]
    Phi = np.block([[base.A, base.beta], [np.zeros((1, 2)), np.ones((1, 1))]])
    return Phi, np.append(base.B[:, 0], 0.0)


def step_clock(state: ClockState, u: float, noise, base: BaseMatrices,
               kind: ClockKind | None = None) -> ClockState:
    """Advance one clock by one interval.

    The clock kind is inferred from the noise length (2 -> Cs, 3 -> Hm)
    unless given explicitly.
    """
    noise = np.asarray(noise, dtype=float).ravel()
    if kind is None:
        kind = {2: ClockKind.CS, 3: ClockKind.HM}.get(noise.size)
        if kind is None:
            raise ValueError(f"noise must have length 2 or 3, got {noise.size}")
    kind = ClockKind(kind)
    expected = 2 if kind is ClockKind.CS else 3
    if noise.size != expected:
        raise ValueError(f"{kind.value} clock needs a noise vector of length {expected}")
    tau = base.tau
    if kind is ClockKind.CS:
        p = state.p + tau * state.f + tau * u + noise[0]
        f = state.f + u + noise[1]
        return ClockState(p, f)
    p = state.p + tau * state.f + tau**2 / 2 * state.z + tau * u + noise[0]
    f = state.f + tau * state.z + u + noise[1]
    return ClockState(p, f, state.z + noise[2])


def theoretical_free_hvar(tau: float, spec: ClockSpec) -> float:
    """Closed-form Hadamard variance of a free-running clock at interval tau."""
    tau = _check_tau(tau)
    return (spec.sigma1**2 / tau + tau / 6 * spec.sigma2**2
            + 11 * tau**3 / 120 * spec.sigma3**2)


def simulate_free_clock(spec: ClockSpec, tau: float, steps: int, rng: np.random.Generator,
                        initial: ClockState | None = None) -> np.ndarray:
    """Phase sequence p[0..steps] of an uncontrolled clock.

    Vectorised with cumulative sums; equivalent to repeated ``step_clock``
    with ``u = 0``.
    """
    base = BaseMatrices.from_tau(tau)
    L = noise_factor(process_covariance(tau, spec))
    v = rng.standard_normal((steps, spec.dim)) @ L.T
    s0 = initial or ClockState(0.0, 0.0)
    if spec.kind is ClockKind.HM:
        # z[k] for k = 0..steps-1
        z = s0.z + np.concatenate(([0.0], np.cumsum(v[:-1, 2])))
        f_inc = v[:, 1] + base.tau * z
        p_extra = base.tau**2 / 2 * z
    else:
        f_inc = v[:, 1]
        p_extra = 0.0
    f = s0.f + np.concatenate(([0.0], np.cumsum(f_inc[:-1])))
    p_inc = base.tau * f + p_extra + v[:, 0]
    return s0.p + np.concatenate(([0.0], np.cumsum(p_inc)))
