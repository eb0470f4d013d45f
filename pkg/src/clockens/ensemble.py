"""Stacked N-clock ensemble model and its forward simulation.

State ordering is fixed everywhere in the package::

    x = [p_1 .. p_N, f_1 .. f_N],  z = [z_{N-M+1} .. z_N],  state = [x; z]

The last M clocks are hydrogen masers, the first N-M are cesium clocks.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .clock_models import (BaseMatrices, ClockKind, ClockSpec, _check_tau,
                           noise_factor, process_covariance)

RANK_RTOL = 1e-10

# labels for independent random streams derived from one master seed
STREAM_PROCESS = 1
STREAM_MEASUREMENT = 2


def default_difference_matrix(N: int) -> np.ndarray:
    """``[I_{N-1} | -1_{N-1}]``: every clock measured against clock N."""
    if int(N) != N or N < 2:
        raise ValueError(f"an ensemble needs N >= 2 clocks, got {N!r}")
    N = int(N)
    return np.hstack([np.eye(N - 1), -np.ones((N - 1, 1))])


def check_difference_matrix(V: np.ndarray, N: int) -> None:
    V = np.asarray(V, dtype=float)
    if V.shape != (N - 1, N):
        raise ValueError(f"V must be {(N - 1, N)}, got {V.shape}")
    s = np.linalg.svd(V, compute_uv=False)
    if s[-1] <= RANK_RTOL * s[0]:
        raise ValueError("V must have rank N-1")
    if np.linalg.norm(V @ np.ones(N)) > RANK_RTOL * s[0] * np.sqrt(N):
        raise ValueError("the kernel of V must be spanned by the all-ones vector")


@dataclass(frozen=True)
class EnsembleSpec:
    clocks: tuple
    tau: float
    r: float
    V: np.ndarray = None

    def __post_init__(self):
        clocks = tuple(self.clocks)
        object.__setattr__(self, "clocks", clocks)
        object.__setattr__(self, "tau", _check_tau(self.tau))
        N = len(clocks)
        if N < 2:
            raise ValueError("an ensemble needs at least two clocks")
        kinds = [c.kind for c in clocks]
        M = kinds.count(ClockKind.HM)
        if M < 1 or M == N:
            raise ValueError("a mixed ensemble needs at least one Cs and one Hm clock")
        if any(k is ClockKind.CS for k in kinds[N - M:]):
            raise ValueError("all Cs clocks must precede all Hm clocks")
        if not (float(self.r) > 0):
            raise ValueError(f"measurement noise variance r must be positive, got {self.r!r}")
        object.__setattr__(self, "r", float(self.r))
        V = default_difference_matrix(N) if self.V is None else np.array(self.V, dtype=float)
        check_difference_matrix(V, N)
        V.setflags(write=False)
        object.__setattr__(self, "V", V)

    @property
    def N(self) -> int:
        return len(self.clocks)

    @property
    def M(self) -> int:
        return sum(c.kind is ClockKind.HM for c in self.clocks)

    @property
    def n_state(self) -> int:
        return 2 * self.N + self.M

    def sigma_diag(self, which: int) -> np.ndarray:
        return np.array([getattr(c, f"sigma{which}") ** 2 for c in self.clocks])

    def digest(self) -> str:
        payload = {
            "clocks": [[c.kind.value, c.sigma1, c.sigma2, c.sigma3] for c in self.clocks],
            "tau": self.tau, "r": self.r, "V": self.V.tolist(),
        }
        return hashlib.sha256(json.dumps(payload).encode()).hexdigest()


@dataclass(frozen=True)
class SystemMatrices:
    Acal: np.ndarray
    Bcal: np.ndarray
    Ccal: np.ndarray
    Q: np.ndarray
    J: np.ndarray
    Sigma1: np.ndarray
    Sigma2: np.ndarray
    Sigma3: np.ndarray
    Sigma4: np.ndarray
    Sigma5: np.ndarray
    base: BaseMatrices


def selector(N: int, M: int) -> np.ndarray:
    return np.vstack([np.zeros((N - M, M)), np.eye(M)])


def assemble_system(spec: EnsembleSpec) -> SystemMatrices:
    N, M, tau = spec.N, spec.M, spec.tau
    base = BaseMatrices.from_tau(tau)
    J = selector(N, M)
    Acal = np.block([
        [np.kron(base.A, np.eye(N)), np.kron(base.beta, J)],
        [np.zeros((M, 2 * N)), np.eye(M)],
    ])
    Bcal = np.vstack([np.kron(base.B, np.eye(N)), np.zeros((M, N))])
    Ccal = np.hstack([np.kron(base.C, spec.V), np.zeros((N - 1, M))])

    S1 = np.diag(spec.sigma_diag(1))
    S2 = np.diag(spec.sigma_diag(2))
    S3 = np.diag(spec.sigma_diag(3))
    S5 = np.diag(spec.sigma_diag(3)[N - M:])
    S4 = J @ S5
    Q = np.block([
        [tau * S1 + tau**3 / 3 * S2 + tau**5 / 20 * S3, tau**2 / 2 * S2 + tau**4 / 8 * S3,
         tau**3 / 6 * S4],
        [tau**2 / 2 * S2 + tau**4 / 8 * S3, tau * S2 + tau**3 / 3 * S3, tau**2 / 2 * S4],
        [tau**3 / 6 * S4.T, tau**2 / 2 * S4.T, tau * S5],
    ])
    return SystemMatrices(Acal, Bcal, Ccal, Q, J, S1, S2, S3, S4, S5, base)


def clock_state_indices(spec: EnsembleSpec, i: int) -> list[int]:
    """Positions of clock i's (p, f[, z]) in the stacked state."""
    N, M = spec.N, spec.M
    idx = [i, N + i]
    if spec.clocks[i].kind is ClockKind.HM:
        idx.append(2 * N + i - (N - M))
    return idx


class ProcessNoise:
    """Correlated process noise, one independent stream per clock.

    Each clock draws from its own child of the master seed, so the sequence a
    clock sees does not depend on horizon chunking or on other clocks.
    """

    def __init__(self, spec: EnsembleSpec, seed: int):
        self.spec = spec
        root = np.random.SeedSequence(seed, spawn_key=(STREAM_PROCESS,))
        self._rngs = [np.random.default_rng(s) for s in root.spawn(spec.N)]
        self._factors = [noise_factor(process_covariance(spec.tau, c)) for c in spec.clocks]
        self._index = [clock_state_indices(spec, i) for i in range(spec.N)]

    def draw(self, steps: int) -> np.ndarray:
        v = np.zeros((steps, self.spec.n_state))
        for rng, L, idx in zip(self._rngs, self._factors, self._index):
            v[:, idx] = rng.standard_normal((steps, len(idx))) @ L.T
        return v


def measurement_noise(spec: EnsembleSpec, seed: int, steps: int) -> np.ndarray:
    ss = np.random.SeedSequence(seed, spawn_key=(STREAM_MEASUREMENT,))
    return np.sqrt(spec.r) * np.random.default_rng(ss).standard_normal((steps, spec.N - 1))


@dataclass
class SimulationTrace:
    """Trajectory of a run: row k of each array belongs to step k.

    ``u[k]`` is the input applied between step k and k+1; the final row is
    the input the policy would apply next.
    """

    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    u: np.ndarray
    seed: int
    spec_hash: str
    v: np.ndarray | None = None
    w: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.x.shape[0] - 1

    @property
    def phases(self) -> np.ndarray:
        return self.x[:, : self.x.shape[1] // 2]

    @property
    def freqs(self) -> np.ndarray:
        return self.x[:, self.x.shape[1] // 2:]

    def columns(self) -> tuple[list[str], np.ndarray]:
        N = self.u.shape[1]
        M = self.z.shape[1]
        names = (["k"] + [f"p_{i + 1}" for i in range(N)] + [f"f_{i + 1}" for i in range(N)]
                 + [f"z_{N - M + j + 1}" for j in range(M)]
                 + [f"y_{i + 1}" for i in range(N - 1)] + [f"u_{i + 1}" for i in range(N)])
        cols = [np.arange(self.horizon + 1)[:, None], self.x, self.z, self.y, self.u]
        for key, arr in self.extras.items():
            arr = np.asarray(arr)
            if arr.ndim == 0:
                continue
            if arr.ndim == 1:
                arr = arr[:, None]
                names.append(key)
            else:
                names.extend(f"{key}_{j + 1}" for j in range(arr.shape[1]))
            cols.append(arr)
        return names, np.hstack(cols)

    def to_csv(self, path) -> None:
        names, data = self.columns()
        write_csv(path, names, data)


def write_csv(path, names: Sequence[str], data: np.ndarray) -> None:
    # repr-exact floats so identical runs give identical bytes
    np.savetxt(path, data, delimiter=",", header=",".join(names), comments="", fmt="%.17g")


Policy = Callable[[int, np.ndarray], np.ndarray]


def zero_policy(N: int) -> Policy:
    u = np.zeros(N)
    return lambda k, y: u


def simulate(sys: SystemMatrices, spec: EnsembleSpec, policy: Policy | None, horizon: int,
             seed: int, initial: np.ndarray | None = None, record_noise: bool = False,
             process_noise: np.ndarray | None = None,
             meas_noise: np.ndarray | None = None) -> SimulationTrace:
    """Run the ensemble forward for ``horizon`` steps.

    At each step k the measurement ``y[k]`` is formed, ``policy(k, y[k])``
    returns the input ``u[k]`` and the state advances.  Precomputed noise
    arrays may be passed in to replay a run exactly.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    N, n = spec.N, spec.n_state
    if policy is None:
        policy = zero_policy(N)
    v = ProcessNoise(spec, seed).draw(horizon) if process_noise is None else process_noise
    w = measurement_noise(spec, seed, horizon + 1) if meas_noise is None else meas_noise

    states = np.empty((horizon + 1, n))
    Y = np.empty((horizon + 1, N - 1))
    U = np.empty((horizon + 1, N))
    s = np.zeros(n) if initial is None else np.array(initial, dtype=float)
    A, B, C = sys.Acal, sys.Bcal, sys.Ccal
    for k in range(horizon + 1):
        states[k] = s
        Y[k] = C @ s + w[k]
        u = np.asarray(policy(k, Y[k]), dtype=float)
        if u.shape != (N,):
            raise ValueError(f"policy returned input of shape {u.shape}, expected {(N,)}")
        U[k] = u
        if k < horizon:
            s = A @ s + B @ u + v[k]
    return SimulationTrace(
        x=states[:, : 2 * N], z=states[:, 2 * N:], y=Y, u=U, seed=seed,
        spec_hash=spec.digest(),
        v=v if record_noise else None, w=w if record_noise else None,
    )


def observability_matrix(A: np.ndarray, C: np.ndarray) -> np.ndarray:
    blocks, M = [], C
    for _ in range(A.shape[0]):
        blocks.append(M)
        M = M @ A
    return np.vstack(blocks)


def unobservable_basis(N: int, M: int) -> np.ndarray:
    """Columns of ``[I_2 (x) 1_N; 0]``."""
    return np.vstack([np.kron(np.eye(2), np.ones((N, 1))), np.zeros((M, 2))])
