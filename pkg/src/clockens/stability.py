"""Hadamard variance (HVAR) tools and stability-optimal ensemble weights."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .clock_models import _check_tau
from .decomposition import as_weight


def third_difference(series, m: int) -> np.ndarray:
    p = np.asarray(series, dtype=float)
    n = p.size - 3 * m
    return p[3 * m:3 * m + n] - 3 * p[2 * m:2 * m + n] + 3 * p[m:m + n] - p[:n]


def hvar_estimate(series, tau: float, m: int) -> float:
    """Hadamard variance at interval ``m * tau`` from phases ``p[0..T]``.

    Averages ``(Delta^3_m p[k])^2 / (6 (m tau)^2)`` over ``k = 0 .. T-3m-1``
    (the last available third difference is not used).
    """
    tau = _check_tau(tau)
    m = int(m)
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    p = np.asarray(series, dtype=float).ravel()
    T = p.size - 1
    if T < 3 * m + 1:
        raise ValueError(f"series of length {p.size} is too short for m={m}")
    d = third_difference(p, m)[: T - 3 * m]
    return float(np.dot(d, d) / (T - 3 * m) / (6 * (m * tau) ** 2))


def octave_grid(horizon: int) -> list[int]:
    """Powers of two up to ``horizon // 4``."""
    ms, m = [], 1
    while m <= horizon // 4:
        ms.append(m)
        m *= 2
    return ms


@dataclass
class HvarCurve:
    m: np.ndarray
    interval: np.ndarray
    value: np.ndarray
    source: str = "empirical"
    series_id: str = ""

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=int)
        self.interval = np.asarray(self.interval, dtype=float)
        self.value = np.asarray(self.value, dtype=float)
        if self.source not in ("empirical", "theoretical"):
            raise ValueError(f"unknown HVAR source {self.source!r}")
        if np.any(np.diff(self.m) <= 0):
            raise ValueError("m must be strictly increasing")
        if np.any(self.value < 0):
            raise ValueError("HVAR values must be non-negative")

    def rows(self):
        for m, t, v in zip(self.m, self.interval, self.value):
            yield [self.series_id, int(m), repr(float(t)), repr(float(v)), self.source]

    def at(self, interval: float) -> float:
        i = int(np.argmin(np.abs(self.interval - interval)))
        return float(self.value[i])


HVAR_COLUMNS = ["series_id", "m", "interval_s", "value", "source"]


def hvar_curve(series, tau: float, ms: Sequence[int], series_id: str = "") -> HvarCurve:
    ms = list(ms)
    values = [hvar_estimate(series, tau, m) for m in ms]
    return HvarCurve(ms, np.array(ms) * tau, values, "empirical", series_id)


def write_hvar_csv(path, curves: Iterable[HvarCurve]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HVAR_COLUMNS)
        for curve in curves:
            writer.writerows(curve.rows())


def read_hvar_csv(path) -> list[HvarCurve]:
    groups: dict[tuple[str, str], list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            groups.setdefault((row["series_id"], row["source"]), []).append(row)
    return [HvarCurve([int(r["m"]) for r in rows], [float(r["interval_s"]) for r in rows],
                      [float(r["value"]) for r in rows], source, sid)
            for (sid, source), rows in groups.items()]


# ------------------------------------------------------------- weighted mean

def pi_matrix(tau: float, sigma1_sq, sigma2_sq, sigma3_sq) -> np.ndarray:
    """``Pi(tau) = tau S1 + tau^3/6 S2 + 13 tau^5/360 S3`` (diagonal)."""
    tau = _check_tau(tau)
    d = (tau * np.asarray(sigma1_sq, dtype=float) + tau**3 / 6 * np.asarray(sigma2_sq, dtype=float)
         + 13 * tau**5 / 360 * np.asarray(sigma3_sq, dtype=float))
    return np.diag(d)


def _diag(S) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    return np.diag(S) if S.ndim == 2 else S


@dataclass(frozen=True)
class PsiModel:
    """Free-running weighted-mean clock ``g[k+1] = A g[k] + (I_2 (x) q^T) v_x[k]``.

    Sigma blocks may be given as diagonal matrices or as their diagonals.
    """

    q: np.ndarray
    Sigma1: np.ndarray
    Sigma2: np.ndarray
    Sigma3: np.ndarray
    tau: float
    n_cs: int | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "q", as_weight(self.q))
        for name in ("Sigma1", "Sigma2", "Sigma3"):
            object.__setattr__(self, name, _diag(getattr(self, name)))
        object.__setattr__(self, "tau", _check_tau(self.tau))
        if self.n_cs is not None and np.any(self.Sigma3[: self.n_cs] != 0):
            raise ValueError("Sigma3 must vanish on the Cs clocks")

    @classmethod
    def from_spec(cls, spec, q, tau: float | None = None) -> "PsiModel":
        return cls(q, spec.sigma_diag(1), spec.sigma_diag(2), spec.sigma_diag(3),
                   spec.tau if tau is None else tau, n_cs=spec.N - spec.M)

    def at_tau(self, tau: float) -> "PsiModel":
        return PsiModel(self.q, self.Sigma1, self.Sigma2, self.Sigma3, tau, self.n_cs)

    def pi(self) -> np.ndarray:
        return pi_matrix(self.tau, self.Sigma1, self.Sigma2, self.Sigma3)

    def noise_covariance(self) -> np.ndarray:
        """Covariance of ``(I_2 (x) q^T) v_x``."""
        t, q = self.tau, self.q
        s1, s2, s3 = (q**2 @ self.Sigma1, q**2 @ self.Sigma2, q**2 @ self.Sigma3)
        return np.array([
            [t * s1 + t**3 / 3 * s2 + t**5 / 20 * s3, t**2 / 2 * s2 + t**4 / 8 * s3],
            [t**2 / 2 * s2 + t**4 / 8 * s3, t * s2 + t**3 / 3 * s3],
        ])

    def simulate(self, steps: int, rng: np.random.Generator) -> np.ndarray:
        """Phase trajectory h_g[0..steps] starting from zero."""
        from .clock_models import noise_factor

        L = noise_factor(self.noise_covariance())
        v = rng.standard_normal((steps, 2)) @ L.T
        f = np.concatenate(([0.0], np.cumsum(v[:-1, 1])))
        return np.concatenate(([0.0], np.cumsum(self.tau * f + v[:, 0])))


def hvar_psi(model: PsiModel) -> float:
    """Hadamard variance of the weighted-mean clock, ``q^T Pi(tau) q / tau^2``."""
    q = model.q
    return float(q @ model.pi() @ q / model.tau**2)


def theoretical_curve(model: PsiModel, ms: Sequence[int], series_id: str = "") -> HvarCurve:
    ms = list(ms)
    values = [hvar_psi(model.at_tau(m * model.tau)) for m in ms]
    return HvarCurve(ms, np.array(ms) * model.tau, values, "theoretical", series_id)


def _normalized_inverse(d: np.ndarray, what: str) -> np.ndarray:
    if np.any(d <= 0):
        raise ZeroDivisionError(f"{what} has a zero entry; a noiseless clock makes the optimum singular")
    w = 1.0 / d
    return w / w.sum()


def optimal_weight(tau: float, Sigma1, Sigma2, Sigma3) -> np.ndarray:
    """Weights minimising the weighted-mean HVAR at interval tau:
    ``Pi^{-1} 1 / (1^T Pi^{-1} 1)``."""
    d = np.diag(pi_matrix(tau, _diag(Sigma1), _diag(Sigma2), _diag(Sigma3)))
    return _normalized_inverse(d, "Pi(tau)")


def weight_short_term(Sigma1) -> np.ndarray:
    """Inverse white-FM-variance weights (the tau -> 0 optimum)."""
    return _normalized_inverse(_diag(Sigma1), "Sigma1")


def weight_long_term(Sigma2, N: int, M: int) -> np.ndarray:
    """Inverse random-walk-FM-variance weights over the Cs clocks, zero on
    the masers (the tau -> infinity optimum)."""
    d = _diag(Sigma2)
    if d.size != N or not 0 < M < N:
        raise ValueError("Sigma2 must have N entries and 0 < M < N")
    q = np.zeros(N)
    q[: N - M] = _normalized_inverse(d[: N - M], "Sigma2 over the Cs clocks")
    return q
