"""Per-generation functionals and the multi-generation vector built from them.

Three maps are supported: the interpolated partial-sum (Donsker) path,
the Darling-Erdos statistic and the extremal process.  The compiled
accumulators deliver running extremes of the centered prefix sums
``S_j = xi_1 + ... + xi_j - j m``; this module turns them into the
normalized values.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .offspring import extremal_j_min, extremal_norm_cached

KINDS = ("donsker", "darling-erdos", "extremal")

# columns of an accumulator row
TOTAL, SMAX, SMIN, DEMAX, XMAX = range(5)


def _loglog(t: float) -> float:
    """``L t = log(max(t, e))``."""
    return math.log(max(t, math.e))


def de_constants(k: int) -> tuple[float, float]:
    """``a_k = (2 LLk)^{1/2}`` and ``b_k = 2 LLk + LLLk / 2 - L(4 pi) / 2``."""
    llk = _loglog(_loglog(k))
    lllk = _loglog(llk)
    a = math.sqrt(2.0 * llk)
    b = 2.0 * llk + 0.5 * lllk - 0.5 * _loglog(4.0 * math.pi)
    return a, b


def _check_sigma(sigma: float) -> None:
    if not sigma > 0:
        raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class PathFunctional:
    """Normalized partial-sum path ``t -> (S_{[tk]} + interp) / (sigma sqrt k)``."""

    k: int
    endpoint: float
    sup: float
    inf: float
    grid: np.ndarray | None = None

    @property
    def sup_abs(self) -> float:
        return max(abs(self.sup), abs(self.inf))

    def to_csv(self, path) -> None:
        _series_csv(path, ["index", "value"], self.grid)


@dataclass(frozen=True)
class DeValue:
    k: int
    statistic: float
    raw_max: float


@dataclass(frozen=True)
class ExtremalPath:
    """Step path ``m_k(t)``; ``grid[i]`` is the value at ``t = i / T``."""

    k: int
    a_k: float
    final: float
    grid: np.ndarray | None = None

    def to_csv(self, path) -> None:
        _series_csv(path, ["index", "value"], self.grid)


ZERO = {
    "donsker": PathFunctional(0, 0.0, 0.0, 0.0),
    "darling-erdos": DeValue(0, 0.0, 0.0),
    "extremal": ExtremalPath(0, 1.0, 0.0),
}


def donsker_finalize(state, k: int, m: float, sigma: float, grid=None) -> PathFunctional:
    """Normalize an accumulator row ``[S_k + km, max S_j, min S_j, ...]``."""
    _check_sigma(sigma)
    if k < 1:
        raise ValueError("k must be at least 1")
    scale = sigma * math.sqrt(k)
    g = None if grid is None else np.asarray(grid, dtype=float) / scale
    return PathFunctional(k, (state[TOTAL] - m * k) / scale, state[SMAX] / scale,
                          state[SMIN] / scale, g)


def darling_erdos_finalize(state, k: int, m: float, sigma: float) -> DeValue:
    _check_sigma(sigma)
    if k < 1:
        raise ValueError("k must be at least 1")
    raw = state[DEMAX] / sigma
    a, b = de_constants(k)
    return DeValue(k, a * raw - b, raw)


def extremal_finalize(state, k: int, a_k: float, grid=None) -> ExtremalPath:
    if not a_k > 0:
        raise ValueError("a_k must be positive")
    if k < 1:
        raise ValueError("k must be at least 1")
    g = None if grid is None else np.asarray(grid, dtype=float) / a_k
    return ExtremalPath(k, a_k, max(state[XMAX], 0.0) / a_k, g)


# ---------------------------------------------------------------------------
# brute-force references over stored draws (used by tests and replay checks)


def donsker_path_direct(draws, m: float, sigma: float, T: int) -> PathFunctional:
    x = np.asarray(draws, dtype=float)
    k = len(x)
    s = np.concatenate([[0.0], np.cumsum(x) - m * np.arange(1, k + 1)])
    scale = sigma * math.sqrt(k)
    t = np.arange(T + 1) / T
    grid = np.interp(t * k, np.arange(k + 1), s) / scale
    return PathFunctional(k, s[-1] / scale, s.max() / scale, s.min() / scale, grid)


def darling_erdos_direct(draws, m: float, sigma: float) -> DeValue:
    x = np.asarray(draws, dtype=float)
    k = len(x)
    best = max((x[:j].sum() - m * j) / math.sqrt(j) for j in range(1, k + 1)) / sigma
    a, b = de_constants(k)
    return DeValue(k, a * best - b, best)


def extremal_path_direct(draws, a_k: float, T: int) -> ExtremalPath:
    x = np.asarray(draws, dtype=float)
    k = len(x)
    runmax = np.maximum.accumulate(np.concatenate([[0.0], x]))
    idx = np.minimum((np.arange(T + 1) * k) // T, k)
    return ExtremalPath(k, a_k, runmax[-1] / a_k, runmax[idx] / a_k)


# ---------------------------------------------------------------------------
# multi-generation vectors


@dataclass(frozen=True)
class MultiGenVector:
    """Coordinates newest generation first; ``padded[i]`` marks the zero element."""

    kind: str
    values: tuple
    padded: tuple[bool, ...]

    @property
    def r(self) -> int:
        return len(self.values)

    def scalars(self, stat: str) -> np.ndarray:
        return np.array([getattr(v, stat) for v in self.values], dtype=float)

    def to_csv(self, path, stat: str) -> None:
        _series_csv(path, ["index", "value"], self.scalars(stat), start=1)


def assemble_multigen(run, r: int, kind: str, sigma: float | None = None,
                      extremal_source=None) -> MultiGenVector:
    """Coordinate ``i`` comes from generation ``n - i + 1`` with ``k = Z_{n-i}``."""
    if kind not in KINDS:
        raise ValueError(f"unknown functional {kind!r}")
    if r > run.r:
        raise ValueError(f"run retains {run.r} generations, {r} requested")
    if kind != "extremal" and sigma is None:
        raise ValueError("sigma is required for this functional")
    if kind == "extremal" and extremal_source is None:
        raise ValueError("extremal functional needs the offspring law for a_k")
    n = run.horizon
    values = []
    padded = []
    for i in range(1, r + 1):
        k = int(run.trajectory[n - i])
        if k == 0:
            values.append(ZERO[kind])
            padded.append(True)
            continue
        w = run.r - i
        state = run.window[w]
        if kind == "donsker":
            grid = None if run.donsker_grid is None else run.donsker_grid[w]
            values.append(donsker_finalize(state, k, run.m, sigma, grid))
        elif kind == "darling-erdos":
            values.append(darling_erdos_finalize(state, k, run.m, sigma))
        else:
            grid = None if run.extremal_grid is None else run.extremal_grid[w]
            values.append(extremal_finalize(state, k, extremal_norm_cached(extremal_source, k),
                                            grid))
        padded.append(False)
    return MultiGenVector(kind, tuple(values), tuple(padded))


def coordinate_matrix(ens, stat: str, sigma: float | None = None, r: int | None = None,
                      extremal_source=None) -> np.ndarray:
    """Ensemble-level coordinates, shape ``(replicates, r)``, newest generation first.

    ``stat`` is one of ``endpoint``, ``sup``, ``inf``, ``sup_abs`` (Donsker),
    ``de`` (Darling-Erdos statistic) or ``extremal`` (``m_k(1)``).
    Zero-parent coordinates hold the zero element 0; extremal coordinates
    with ``0 < k < j_min`` (where ``a_k = 0``) are NaN.
    """
    n = ens.config.horizon
    rr = ens.config.r
    r = rr if r is None else r
    out = np.zeros((ens.size, r))
    for i in range(1, r + 1):
        k = ens.trajectories[:, n - i].astype(float)
        st = ens.window[:, rr - i, :]
        live = k > 0
        ks = np.where(live, k, 1.0)
        if stat in ("endpoint", "sup", "inf", "sup_abs"):
            if sigma is None:
                raise ValueError("sigma is required")
            scale = sigma * np.sqrt(ks)
            if stat == "endpoint":
                v = (st[:, TOTAL] - ens.m * ks) / scale
            elif stat == "sup":
                v = st[:, SMAX] / scale
            elif stat == "inf":
                v = st[:, SMIN] / scale
            else:
                v = np.maximum(np.abs(st[:, SMAX]), np.abs(st[:, SMIN])) / scale
        elif stat == "de":
            if sigma is None:
                raise ValueError("sigma is required")
            ab = np.array([de_constants(int(kk)) for kk in ks])
            v = ab[:, 0] * st[:, DEMAX] / sigma - ab[:, 1]
        elif stat == "extremal":
            if extremal_source is None:
                raise ValueError("extremal functional needs the offspring law for a_k")
            # a_k = 0 below j_min: those coordinates are undefined and reported as NaN
            j_min = extremal_j_min(extremal_source)
            a = np.array([extremal_norm_cached(extremal_source, int(kk)) if kk >= j_min
                          else (1.0 if kk == 0 else np.nan) for kk in k])
            v = np.maximum(st[:, XMAX], 0.0) / a
        else:
            raise ValueError(f"unknown statistic {stat!r}")
        out[:, i - 1] = np.where(live, v, 0.0)
    return out


# ---------------------------------------------------------------------------
# weighted sup norms and the product metric


@dataclass(frozen=True)
class LambdaSeq:
    """``gaussian-tail``: ``(delta_j log(j+3))^{-1/2}`` with ``delta_j = c j^p``
    (``params = (c, p)``) or ``delta_j = c log(j+1)`` (``params = (c, "log")``);
    ``moment``: ``j^{-(1+delta)/rho}`` with ``params = (rho, delta)``.
    ``explicit`` takes ``params`` as the values ``lambda_1, lambda_2, ...``.
    """

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind == "gaussian-tail":
            c, p = self.params
            if not c > 0 or (p != "log" and not float(p) > 0):
                raise ValueError("gaussian-tail needs c > 0 and a diverging delta_j rule")
        elif self.kind == "moment":
            rho, delta = self.params
            if not (rho > 0 and delta > 0):
                raise ValueError("moment sequence needs rho > 0 and delta > 0")
        elif self.kind == "explicit":
            if not self.params or any(not v > 0 for v in self.params):
                raise ValueError("explicit lambda values must be positive")
        else:
            raise ValueError(f"unknown lambda kind {self.kind!r}")

    @classmethod
    def inverse(cls) -> "LambdaSeq":
        """``lambda_j = 1/j`` (moment kind with rho = 2, delta = 1)."""
        return cls("moment", (2.0, 1.0))

    def delta(self, j: int) -> float:
        c, p = self.params
        return c * math.log(j + 1) if p == "log" else c * j ** float(p)

    def __call__(self, j) -> np.ndarray | float:
        return lambda_value(self, j)

    def values(self, J: int) -> np.ndarray:
        return np.array([lambda_value(self, j) for j in range(1, J + 1)])


def lambda_value(seq: LambdaSeq, j: int) -> float:
    if j < 1:
        raise ValueError("j must be at least 1")
    if seq.kind == "gaussian-tail":
        return (seq.delta(j) * math.log(j + 3)) ** -0.5
    if seq.kind == "moment":
        rho, delta = seq.params
        return float(j) ** (-(1.0 + delta) / rho)
    if j > len(seq.params):
        raise ValueError("explicit lambda sequence is too short")
    return float(seq.params[j - 1])


def q_lambda(sups, seq: LambdaSeq) -> float:
    """``sup_j lambda_j ||f_j||`` over the supplied (finitely many nonzero) coordinates."""
    best = 0.0
    for j, s in enumerate(sups, start=1):
        if s != 0:
            best = max(best, lambda_value(seq, j) * abs(s))
    return best


def tail_sum_bound(K: int) -> float:
    """Mass ``sum_{k > K} 2^{-k}`` dropped by truncating the product metric."""
    return 2.0 ** -K


def d_infinity(dists, K: int | None = None) -> tuple[float, float]:
    """``sum_{k <= K} 2^{-k} d_k / (1 + d_k)`` and its truncation error bound ``2^{-K}``."""
    d = np.asarray(dists, dtype=float)
    if np.any(d < 0):
        raise ValueError("distances must be nonnegative")
    K = len(d) if K is None else K
    d = d[:K]
    w = 0.5 ** np.arange(1, len(d) + 1)
    return float(np.sum(w * d / (1.0 + d))), tail_sum_bound(K)


def _series_csv(path, header, values, start=0) -> None:
    if values is None:
        raise ValueError("no grid values stored; enable keep_grids")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, v in enumerate(values, start=start):
            w.writerow([i, repr(float(v))])
