"""Empirical laws, Kolmogorov-Smirnov distances, independence and convergence checks."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np


class Ecdf:
    """Right-continuous empirical CDF of a finite sample."""

    def __init__(self, samples):
        x = np.sort(np.asarray(samples, dtype=float).ravel())
        if x.size == 0:
            raise ValueError("empty sample")
        if np.isnan(x).any():
            raise ValueError("sample contains NaN")
        self.values = x
        self.n = x.size

    def __call__(self, x):
        return np.searchsorted(self.values, x, side="right") / self.n

    def left(self, x):
        """``F(x-)``, the fraction strictly below ``x``."""
        return np.searchsorted(self.values, x, side="left") / self.n

    def curve_csv(self, path, ref=None, grid_size: int | None = None) -> None:
        """ECDF (and optionally a reference CDF) on a grid spanning the sample range."""
        if grid_size is None:
            xs = np.unique(self.values)
        else:
            xs = np.linspace(self.values[0], self.values[-1], grid_size)
        cols = ["x", "ecdf"] + (["reference"] if ref is not None else [])
        rows = [xs, self(xs)] + ([np.asarray(ref(xs), dtype=float)] if ref is not None else [])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for vals in zip(*rows):
                w.writerow([repr(float(v)) for v in vals])


@dataclass
class KsReport:
    distance: float
    n: int
    threshold: float | None
    passed: bool | None
    reference: str

    def to_dict(self) -> dict:
        return asdict(self)


def ks_distance(ecdf: Ecdf, ref, threshold: float | None = None,
                name: str | None = None) -> KsReport:
    """``sup_x |F_n(x) - F(x)|`` evaluated exactly at the sample points.

    ``ref`` is a callable CDF; if it has a ``left`` method (a discrete
    reference) its left limits are compared with the ECDF's as well.
    """
    if not isinstance(ecdf, Ecdf):
        ecdf = Ecdf(ecdf)
    pts = np.unique(ecdf.values)
    F = np.asarray(ref(pts), dtype=float)
    hi = ecdf(pts)
    lo = ecdf.left(pts)
    d = max(np.max(np.abs(hi - F)), np.max(np.abs(lo - F)))
    left = getattr(ref, "left", None)
    if left is not None and not getattr(ref, "continuous", True):
        FL = np.asarray(left(pts), dtype=float)
        d = max(np.max(np.abs(hi - F)), np.max(np.abs(lo - FL)))
    d = float(min(max(d, 0.0), 1.0))
    passed = None if threshold is None else d <= threshold
    label = name or getattr(ref, "kind", getattr(ref, "__name__", "reference"))
    return KsReport(d, ecdf.n, threshold, passed, label)


def ks_brute_force(samples, ref) -> float:
    """Quadratic reference: compare at every sample point and just below it."""
    x = np.asarray(samples, dtype=float)
    n = len(x)
    best = 0.0
    for p in x:
        F = float(ref(p))
        right = sum(1 for v in x if v <= p) / n
        left = sum(1 for v in x if v < p) / n
        best = max(best, abs(right - F), abs(left - F))
    return best


@dataclass
class IndependenceReport:
    pairs: list
    correlations: list
    max_abs: float
    n: int
    degenerate: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def pairwise_correlation(samples) -> IndependenceReport:
    """Sample correlation for every pair of columns of an ``(n, d)`` matrix."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[1] < 2 or x.shape[0] < 2:
        raise ValueError("need at least two columns and two rows")
    sd = x.std(axis=0)
    degenerate = [int(i) for i in np.nonzero(sd == 0)[0]]
    pairs, cors = [], []
    xc = x - x.mean(axis=0)
    for i in range(x.shape[1]):
        for j in range(i + 1, x.shape[1]):
            pairs.append((i, j))
            if sd[i] == 0 or sd[j] == 0:
                cors.append(float("nan"))
            else:
                c = float(np.mean(xc[:, i] * xc[:, j]) / (sd[i] * sd[j]))
                cors.append(max(-1.0, min(1.0, c)))
    finite = [abs(c) for c in cors if not math.isnan(c)]
    return IndependenceReport(pairs, cors, max(finite) if finite else float("nan"), x.shape[0],
                              degenerate)


@dataclass
class SweepReport:
    horizons: list
    distances: list
    slack: float
    nonincreasing: bool
    rows: list = field(default_factory=list)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.horizons, self.horizons[1:])):
            raise ValueError("horizons must be strictly increasing")

    def to_dict(self) -> dict:
        return asdict(self)


def trend_nonincreasing(distances: Sequence[float], slack: float) -> bool:
    d = list(distances)
    return all(b <= a + slack for a, b in zip(d, d[1:]))


def convergence_sweep(sampler: Callable[[int, int], np.ndarray], reference, horizons,
                      N: int, slack: float = 0.01) -> SweepReport:
    """KS distance per horizon of ``sampler(h, N)`` against ``reference``.

    ``reference`` is a CDF or a callable ``h -> CDF``.  A horizon whose
    simulation fails is recorded with its error and a NaN distance.
    """
    horizons = list(horizons)
    dists, rows = [], []
    for h in horizons:
        ref = reference(h) if getattr(reference, "per_horizon", False) else reference
        try:
            rep = ks_distance(Ecdf(sampler(h, N)), ref)
            dists.append(rep.distance)
            rows.append({"horizon": h, "verdict": "ok", **rep.to_dict()})
        except Exception as exc:  # a failing horizon becomes that row's verdict
            dists.append(float("nan"))
            rows.append({"horizon": h, "verdict": f"error: {exc}"})
    ok = not any(math.isnan(d) for d in dists) and trend_nonincreasing(dists, slack)
    return SweepReport(horizons, dists, slack, ok, rows)


def per_horizon(fn: Callable):
    """Mark ``fn`` as a horizon-dependent reference for ``convergence_sweep``."""
    fn.per_horizon = True
    return fn
