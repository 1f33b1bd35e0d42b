"""Offspring laws with exact moments and PGF-based oracles.

Every simulation in the package is checked against quantities computed
here: iterated generating functions, survival and extinction
probabilities, the exact law of ``Z_n`` and the Yaglom limit of a
subcritical process.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import mpmath
import numpy as np
from scipy import special, stats
from scipy.signal import fftconvolve

FAMILIES = ("binary-split", "geometric", "poisson", "discrete-pareto", "explicit-table")


class InvalidSpecError(ValueError):
    """Offspring parameters violate a standing assumption."""


class UndefinedVarianceError(ValueError):
    """The offspring variance is infinite for the requested law."""


class TailMassError(ValueError):
    """A truncated distribution lost more mass than the caller allows."""


@dataclass(frozen=True)
class OffspringSpec:
    """A parametric offspring law ``{p_j}``.

    ``params`` holds the family parameters as a tuple of floats:
    ``(a,)`` for binary split (``p_2 = a``, ``p_0 = 1 - a``), ``(p,)`` for
    geometric (``p_k = p (1-p)^k``), ``(lam,)`` for Poisson,
    ``(alpha, x_min)`` for the discrete Pareto law
    ``p_k ∝ k^-(alpha+1)`` on ``k >= x_min``, and the probabilities
    ``p_0..p_K`` for an explicit table.
    """

    family: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidSpecError(f"unknown offspring family {self.family!r}")
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)
        if any(not math.isfinite(p) or p < 0 for p in params):
            raise InvalidSpecError("offspring parameters must be finite and nonnegative")
        fam = self.family
        if fam == "binary-split":
            (a,) = params
            if not 0 < a <= 1:
                raise InvalidSpecError("binary split needs 0 < a <= 1")
        elif fam == "geometric":
            (p,) = params
            if not 0 < p < 1:
                raise InvalidSpecError("geometric needs 0 < p < 1")
        elif fam == "poisson":
            (lam,) = params
            if lam <= 0:
                raise InvalidSpecError("poisson needs lam > 0")
        elif fam == "discrete-pareto":
            alpha, x_min = params
            if alpha <= 1:
                raise InvalidSpecError("discrete pareto needs alpha > 1 so the mean is finite")
            if x_min < 1 or x_min != int(x_min):
                raise InvalidSpecError("discrete pareto needs an integer x_min >= 1")
        else:
            if len(params) < 2:
                raise InvalidSpecError("explicit table needs at least p_0 and p_1")
            if abs(sum(params) - 1.0) > 1e-12:
                raise InvalidSpecError("explicit table probabilities must sum to 1")
        if self.p0 + self.p1 >= 1:
            raise InvalidSpecError("offspring law must satisfy p_0 + p_1 < 1")

    # constructors
    @classmethod
    def binary_split(cls, a: float) -> "OffspringSpec":
        return cls("binary-split", (a,))

    @classmethod
    def geometric(cls, p: float) -> "OffspringSpec":
        return cls("geometric", (p,))

    @classmethod
    def poisson(cls, lam: float) -> "OffspringSpec":
        return cls("poisson", (lam,))

    @classmethod
    def discrete_pareto(cls, alpha: float, x_min: int = 1) -> "OffspringSpec":
        return cls("discrete-pareto", (alpha, x_min))

    @classmethod
    def explicit_table(cls, probs) -> "OffspringSpec":
        return cls("explicit-table", tuple(probs))

    @classmethod
    def from_dict(cls, data: dict) -> "OffspringSpec":
        return cls(data["family"], tuple(data["params"]))

    def to_dict(self) -> dict:
        return {"family": self.family, "params": list(self.params)}

    @property
    def p0(self) -> float:
        return float(pmf(self, 0))

    @property
    def p1(self) -> float:
        return float(pmf(self, 1))

    @property
    def support_max(self) -> int | None:
        """Largest offspring count with positive mass, ``None`` if unbounded."""
        if self.family == "binary-split":
            return 2
        if self.family == "explicit-table":
            nz = np.nonzero(np.asarray(self.params))[0]
            return int(nz[-1])
        return None


@dataclass(frozen=True)
class MomentSummary:
    m: float
    sigma2: float | None
    criticality: str
    tail_exponent: float | None = None

    @property
    def variance_finite(self) -> bool:
        return self.sigma2 is not None

    def require_sigma2(self) -> float:
        if self.sigma2 is None:
            raise UndefinedVarianceError(
                f"offspring variance is infinite (tail exponent {self.tail_exponent})"
            )
        return self.sigma2


@dataclass
class PmfVector:
    """A truncated law on ``offset, offset+1, ...`` with the unrepresented mass in ``tail``."""

    offset: int
    probs: np.ndarray
    tail: float
    cap: int
    iterations: int | None = field(default=None, compare=False)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if np.any(self.probs < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(self.probs.sum() + self.tail - 1.0) > 1e-10:
            raise ValueError("entries plus tail mass must sum to 1")

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + len(self.probs))

    def pmf(self, k) -> np.ndarray:
        k = np.asarray(k)
        idx = k - self.offset
        ok = (idx >= 0) & (idx < len(self.probs))
        return np.where(ok, self.probs[np.clip(idx, 0, len(self.probs) - 1)], 0.0)

    def cdf(self, k) -> np.ndarray:
        """``P(X <= k)`` for the represented mass (tail sits above ``cap``)."""
        cum = np.cumsum(self.probs)
        idx = np.floor(np.asarray(k, dtype=float)).astype(np.int64) - self.offset
        return np.where(idx < 0, 0.0, cum[np.clip(idx, 0, len(cum) - 1)])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "probability"])
            for k, p in zip(self.support, self.probs):
                writer.writerow([int(k), repr(float(p))])


# ---------------------------------------------------------------------------
# exact per-law quantities


def _zeta_norm(spec: OffspringSpec) -> float:
    alpha, x_min = spec.params
    return float(special.zeta(alpha + 1.0, x_min))


def pmf(spec: OffspringSpec, k) -> np.ndarray:
    """Exact offspring probabilities ``P(xi = k)``."""
    k = np.asarray(k)
    kf = k.astype(float)
    fam = spec.family
    if fam == "binary-split":
        (a,) = spec.params
        return np.where(k == 2, a, np.where(k == 0, 1.0 - a, 0.0))
    if fam == "geometric":
        (p,) = spec.params
        return np.where(k >= 0, p * (1.0 - p) ** np.maximum(kf, 0), 0.0)
    if fam == "poisson":
        (lam,) = spec.params
        return stats.poisson.pmf(k, lam)
    if fam == "discrete-pareto":
        alpha, x_min = spec.params
        with np.errstate(divide="ignore"):
            vals = np.maximum(kf, 1.0) ** (-(alpha + 1.0)) / _zeta_norm(spec)
        return np.where(k >= x_min, vals, 0.0)
    probs = np.asarray(spec.params)
    ok = (k >= 0) & (k < len(probs))
    return np.where(ok, probs[np.clip(k, 0, len(probs) - 1)], 0.0)


def sf(spec: OffspringSpec, x) -> np.ndarray:
    """Exact upper tail ``P(xi > x)``."""
    x = np.floor(np.asarray(x, dtype=float))
    fam = spec.family
    if fam == "geometric":
        (p,) = spec.params
        return np.where(x < 0, 1.0, (1.0 - p) ** (np.maximum(x, -1) + 1))
    if fam == "poisson":
        (lam,) = spec.params
        return stats.poisson.sf(x, lam)
    if fam == "discrete-pareto":
        alpha, x_min = spec.params
        q = np.maximum(x + 1.0, x_min)
        return special.zeta(alpha + 1.0, q) / _zeta_norm(spec)
    top = spec.support_max
    ks = np.arange(top + 1)
    cum = np.cumsum(pmf(spec, ks))
    idx = np.clip(x, -1, top).astype(np.int64)
    return np.where(idx < 0, 1.0, np.clip(1.0 - cum[np.maximum(idx, 0)], 0.0, 1.0))


def moments(spec: OffspringSpec) -> MomentSummary:
    fam = spec.family
    tail = None
    if fam == "binary-split":
        (a,) = spec.params
        m, s2 = 2 * a, 4 * a * (1 - a)
    elif fam == "geometric":
        (p,) = spec.params
        m, s2 = (1 - p) / p, (1 - p) / p**2
    elif fam == "poisson":
        (lam,) = spec.params
        m, s2 = lam, lam
    elif fam == "discrete-pareto":
        alpha, x_min = spec.params
        z = _zeta_norm(spec)
        m = float(special.zeta(alpha, x_min)) / z
        s2 = float(special.zeta(alpha - 1, x_min)) / z - m * m if alpha > 2 else None
        tail = alpha
    else:
        probs = np.asarray(spec.params)
        ks = np.arange(len(probs))
        m = float(ks @ probs)
        s2 = float(((ks - m) ** 2) @ probs)
    if math.isclose(m, 1.0, rel_tol=0, abs_tol=1e-14):
        tag = "critical"
    else:
        tag = "super" if m > 1 else "sub"
    return MomentSummary(m=float(m), sigma2=None if s2 is None else float(s2),
                         criticality=tag, tail_exponent=tail)


def truncation_point(spec: OffspringSpec, eps: float = 1e-17) -> int:
    """Smallest K with ``P(xi > K) <= eps`` (capped for heavy tails)."""
    top = spec.support_max
    if top is not None:
        return top
    if spec.family == "geometric":
        (p,) = spec.params
        return max(int(math.ceil(math.log(eps) / math.log(1 - p))), 1)
    if spec.family == "poisson":
        (lam,) = spec.params
        k = int(lam + 10 * math.sqrt(lam) + 10)
        while sf(spec, k) > eps:
            k += max(1, int(math.sqrt(lam)))
        return k
    return 4096


# ---------------------------------------------------------------------------
# generating functions


def pgf(spec: OffspringSpec, s):
    """``f(s) = sum_k p_k s^k`` for ``s`` in ``[0, 1]``."""
    s = np.asarray(s, dtype=float)
    fam = spec.family
    if fam == "binary-split":
        (a,) = spec.params
        return 1 - a + a * s * s
    if fam == "geometric":
        (p,) = spec.params
        return p / (1 - (1 - p) * s)
    if fam == "poisson":
        (lam,) = spec.params
        return np.exp(lam * (s - 1))
    if fam == "discrete-pareto":
        return np.vectorize(_pareto_pgf_scalar, otypes=[float])(spec, s)
    return np.polynomial.polynomial.polyval(s, np.asarray(spec.params))


def _pareto_pgf_scalar(spec: OffspringSpec, s: float) -> float:
    alpha, x_min = spec.params
    if s == 0:
        return 0.0
    if s == 1:
        return 1.0
    val = s**x_min * mpmath.lerchphi(s, alpha + 1, x_min)
    return float(val) / _zeta_norm(spec)


def survival_step(spec: OffspringSpec, u: float) -> float:
    """``1 - f(1 - u)``, evaluated without cancellation for small ``u``."""
    fam = spec.family
    if u <= 0:
        return 0.0
    if fam == "binary-split":
        (a,) = spec.params
        return a * u * (2 - u)
    if fam == "geometric":
        (p,) = spec.params
        return (1 - p) * u / (p + (1 - p) * u)
    if fam == "poisson":
        (lam,) = spec.params
        return -math.expm1(-lam * u)
    if fam == "discrete-pareto":
        return 1.0 - _pareto_pgf_scalar(spec, 1.0 - u) if u < 1 else 1.0
    probs = np.asarray(spec.params)
    ks = np.arange(len(probs))
    if u >= 1:
        return float(1 - probs[0])
    return float(-(probs * np.expm1(ks * math.log1p(-u))).sum())


def pgf_compose(spec: OffspringSpec, n: int, s: float) -> float:
    """The ``n``-fold composition ``f_n(s)`` with ``f_0(s) = s``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if not 0 <= s <= 1:
        raise ValueError("s must lie in [0, 1]")
    val = float(s)
    for _ in range(n):
        val = float(pgf(spec, val))
    return val


def survival_prob(spec: OffspringSpec, n: int) -> float:
    """``P(Z_n > 0) = 1 - f_n(0)``, iterated on the complement for accuracy."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    return _survival_table(spec, n)[n]


@lru_cache(maxsize=256)
def _survival_table_cached(spec: OffspringSpec, n: int) -> tuple[float, ...]:
    out = [1.0]
    u = 1.0
    for _ in range(n):
        u = survival_step(spec, u)
        out.append(u)
    return tuple(out)


def _survival_table(spec: OffspringSpec, n: int) -> tuple[float, ...]:
    return _survival_table_cached(spec, n)


def survival_table(spec: OffspringSpec, n: int) -> np.ndarray:
    """``P(Z_t > 0)`` for ``t = 0..n``."""
    return np.array(_survival_table(spec, n))


def extinction_prob(spec: OffspringSpec, tol: float = 1e-12) -> float:
    """Smallest root of ``f(s) = s`` on ``[0, 1]``."""
    if moments(spec).m <= 1:
        return 1.0
    p0 = spec.p0
    if p0 == 0:
        return 0.0

    def h(s):
        return float(pgf(spec, s)) - s

    # h(0) = p0 > 0 and h < 0 just below 1 since f'(1) = m > 1
    hi = 0.5
    while h(hi) >= 0:
        hi = 1 - (1 - hi) / 2
        if 1 - hi < 1e-15:
            raise RuntimeError("could not bracket the extinction probability")
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if h(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# truncated polynomial algebra


def _polymul(a: np.ndarray, b: np.ndarray, length: int) -> np.ndarray:
    if min(len(a), len(b)) <= 64 or length <= 512:
        out = np.convolve(a, b)[:length]
    else:
        out = fftconvolve(a, b)[:length]
        np.clip(out, 0.0, None, out=out)
    if len(out) < length:
        out = np.pad(out, (0, length - len(out)))
    return out


def offspring_vector(spec: OffspringSpec, length: int) -> tuple[np.ndarray, float]:
    """Offspring pmf on ``0..length-1`` and the mass above it."""
    ks = np.arange(length)
    vec = pmf(spec, ks).astype(float)
    return vec, float(sf(spec, length - 1))


def _compose_outer(spec: OffspringSpec, g: np.ndarray, cap: int) -> np.ndarray:
    """Coefficients ``0..cap`` of ``f(g(s))`` by Horner's rule."""
    length = cap + 1
    if g[0] == 0:
        K = cap
    else:
        K = truncation_point(spec)
    top = spec.support_max
    if top is not None:
        K = min(K, top)
    coeffs = pmf(spec, np.arange(K + 1)).astype(float)
    res = np.zeros(length)
    res[0] = coeffs[K]
    for k in range(K - 1, -1, -1):
        res = _polymul(res, g, length)
        res[0] += coeffs[k]
    return res


def zn_pmf(spec: OffspringSpec, n: int, cap: int, max_tail: float | None = None) -> PmfVector:
    """Exact law of ``Z_n`` on ``0..cap``; mass above ``cap`` is kept in ``tail``."""
    if n < 0 or cap < 1:
        raise ValueError("need n >= 0 and cap >= 1")
    g = np.zeros(cap + 1)
    g[1] = 1.0
    for _ in range(n):
        g = _compose_outer(spec, g, cap)
    tail = max(0.0, 1.0 - float(g.sum()))
    if max_tail is not None and tail > max_tail:
        raise TailMassError(f"tail mass {tail:.3g} above cap {cap} exceeds {max_tail:.3g}")
    return PmfVector(offset=0, probs=g, tail=tail, cap=cap)


def yaglom_pmf(spec: OffspringSpec, tol: float = 1e-10, cap: int = 256,
               max_iter: int = 100_000, iterations: int | None = None) -> PmfVector:
    """Limit law of ``Z_n`` given ``Z_n > 0`` for a subcritical process.

    The conditional law is iterated until successive laws are within
    ``tol`` in total variation; ``iterations`` forces a fixed count instead.
    """
    mom = moments(spec)
    if mom.m >= 1:
        raise InvalidSpecError("Yaglom limits need a subcritical offspring law (m < 1)")
    if mom.sigma2 is None:
        raise UndefinedVarianceError("Yaglom iteration here assumes E(Z_1^2) < inf")
    fvec, _ = offspring_vector(spec, cap + 1)
    p0 = fvec[0]
    cur = fvec.copy()
    cur[0] = 0.0
    cur_tail = max(0.0, 1.0 - p0 - cur.sum())
    cur /= 1.0 - p0
    cur_tail /= 1.0 - p0
    steps = 0
    limit = iterations if iterations is not None else max_iter
    while steps < limit:
        # law of the next generation started from the current conditional law
        nxt = np.zeros(cap + 1)
        nxt[0] = cur[cap]
        for j in range(cap - 1, -1, -1):
            nxt = _polymul(nxt, fvec, cap + 1)
            nxt[0] += cur[j]
        ks = np.arange(cap + 1)
        surv = float(cur @ (-np.expm1(ks * math.log(p0)))) if p0 > 0 else float(cur.sum())
        # mass beyond the cap is given the survival rate of the represented mass,
        # so untracked mass is carried along instead of being amplified each step
        tail_alive = cur_tail * surv / max(1.0 - cur_tail, 1e-300)
        alive = surv + tail_alive
        new = nxt.copy()
        new[0] = 0.0
        lost = max(0.0, surv - float(new.sum()))
        new /= alive
        new_tail = (lost + tail_alive) / alive
        change = 0.5 * (np.abs(new - cur).sum() + abs(new_tail - cur_tail))
        cur, cur_tail = new, new_tail
        steps += 1
        if iterations is None and change < tol:
            break
    else:
        if iterations is None:
            raise RuntimeError(f"Yaglom iteration did not reach tol={tol} in {max_iter} steps")
    if cur_tail > tol:
        raise TailMassError(f"Yaglom tail mass {cur_tail:.3g} above cap {cap}; raise cap")
    return PmfVector(offset=1, probs=cur[1:], tail=cur_tail, cap=cap, iterations=steps)


# ---------------------------------------------------------------------------
# extremal normalizers


def extremal_j_min(source) -> int:
    """Smallest ``j`` for which the normalizer is strictly positive."""
    s0 = float(_survival_fn(source)(0.0))
    if s0 <= 0:
        raise InvalidSpecError("the law has no mass above 0")
    return int(math.floor(1.0 / s0)) + 1


def _survival_fn(source) -> Callable[[float], float]:
    if isinstance(source, OffspringSpec):
        if source.support_max is not None:
            raise InvalidSpecError(
                "extremal normalizers need F(x) < 1 for all x; bounded offspring laws are rejected"
            )
        return lambda x: float(sf(source, x))
    cdf = source
    return lambda x: 1.0 - float(cdf(x))


def extremal_norm(source, j: int) -> float:
    """``a_j = inf{x >= 0 : 1 - F(x) <= 1/j}`` for an offspring law or a CDF callable."""
    surv = _survival_fn(source)
    j_min = extremal_j_min(source)
    if j < j_min:
        raise ValueError(f"j={j} is below j_min={j_min}; the normalizer would be 0")
    target = 1.0 / j
    if isinstance(source, OffspringSpec):
        return float(_integer_quantile(surv, target))
    lo, hi = 0.0, 1.0
    while surv(hi) > target:
        lo, hi = hi, 2 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if surv(mid) <= target:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-13 * hi:
            break
    return hi


def _integer_quantile(surv: Callable[[float], float], target: float) -> int:
    # smallest integer x >= 0 with P(xi > x) <= target; sf is constant between integers
    lo, hi = 0, 1
    while surv(hi) > target:
        lo, hi = hi, hi * 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if surv(mid) <= target:
            hi = mid
        else:
            lo = mid
    return hi if surv(lo) > target else lo


@lru_cache(maxsize=65536)
def extremal_norm_cached(spec: OffspringSpec, j: int) -> float:
    return extremal_norm(spec, j)
