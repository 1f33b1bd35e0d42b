"""Reference limit distributions for the verification harness."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special

from .functionals import LambdaSeq, lambda_value
from .offspring import InvalidSpecError, OffspringSpec, moments, offspring_vector, yaglom_pmf


class TruncationError(RuntimeError):
    """A product or mixture could not be truncated within the requested tolerance."""

    def __init__(self, msg: str, J: int):
        super().__init__(msg)
        self.J = J


def std_normal_cdf(x):
    return special.ndtr(x)


def gumbel_cdf(x):
    return np.exp(-np.exp(-np.asarray(x, dtype=float)))


def frechet_cdf(x, alpha: float):
    if not alpha > 1:
        raise ValueError("Frechet index must exceed 1")
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        val = np.exp(-np.power(np.where(x > 0, x, 1.0), -alpha))
    return np.where(x > 0, val, 0.0)


def brownian_sup_cdf(x):
    """``P(sup_{t<=1} B(t) <= x) = 2 Phi(x) - 1`` for ``x >= 0``."""
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, special.erf(np.maximum(x, 0.0) / math.sqrt(2.0)), 0.0)


# ---------------------------------------------------------------------------
# weighted sup product laws


def _log_factor(y: np.ndarray, absolute: bool) -> np.ndarray:
    if absolute:
        return np.log1p(-special.erfc(y / math.sqrt(2.0)))
    return special.log_ndtr(y)


def _tail_term(seq: LambdaSeq, x: float, t: float) -> float:
    # 2 exp(-x^2 / (2 lambda(t)^2)) bounds -log F(x / lambda(t)) once 1 - F <= 1/2
    lam = _lambda_real(seq, t)
    return 2.0 * math.exp(-0.5 * (x / lam) ** 2)


def _lambda_real(seq: LambdaSeq, t: float) -> float:
    if seq.kind == "moment":
        rho, delta = seq.params
        return t ** (-(1.0 + delta) / rho)
    if seq.kind == "gaussian-tail":
        c, p = seq.params
        d = c * math.log(t + 1) if p == "log" else c * t ** float(p)
        return (d * math.log(t + 3)) ** -0.5
    raise ValueError("explicit sequences have no tail bound")


def weighted_sup_truncation(seq: LambdaSeq, x: float, absolute: bool = True,
                            tol: float = 1e-12, max_terms: int = 10_000_000) -> int:
    """Smallest power-of-two ``J`` whose remaining log-product is provably below ``tol``.

    For ``j > J`` the factors satisfy ``-log F(x/lambda_j) <= 2 exp(-x^2/(2 lambda_j^2))``
    and, ``lambda`` being decreasing, the sum over ``j > J`` is at most the
    integral of that bound over ``(J, inf)``.
    """
    if seq.kind == "explicit":
        return len(seq.params)
    J = 1
    while J <= max_terms:
        y = x / _lambda_real(seq, J)
        tail_ok = y > 1.0  # 1 - F(y) < 1/2 here, and further out since lambda decreases
        if tail_ok:
            # a quadrature warning means the bound is not trustworthy yet: keep doubling
            with warnings.catch_warnings():
                warnings.simplefilter("error", integrate.IntegrationWarning)
                try:
                    bound, err = integrate.quad(lambda t: _tail_term(seq, x, t), J, np.inf,
                                                limit=200)
                except integrate.IntegrationWarning:
                    bound, err = math.inf, math.inf
            if bound + err < tol:
                return J
        J *= 2
    raise TruncationError(f"tail bound not below {tol} within {max_terms} terms", J)


def weighted_sup_cdf(seq: LambdaSeq, x, absolute: bool = True, tol: float = 1e-12):
    """``P(sup_j lambda_j |G_j| <= x)`` (or without ``| |``) as a truncated product."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros_like(xs)
    for i, xv in enumerate(xs):
        if xv <= 0:
            continue
        J = weighted_sup_truncation(seq, xv, absolute, tol)
        lam = np.array([lambda_value(seq, j) for j in range(1, J + 1)])
        out[i] = math.exp(float(np.sum(_log_factor(xv / lam, absolute))))
    return out if np.ndim(x) else float(out[0])


# ---------------------------------------------------------------------------
# mixtures


@dataclass(frozen=True)
class WSample:
    """Kesten-Stigum ``W_N = Z_N / m^N`` draws with survival flags."""

    w: np.ndarray
    survived: np.ndarray
    horizon: int

    def __post_init__(self):
        if len(self.w) == 0:
            raise ValueError("empty W-sample set")
        if len(self.w) != len(self.survived):
            raise ValueError("W values and survival flags differ in length")

    @property
    def surviving_fraction(self) -> float:
        return float(np.mean(self.survived))


def w_samples(spec: OffspringSpec, horizon: int, count: int, seed: int,
              workers: int = 1) -> WSample:
    """Unconditioned ``W_N`` draws from the engine; survival means ``Z_N > 0``."""
    from .engine import SimConfig, run_ensemble

    ens = run_ensemble(SimConfig(spec, horizon, window=1), seed, count, workers)
    if not np.all(ens.ok):
        raise RuntimeError("population cap exceeded while sampling W")
    z = ens.trajectories[:, horizon]
    return WSample(z / ens.m**horizon, z > 0, horizon)


def w_mixture_joint(t, sample: WSample) -> tuple[float, float]:
    """``E(prod_i Phi(t_i W^{1/2}) I_S)`` with its Monte Carlo standard error."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    sw = np.sqrt(sample.w)
    vals = np.where(sample.survived, np.prod(special.ndtr(np.outer(sw, t)), axis=1), 0.0)
    n = len(vals)
    se = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return float(np.mean(vals)), se


@dataclass
class SubcriticalMixture:
    """``sum_k theta_k P(S_k <= m k + x sqrt k)`` with the Yaglom weights ``theta_k``."""

    spec: OffspringSpec
    tol: float = 1e-10
    theta: np.ndarray = field(init=False)
    residual: float = field(init=False)

    def __post_init__(self):
        mom = moments(self.spec)
        if mom.m >= 1:
            raise InvalidSpecError("the subcritical mixture needs m < 1")
        mom.require_sigma2()
        yag = yaglom_pmf(self.spec, tol=self.tol * 1e-2)
        cum = np.cumsum(yag.probs)
        K = int(np.searchsorted(cum, 1.0 - self.tol)) + 1
        K = min(K, len(yag.probs))
        self.theta = yag.probs[:K]
        self.residual = max(0.0, 1.0 - float(self.theta.sum()))
        self.m = mom.m

    def _thresholds(self, x: float, strict: bool) -> np.ndarray:
        ks = np.arange(1, len(self.theta) + 1)
        c = self.m * ks + x * np.sqrt(ks)
        eps = 1e-9
        if strict:
            return np.ceil(c - eps).astype(np.int64) - 1
        return np.floor(c + eps).astype(np.int64)

    def cdf(self, x, strict: bool = False):
        """Right-continuous CDF; ``strict=True`` gives the left limit ``P(L < x)``."""
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        thr = np.array([self._thresholds(xv, strict) for xv in xs])  # (len(x), K)
        top = int(max(thr.max(), 0))
        f, _ = offspring_vector(self.spec, top + 1)
        out = np.zeros(len(xs))
        conv = np.zeros(top + 1)
        conv[0] = 1.0
        for k in range(1, len(self.theta) + 1):
            conv = np.convolve(conv, f)[: top + 1]
            cum = np.cumsum(conv)
            c = thr[:, k - 1]
            pk = np.where(c < 0, 0.0, cum[np.clip(c, 0, top)])
            out += self.theta[k - 1] * pk
        return out if np.ndim(x) else float(out[0])


def subcritical_mixture_cdf(spec: OffspringSpec, x, tol: float = 1e-10):
    """Limit CDF of ``(Z_n - m Z_{n-1}) / Z_{n-1}^{1/2}`` given ``Z_{n-1} > 0``, ``m < 1``."""
    return SubcriticalMixture(spec, tol).cdf(x)


def subcritical_brute_force(spec: OffspringSpec, x: float, kmax: int = 50,
                            theta=None) -> float:
    """Direct enumeration reference: explicit multinomial-free recursion per ``k``."""
    if theta is None:
        theta = yaglom_pmf(spec).probs
    m = moments(spec).m
    total = 0.0
    for k in range(1, min(kmax, len(theta)) + 1):
        c = math.floor(m * k + x * math.sqrt(k) + 1e-9)
        if c < 0:
            continue
        f, _ = offspring_vector(spec, c + 1)
        p = np.zeros(c + 1)
        p[0] = 1.0
        for _ in range(k):
            q = np.zeros(c + 1)
            for a in range(c + 1):
                if p[a]:
                    q[a:] += p[a] * f[: c + 1 - a]
            p = q
        total += theta[k - 1] * p.sum()
    return total


# ---------------------------------------------------------------------------
# a common wrapper


@dataclass
class ReferenceCdf:
    """A named reference CDF; ``left`` gives ``F(x-)`` (equal to ``F`` if continuous)."""

    kind: str
    fn: Callable
    params: dict = field(default_factory=dict)
    tol: float = 1e-12
    left_fn: Callable | None = None

    def __call__(self, x):
        return self.fn(x)

    def left(self, x):
        return self.fn(x) if self.left_fn is None else self.left_fn(x)

    @property
    def continuous(self) -> bool:
        return self.left_fn is None

    def curve_csv(self, xs, path) -> None:
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(self(xs), dtype=float)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "F(x)"])
            for a, b in zip(xs, ys):
                w.writerow([repr(float(a)), repr(float(b))])

    # constructors
    @classmethod
    def normal(cls, scale: float = 1.0) -> "ReferenceCdf":
        return cls("normal", lambda x: std_normal_cdf(np.asarray(x) / scale), {"scale": scale})

    @classmethod
    def gumbel(cls) -> "ReferenceCdf":
        return cls("gumbel", gumbel_cdf)

    @classmethod
    def frechet(cls, alpha: float) -> "ReferenceCdf":
        frechet_cdf(1.0, alpha)
        return cls("frechet", lambda x: frechet_cdf(x, alpha), {"alpha": alpha})

    @classmethod
    def brownian_sup(cls) -> "ReferenceCdf":
        return cls("brownian-sup", brownian_sup_cdf)

    @classmethod
    def weighted_sup(cls, seq: LambdaSeq, absolute: bool = True, tol: float = 1e-12):
        return cls("weighted-sup", lambda x: weighted_sup_cdf(seq, x, absolute, tol),
                   {"lambda": [seq.kind, list(seq.params)], "absolute": absolute}, tol)

    @classmethod
    def subcritical(cls, spec: OffspringSpec, tol: float = 1e-10) -> "ReferenceCdf":
        mix = SubcriticalMixture(spec, tol)
        return cls("subcritical-mixture", mix.cdf, {"spec": spec.to_dict()}, tol,
                   left_fn=lambda x: mix.cdf(x, strict=True))

    @classmethod
    def discrete(cls, kind: str, support, probs, params=None) -> "ReferenceCdf":
        """Step CDF of a law on the finite ``support`` (sorted)."""
        support = np.asarray(support, dtype=float)
        cum = np.cumsum(probs)

        def right(x):
            idx = np.searchsorted(support, np.asarray(x, dtype=float), side="right")
            return np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)

        def left(x):
            idx = np.searchsorted(support, np.asarray(x, dtype=float), side="left")
            return np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)

        return cls(kind, right, params or {}, 0.0, left_fn=left)
