"""Weighted ratio estimator of the offspring mean and its confidence intervals.

With weights ``b_1, b_2, ...`` and a trajectory ``Z_0..Z_n``::

    N_n = b_1 Z_n + ... + b_n Z_1,    D_n = b_1 Z_{n-1} + ... + b_n Z_0,
    X_n = (N_n / D_n - m) sqrt(D_n)   (0 when D_n = 0).

On survival ``X_n`` is asymptotically ``N(0, Lambda^2)`` with
``kappa = sum_j b_j / m^j``, ``theta_k = (b_k / m^k) / kappa`` and
``Lambda^2 = (sigma^2 / kappa) sum_j b_j^2 / m^j``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import special, stats


class DegenerateWeightsError(ValueError):
    """Weights are all zero or their series diverge at the given mean."""


@dataclass(frozen=True)
class WeightScheme:
    """``all-ones`` (``b_j = c``), ``geometric`` (``b_j = c rho^{j-1}``) or
    ``finite-list`` (``b_1..b_d`` then zeros, each times ``c``)."""

    rule: str
    params: tuple = ()
    scale_factor: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if not self.scale_factor > 0:
            raise DegenerateWeightsError("weight scale must be positive")
        if self.rule == "all-ones":
            if self.params:
                raise DegenerateWeightsError("all-ones takes no parameters")
        elif self.rule == "geometric":
            if len(self.params) != 1 or not self.params[0] > 0:
                raise DegenerateWeightsError("geometric weights need one ratio rho > 0")
        elif self.rule == "finite-list":
            if any(b < 0 for b in self.params) or not any(b > 0 for b in self.params):
                raise DegenerateWeightsError("finite-list weights must be >= 0 with one > 0")
        else:
            raise DegenerateWeightsError(f"unknown weight rule {self.rule!r}")

    @classmethod
    def all_ones(cls) -> "WeightScheme":
        return cls("all-ones")

    @classmethod
    def geometric(cls, rho: float) -> "WeightScheme":
        return cls("geometric", (rho,))

    @classmethod
    def finite(cls, values) -> "WeightScheme":
        return cls("finite-list", tuple(values))

    def scale(self, c: float) -> "WeightScheme":
        return WeightScheme(self.rule, self.params, self.scale_factor * c)

    def values(self, n: int) -> np.ndarray:
        """``b_1..b_n``."""
        j = np.arange(1, n + 1)
        if self.rule == "all-ones":
            b = np.ones(n)
        elif self.rule == "geometric":
            b = self.params[0] ** (j - 1.0)
        else:
            b = np.zeros(n)
            d = min(n, len(self.params))
            b[:d] = self.params[:d]
        return self.scale_factor * b

    def series(self, m: float, power: int) -> float:
        """``sum_j b_j^power / m^j`` in closed form."""
        c = self.scale_factor**power
        if self.rule == "finite-list":
            b = np.asarray(self.params)
            return float(c * np.sum(b**power / m ** np.arange(1, len(b) + 1)))
        ratio = 1.0 if self.rule == "all-ones" else self.params[0] ** power
        if not ratio < m:
            raise DegenerateWeightsError(
                f"sum_j b_j^{power}/m^j diverges for rule {self.rule} at m={m}")
        # sum_{j>=1} ratio^{j-1} / m^j = 1 / (m - ratio)
        return c / (m - ratio)

    def to_dict(self) -> dict:
        return {"rule": self.rule, "params": list(self.params), "scale": self.scale_factor}

    @classmethod
    def from_dict(cls, data: dict) -> "WeightScheme":
        return cls(data["rule"], tuple(data.get("params", ())), data.get("scale", 1.0))


@dataclass(frozen=True)
class ThetaTable:
    """Leading ``theta_k`` values and the mass not listed."""

    theta: np.ndarray
    residual: float

    def __len__(self):
        return len(self.theta)


def kappa_theta(weights: WeightScheme, m: float, tol: float = 1e-12) -> tuple[float, ThetaTable]:
    """``kappa = sum_j b_j/m^j`` and ``theta_k = (b_k/m^k)/kappa``, listed until the rest is below ``tol``."""
    if not m > 1:
        raise ValueError("kappa and theta need a supercritical mean m > 1")
    kappa = weights.series(m, 1)
    if not kappa > 0 or not math.isfinite(kappa):
        raise DegenerateWeightsError("kappa must be positive and finite")
    if weights.rule == "finite-list":
        K = len(weights.params)
    else:
        ratio = 1.0 if weights.rule == "all-ones" else weights.params[0]
        # the tail after K terms is exactly (ratio/m)^K
        K = max(1, int(math.ceil(math.log(tol) / math.log(ratio / m))))
    j = np.arange(1, K + 1)
    theta = weights.values(K) / m**j / kappa
    if weights.rule == "finite-list":
        residual = 0.0
    else:
        residual = (ratio / m) ** K
    return kappa, ThetaTable(theta, residual)


def lambda_sq(weights: WeightScheme, m: float, sigma2: float) -> float:
    """``Lambda^2 = (sigma^2/kappa) sum_j b_j^2/m^j``."""
    if not 0 < sigma2 < math.inf:
        raise ValueError("sigma^2 must lie in (0, inf)")
    kappa, _ = kappa_theta(weights, m)
    return sigma2 / kappa * weights.series(m, 2)


@dataclass
class RatioEstimate:
    N: float
    D: float
    m_hat: float | None
    m: float
    X: float
    kappa: float | None = None
    theta: list | None = None
    theta_residual: float | None = None
    lambda2: float | None = None
    interval: tuple[float, float] | None = None
    level: float | None = None
    sigma2_hat: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["interval"] is not None:
            d["interval"] = list(d["interval"])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def weighted_counts(trajectory, weights: WeightScheme) -> tuple[float, float]:
    z = np.asarray(trajectory, dtype=float)
    n = len(z) - 1
    if n < 1:
        raise ValueError("trajectory needs at least Z_0 and Z_1")
    b = weights.values(n)
    N = float(b @ z[n:0:-1])  # b_1 Z_n + ... + b_n Z_1
    D = float(b @ z[n - 1::-1])  # b_1 Z_{n-1} + ... + b_n Z_0
    return N, D


def ratio_statistic(trajectory, weights: WeightScheme, m: float,
                    sigma2: float | None = None) -> RatioEstimate:
    """``X_n`` at a supplied (true or hypothesized) mean ``m``."""
    N, D = weighted_counts(trajectory, weights)
    if D > 0:
        m_hat = N / D
        X = (m_hat - m) * math.sqrt(D)
    else:
        m_hat = None
        X = 0.0
    est = RatioEstimate(N=N, D=D, m_hat=m_hat, m=m, X=X)
    if m > 1:
        try:
            kappa, tab = kappa_theta(weights, m)
        except DegenerateWeightsError:
            return est
        est.kappa = kappa
        est.theta = tab.theta.tolist()
        est.theta_residual = tab.residual
        if sigma2 is not None:
            est.lambda2 = lambda_sq(weights, m, sigma2)
    return est


def sigma2_estimate(trajectory, m_hat: float, weights: WeightScheme | None = None,
                    method: str = "pooled") -> float:
    """Offspring-variance estimate from per-generation residuals.

    Each generation with ``Z_g > 0`` gives ``(Z_{g+1} - m_hat Z_g)^2 / Z_g``,
    an unbiased estimate of ``sigma^2`` at the true mean.  ``pooled``
    sums the ``G`` of them and divides by ``G - 1`` (one degree of freedom
    goes to ``m_hat``); ``weighted`` averages with the weights
    ``b_j Z_{n-j} / D_n``, which concentrate on the last few generations.
    """
    z = np.asarray(trajectory, dtype=float)
    parents = z[:-1]
    live = parents > 0
    if not live.any():
        raise ValueError("no generation with a positive parent count")
    res = np.zeros_like(parents)
    res[live] = (z[1:][live] - m_hat * parents[live]) ** 2 / parents[live]
    if method == "pooled":
        G = int(live.sum())
        return float(res[live].sum() / max(G - 1, 1))
    if method == "weighted":
        if weights is None:
            raise ValueError("weighted variance estimate needs the weight scheme")
        n = len(z) - 1
        w = weights.values(n) * parents[::-1]  # b_j Z_{n-j}
        return float(w @ res[::-1] / w.sum())
    raise ValueError(f"unknown variance method {method!r}")


def normal_quantile(p: float) -> float:
    return float(special.ndtri(p))


def mean_confidence_interval(trajectory, weights: WeightScheme, level: float = 0.95,
                             sigma2: float | None = None, method: str = "pooled",
                             quantile: str = "normal") -> RatioEstimate:
    """Interval ``m_hat +- z Lambda_hat / sqrt(D_n)`` with plug-in ``m_hat`` and ``sigma_hat^2``.

    ``quantile="student"`` replaces ``z`` by the Student-t quantile with
    ``G - 1`` degrees of freedom (``G`` generations with a positive parent count).
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    N, D = weighted_counts(trajectory, weights)
    if D <= 0:
        raise ValueError("D_n = 0: no interval can be formed")
    m_hat = N / D
    if not m_hat > 1:
        raise ValueError(f"estimated mean {m_hat:.4g} is not supercritical; Lambda is undefined")
    s2 = sigma2 if sigma2 is not None else sigma2_estimate(trajectory, m_hat, weights, method)
    if not s2 > 0:
        raise ValueError("variance estimate is zero")
    lam2 = lambda_sq(weights, m_hat, s2)
    if quantile == "normal":
        z = normal_quantile(0.5 * (1.0 + level))
    elif quantile == "student":
        G = int(np.count_nonzero(np.asarray(trajectory)[:-1]))
        z = float(stats.t.ppf(0.5 * (1.0 + level), max(G - 1, 1)))
    else:
        raise ValueError(f"unknown quantile rule {quantile!r}")
    half = z * math.sqrt(lam2 / D)
    kappa, tab = kappa_theta(weights, m_hat)
    return RatioEstimate(N=N, D=D, m_hat=m_hat, m=m_hat, X=0.0, kappa=kappa,
                         theta=tab.theta.tolist(), theta_residual=tab.residual, lambda2=lam2,
                         interval=(m_hat - half, m_hat + half), level=level, sigma2_hat=s2)


def load_trajectory_csv(path) -> np.ndarray:
    """Read a ``generation, Z`` CSV (e.g. cycle counts) into ``Z_0..Z_n``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError("empty trajectory file")
    gens = np.array([int(r["generation"]) for r in rows])
    zs = np.array([float(r["Z"]) for r in rows])
    order = np.argsort(gens)
    if not np.array_equal(gens[order], np.arange(len(gens))):
        raise ValueError("generations must be 0..n without gaps")
    return zs[order]


def estimate_from_csv(path, weights: WeightScheme, level: float = 0.95,
                      method: str = "pooled", quantile: str = "normal") -> RatioEstimate:
    return mean_confidence_interval(load_trajectory_csv(path), weights, level, method=method,
                                    quantile=quantile)
