"""Offspring samplers driven by counter-based random streams."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import stats

from . import _kernels as K
from .offspring import OffspringSpec, pmf, sf, truncation_point

_FAMILY_CODES = {
    "binary-split": K.FAM_BINARY,
    "geometric": K.FAM_GEOMETRIC,
    "poisson": K.FAM_POISSON,
    "explicit-table": K.FAM_TABLE,
    "discrete-pareto": K.FAM_PARETO,
}

MASK64 = (1 << 64) - 1


def derive_key(seed: int, *indices: int) -> int:
    """Hash ``seed`` and a path of indices into a 64-bit stream key."""
    key = np.uint64(seed & MASK64)
    for idx in indices:
        # re-wrap: the kernel returns a Python int, which numba would type as int64
        key = np.uint64(K.derive(key, np.uint64(idx & MASK64)))
    return int(key)


class CounterStream:
    """A reproducible uniform stream identified by a 64-bit key."""

    def __init__(self, key: int):
        self.key = int(key) & MASK64
        self.state = np.empty(2, dtype=np.uint64)
        K.open_stream(np.uint64(self.key), self.state)

    @classmethod
    def from_seed(cls, seed: int, *indices: int) -> "CounterStream":
        return cls(derive_key(seed, *indices))

    def uniform(self) -> float:
        return float(K.uniform(self.state))

    def __repr__(self):
        return f"CounterStream(key={self.key:#018x}, counter={int(self.state[0]):#018x})"


@dataclass(frozen=True)
class SamplerTable:
    """Alias table over ``offset..offset+n-2`` plus a tail bucket (index ``n-1``)."""

    family: int
    fparams: np.ndarray
    prob: np.ndarray
    alias: np.ndarray
    offset: int
    tail_kind: int
    tail_params: np.ndarray

    def kernel_args(self):
        return (self.prob, self.alias, self.offset, self.tail_kind, self.tail_params)


def _vose(weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = len(weights)
    scaled = weights * n / weights.sum()
    prob = np.zeros(n)
    alias = np.arange(n, dtype=np.int64)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = scaled[g] + scaled[s] - 1.0
        (small if scaled[g] < 1.0 else large).append(g)
    for i in large + small:
        prob[i] = 1.0
    return prob, alias


@lru_cache(maxsize=64)
def sampler_table(spec: OffspringSpec, max_support: int | None = None) -> SamplerTable:
    """Build the alias sampler for ``spec``.

    Unbounded laws keep the mass above ``max_support`` in a tail bucket
    that is resolved exactly when drawn.
    """
    fam = spec.family
    code = _FAMILY_CODES[fam]
    top = spec.support_max
    if fam == "discrete-pareto":
        alpha, x_min = spec.params
        offset = int(x_min)
        last = max_support if max_support is not None else 4096
        last = max(last, offset)
    else:
        offset = 0
        last = max_support if max_support is not None else truncation_point(spec, 1e-16)
        if top is not None:
            last = min(last, top)
    ks = np.arange(offset, last + 1)
    weights = pmf(spec, ks).astype(float)
    tail_kind = K.TAIL_NONE
    tail_params = np.zeros(3)
    if top is None or last < top:
        tail_mass = float(sf(spec, last))
        weights = np.append(weights, tail_mass)
        if fam == "geometric":
            tail_kind = K.TAIL_GEOMETRIC
            tail_params[0] = spec.params[0]
        elif fam == "poisson":
            tail_kind = K.TAIL_POISSON
            lam = spec.params[0]
            tail_params[:] = (lam, stats.poisson.pmf(last + 1, lam), tail_mass)
        elif fam == "discrete-pareto":
            tail_kind = K.TAIL_ZETA
            tail_params[0] = spec.params[0] + 1.0
        else:
            raise ValueError("bounded tables cannot be truncated below their support")
    else:
        # no tail bucket: pad with a zero-weight slot so index n-1 is never special
        weights = np.append(weights, 0.0)
    prob, alias = _vose(weights)
    fparams = np.asarray(spec.params, dtype=float)
    return SamplerTable(code, fparams, prob, alias, offset, tail_kind, tail_params)


def sample_offspring(spec: OffspringSpec, stream: CounterStream) -> int:
    """One offspring count; advances ``stream``."""
    tab = sampler_table(spec)
    return int(K.alias_draw(stream.state, *tab.kernel_args()))


def sample_offspring_many(spec: OffspringSpec, stream: CounterStream, size: int,
                          max_support: int | None = None) -> np.ndarray:
    tab = sampler_table(spec, max_support)
    out = np.empty(size, dtype=np.int64)
    K.fill_draws(stream.state, size, *tab.kernel_args(), out)
    return out


def sample_total_offspring(spec: OffspringSpec, stream: CounterStream, parents: int) -> int:
    """Total offspring of ``parents`` individuals, drawn without per-individual draws."""
    tab = sampler_table(spec)
    return int(K.sum_offspring(stream.state, parents, tab.family, tab.fparams, *tab.kernel_args()))


def generation_draws(spec: OffspringSpec, key: int, parents: int) -> np.ndarray:
    """Replay the individual draws the engine streams for one generation."""
    stream = CounterStream(key)
    return sample_offspring_many(spec, stream, parents)
