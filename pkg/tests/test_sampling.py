import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numba import njit
from numpy.testing import assert_allclose

from gwlimits import _kernels as K
from gwlimits.offspring import OffspringSpec, moments, pmf, sf
from gwlimits.sampling import (CounterStream, derive_key, sample_offspring, sample_offspring_many,
                               sample_total_offspring, sampler_table)

SPECS = [
    OffspringSpec.binary_split(0.6),
    OffspringSpec.geometric(1 / 3),
    OffspringSpec.poisson(1.5),
    OffspringSpec.poisson(25.0),
    OffspringSpec.discrete_pareto(2.0, 1),
    OffspringSpec.explicit_table([0.2, 0.1, 0.3, 0.4]),
]


@njit
def _kernel_key(seed, attempt, g):
    return K.derive(K.derive(seed, attempt), g)


class TestStreams:
    def test_same_key_same_stream(self):
        a, b = CounterStream(42), CounterStream(42)
        assert [a.uniform() for _ in range(10)] == [b.uniform() for _ in range(10)]

    def test_distinct_keys_differ(self):
        assert CounterStream(1).uniform() != CounterStream(2).uniform()

    @given(st.integers(0, 2**64 - 1), st.integers(0, 1000), st.integers(0, 1000))
    def test_python_and_kernel_derivation_agree(self, seed, a, g):
        assert derive_key(seed, a, g) == int(_kernel_key(np.uint64(seed), a, g))

    def test_uniform_moments(self):
        s = CounterStream.from_seed(7, 1)
        u = np.array([s.uniform() for _ in range(20_000)])
        assert np.all((u > 0) & (u < 1))
        assert abs(u.mean() - 0.5) < 4 * math.sqrt(1 / 12 / len(u))


class TestSamplerTable:
    @pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.family)
    def test_alias_reproduces_pmf(self, spec):
        tab = sampler_table(spec)
        n = len(tab.prob)
        # mass assigned to each slot by the alias construction
        mass = tab.prob.copy()
        np.add.at(mass, tab.alias, 1.0 - tab.prob)
        mass /= n
        k = tab.offset + np.arange(n - 1)
        assert_allclose(mass[:-1], pmf(spec, k), atol=1e-14)
        assert_allclose(mass[-1], sf(spec, k[-1]), atol=1e-14)


class TestSampling:
    def test_degenerate(self):
        spec = OffspringSpec.explicit_table([0, 0, 1])
        assert np.all(sample_offspring_many(spec, CounterStream(3), 100) == 2)
        assert sample_total_offspring(spec, CounterStream(3), 1000) == 2000

    def test_binary_mean_clt(self):
        spec = OffspringSpec.binary_split(0.6)
        x = sample_offspring_many(spec, CounterStream(11), 10**6)
        sigma = math.sqrt(0.96)
        assert abs(x.mean() - 1.2) <= 4 * sigma / 1e3

    @pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.family)
    def test_frequencies_within_se(self, spec):
        N = 200_000
        x = sample_offspring_many(spec, CounterStream(derive_key(5, SPECS.index(spec))), N)
        k = np.arange(0, 12)
        emp = np.array([(x == kk).mean() for kk in k])
        p = pmf(spec, k)
        se = np.sqrt(p * (1 - p) / N) + 1e-12
        assert np.all(np.abs(emp - p) <= 5 * se)

    def test_single_draw_matches_batch(self):
        spec = OffspringSpec.poisson(1.5)
        a, b = CounterStream(9), CounterStream(9)
        singles = [sample_offspring(spec, a) for _ in range(50)]
        assert singles == sample_offspring_many(spec, b, 50).tolist()

    def test_pareto_tail(self):
        # the tail bucket must reproduce P(xi > x) far beyond the alias table
        spec = OffspringSpec.discrete_pareto(2.0, 1)
        N = 400_000
        x = sample_offspring_many(spec, CounterStream(21), N)
        for t in (10, 1000, 8000):
            p = float(sf(spec, t))
            assert abs((x > t).mean() - p) <= 5 * math.sqrt(p * (1 - p) / N)

    @pytest.mark.parametrize("spec", SPECS[:4] + SPECS[5:], ids=lambda s: s.family)
    @pytest.mark.parametrize("parents", [3, 50, 5000])
    def test_total_offspring_moments(self, spec, parents):
        mom = moments(spec)
        R = 4000
        tot = np.array([sample_total_offspring(spec, CounterStream.from_seed(parents, i), parents)
                        for i in range(R)], dtype=float)
        mean, var = parents * mom.m, parents * mom.sigma2
        assert abs(tot.mean() - mean) <= 5 * math.sqrt(var / R)
        # variance of the sample variance for near-normal sums is about 2 var^2 / R
        assert abs(tot.var(ddof=1) - var) <= 6 * var * math.sqrt(2 / R) + 1e-9

    def test_total_offspring_law_small(self):
        # exact law of the sum of 3 binary splits: 2 * Binomial(3, 0.6)
        spec = OffspringSpec.binary_split(0.6)
        R = 40_000
        tot = np.array([sample_total_offspring(spec, CounterStream.from_seed(1, i), 3)
                        for i in range(R)])
        exact = {0: 0.064, 2: 0.288, 4: 0.432, 6: 0.216}
        for v, p in exact.items():
            assert abs((tot == v).mean() - p) <= 5 * math.sqrt(p * (1 - p) / R)
