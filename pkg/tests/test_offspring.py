import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from gwlimits.offspring import (InvalidSpecError, OffspringSpec, TailMassError,
                                UndefinedVarianceError, extinction_prob, extremal_j_min,
                                extremal_norm, moments, pgf, pgf_compose, pmf, sf, survival_prob,
                                survival_table, truncation_point, yaglom_pmf, zn_pmf)

BINARY = OffspringSpec.binary_split(0.6)
CRIT_GEOM = OffspringSpec.geometric(0.5)
SUPER_GEOM = OffspringSpec.geometric(1 / 3)
SUB_GEOM = OffspringSpec.geometric(2 / 3)


def lf_compose(p, n, s):
    """n-fold composition of the linear-fractional pgf p / (1 - (1-p) s), exactly."""
    p, s = Fraction(p), Fraction(s)
    for _ in range(n):
        s = p / (1 - (1 - p) * s)
    return s


class TestSpecValidation:
    @pytest.mark.parametrize("family,params", [
        ("binary-split", (0.0,)), ("binary-split", (1.2,)), ("geometric", (1.0,)),
        ("poisson", (-1.0,)), ("discrete-pareto", (1.0, 1)), ("discrete-pareto", (2.0, 0)),
        ("explicit-table", (0.5, 0.4)), ("explicit-table", (0.0, 1.0)), ("unknown", (1.0,)),
    ])
    def test_rejects(self, family, params):
        with pytest.raises(InvalidSpecError):
            OffspringSpec(family, params)

    def test_round_trip(self):
        for spec in (BINARY, SUPER_GEOM, OffspringSpec.poisson(1.5),
                     OffspringSpec.discrete_pareto(2.0, 1), OffspringSpec.explicit_table([0, 0, 1])):
            assert OffspringSpec.from_dict(spec.to_dict()) == spec


class TestMoments:
    def test_binary(self):
        mom = moments(BINARY)
        assert_allclose([mom.m, mom.sigma2], [1.2, 0.96])
        assert mom.criticality == "super"

    def test_critical_geometric(self):
        mom = moments(CRIT_GEOM)
        assert_allclose([mom.m, mom.sigma2], [1.0, 2.0])
        assert mom.criticality == "critical"

    def test_poisson(self):
        assert_allclose([moments(OffspringSpec.poisson(1.5)).m,
                         moments(OffspringSpec.poisson(1.5)).sigma2], [1.5, 1.5])

    def test_pareto_variance_undefined(self):
        mom = moments(OffspringSpec.discrete_pareto(2.0, 1))
        assert mom.sigma2 is None
        with pytest.raises(UndefinedVarianceError):
            mom.require_sigma2()
        # m = zeta(2) / zeta(3)
        assert_allclose(mom.m, float(mpmath.zeta(2) / mpmath.zeta(3)), rtol=1e-12)

    def test_degenerate_table(self):
        spec = OffspringSpec.explicit_table([0, 0, 1])
        assert_allclose(pmf(spec, [0, 1, 2, 3]), [0, 0, 1, 0])
        assert moments(spec).sigma2 == 0.0

    @pytest.mark.parametrize("spec", [BINARY, SUPER_GEOM, OffspringSpec.poisson(2.5), SUB_GEOM])
    def test_moments_match_pmf_sums(self, spec):
        K = truncation_point(spec, 1e-18)
        k = np.arange(K + 1)
        p = pmf(spec, k)
        m = float(k @ p)
        assert_allclose(p.sum(), 1.0, atol=1e-14)
        assert_allclose(moments(spec).m, m, rtol=1e-12)
        assert_allclose(moments(spec).sigma2, float((k - m) ** 2 @ p), rtol=1e-10)

    def test_sf_matches_pmf(self):
        spec = OffspringSpec.discrete_pareto(2.5, 2)
        k = np.arange(2, 200)
        p = pmf(spec, np.arange(0, 10_000))
        brute = 1.0 - np.cumsum(p)[k]
        assert_allclose(sf(spec, k), brute, atol=2e-6)


class TestPgf:
    def test_one_step(self):
        assert_allclose(pgf_compose(BINARY, 1, 0.0), 0.4)

    def test_two_steps(self):
        assert_allclose(pgf_compose(BINARY, 2, 0.0), 0.496, atol=1e-15)

    def test_geometric_closed_form(self):
        assert_allclose(pgf_compose(CRIT_GEOM, 10, 0.0), 10 / 11, atol=1e-14)

    @given(st.floats(0.05, 0.95), st.integers(1, 40), st.floats(0.0, 1.0))
    def test_linear_fractional_oracle(self, p, n, s):
        spec = OffspringSpec.geometric(p)
        assert_allclose(pgf_compose(spec, n, s), float(lf_compose(p, n, s)), atol=1e-12)

    @given(st.floats(0.0, 1.0))
    def test_pgf_monotone_and_bounded(self, s):
        for spec in (BINARY, OffspringSpec.poisson(1.5), OffspringSpec.discrete_pareto(2.0, 1)):
            v = pgf(spec, s)
            assert 0.0 <= v <= 1.0 + 1e-15
            assert pgf(spec, min(1.0, s + 0.01)) >= v - 1e-15


class TestSurvival:
    def test_n_zero(self):
        assert survival_prob(BINARY, 0) == 1.0

    def test_geometric(self):
        assert_allclose(survival_prob(CRIT_GEOM, 10), 1 / 11, atol=1e-15)

    def test_binary(self):
        assert_allclose(survival_prob(BINARY, 2), 0.504, atol=1e-15)

    def test_critical_rate(self):
        n = np.arange(0, 101)
        assert_allclose(survival_table(CRIT_GEOM, 100), 1.0 / (n + 1), atol=1e-12)

    @given(st.sampled_from([BINARY, CRIT_GEOM, SUB_GEOM, OffspringSpec.poisson(0.8),
                            OffspringSpec.discrete_pareto(2.0, 1)]))
    def test_nonincreasing(self, spec):
        s = survival_table(spec, 60)
        assert np.all(np.diff(s) <= 1e-15)
        assert np.all((s >= 0) & (s <= 1))

    def test_small_survival_keeps_precision(self):
        # subcritical survival decays like m^n; 1 - f_n(0) must not cancel to 0
        s = survival_prob(SUB_GEOM, 60)
        # exact: for p_k = p(1-p)^k with m=1/2, P(Z_n>0) = m^n (1-m) / (1 - m^{n+1})
        m = 0.5
        exact = m**60 * (1 - m) / (1 - m**61)
        assert_allclose(s, exact, rtol=1e-10)


class TestExtinction:
    def test_subcritical(self):
        assert extinction_prob(CRIT_GEOM) == 1.0

    def test_binary(self):
        assert_allclose(extinction_prob(BINARY), 2 / 3, atol=1e-12)

    def test_geometric(self):
        assert_allclose(extinction_prob(SUPER_GEOM), 0.5, atol=1e-12)

    def test_poisson_fixed_point(self):
        spec = OffspringSpec.poisson(1.5)
        q = extinction_prob(spec)
        # independent oracle: mpmath root of s = exp(lam (s - 1)) below 1
        oracle = float(mpmath.findroot(lambda s: s - mpmath.exp(1.5 * (s - 1)), 0.4))
        assert_allclose(q, oracle, atol=1e-12)


class TestZnPmf:
    def test_one_generation(self):
        pm = zn_pmf(BINARY, 1, 8)
        assert_allclose(pm.probs[:3], [0.4, 0.0, 0.6])

    def test_two_generations(self):
        pm = zn_pmf(BINARY, 2, 8)
        assert_allclose(pm.probs[[0, 2, 4]], [0.496, 0.288, 0.216], atol=1e-15)
        assert_allclose(pm.probs.sum(), 1.0)

    def test_zero_generations(self):
        assert_allclose(zn_pmf(BINARY, 0, 4).probs, [0, 1, 0, 0, 0])

    def test_tail_guard(self):
        with pytest.raises(TailMassError):
            zn_pmf(OffspringSpec.poisson(3.0), 6, 20, max_tail=1e-6)

    @pytest.mark.parametrize("spec,n", [(BINARY, 5), (SUPER_GEOM, 4), (OffspringSpec.poisson(1.2), 4)])
    def test_matches_recursive_convolution(self, spec, n):
        # independent route: P(Z_n = .) as the Z_{n-1}-mixture of convolution powers
        cap, wide = 60, 600  # the oracle works on a wider support so truncation cannot leak below cap
        off = pmf(spec, np.arange(wide + 1))
        law = np.zeros(wide + 1)
        law[1] = 1.0
        for _ in range(n):
            new = np.zeros(wide + 1)
            power = np.zeros(wide + 1)
            power[0] = 1.0
            for k in range(wide + 1):
                new += law[k] * power
                power = np.convolve(power, off)[: wide + 1]
            law = new
        pm = zn_pmf(spec, n, cap)
        assert_allclose(pm.probs, law[: cap + 1], atol=1e-12)
        assert pm.tail >= 0

    def test_mean_matches_m_power(self):
        pm = zn_pmf(BINARY, 5, 64)
        assert pm.tail < 1e-14
        assert_allclose(np.arange(65) @ pm.probs, 1.2**5, rtol=1e-12)

    def test_to_csv(self, tmp_path):
        pm = zn_pmf(BINARY, 2, 4)
        pm.to_csv(tmp_path / "z.csv")
        lines = (tmp_path / "z.csv").read_text().splitlines()
        assert lines[0] == "k,probability"
        assert len(lines) == 6


class TestYaglom:
    @pytest.mark.parametrize("tol", [1e-8, 1e-10, 1e-12])
    def test_linear_fractional_closed_form(self, tol):
        # m = 1/2: the conditional limit law is geometric on {1, 2, ...} with ratio 1/2
        pm = yaglom_pmf(SUB_GEOM, tol=tol)
        k = np.arange(1, 41)
        assert_allclose(pm.probs[:40], 0.5**k, atol=20 * tol)

    def test_general_linear_fractional(self):
        # for p_k = p (1-p)^k with m = (1-p)/p < 1 the limit law is (1-m) m^{k-1} on k >= 1
        spec = OffspringSpec.geometric(0.8)
        pm = yaglom_pmf(spec, tol=1e-12)
        c = 0.25
        k = np.arange(1, 20)
        assert_allclose(pm.probs[:19], (1 - c) * c ** (k - 1), atol=1e-10)

    def test_tv_monotone_in_tol(self):
        ref = yaglom_pmf(SUB_GEOM, tol=1e-13).probs
        tvs = [0.5 * np.abs(yaglom_pmf(SUB_GEOM, tol=t).probs - ref).sum()
               for t in (1e-4, 1e-6, 1e-8, 1e-10)]
        assert all(b <= a for a, b in zip(tvs, tvs[1:]))

    def test_requires_subcritical(self):
        with pytest.raises(InvalidSpecError):
            yaglom_pmf(BINARY)


class TestExtremalNorm:
    def test_pareto_brute_force(self):
        spec = OffspringSpec.discrete_pareto(2.0, 1)
        j = 10_000
        z3 = mpmath.zeta(3)

        def tail(x):  # P(xi > x) by Hurwitz zeta, independent of scipy
            return float(mpmath.zeta(3, x + 1) / z3)

        x = 0
        while tail(x) > 1 / j:
            x += 1
        assert extremal_norm(spec, j) == x

    def test_j_min(self):
        spec = OffspringSpec.geometric(0.5)
        assert extremal_j_min(spec) == 3  # sf(0) = 1/2
        with pytest.raises(ValueError):
            extremal_norm(spec, 2)

    def test_bounded_rejected(self):
        with pytest.raises(InvalidSpecError):
            extremal_norm(BINARY, 100)

    def test_cdf_source(self):
        # exponential CDF: a_j = log j
        assert_allclose(extremal_norm(lambda x: 1 - math.exp(-x), 1000), math.log(1000), rtol=1e-10)

    @given(st.integers(3, 10**6))
    def test_generalized_inverse(self, j):
        spec = OffspringSpec.discrete_pareto(2.0, 1)
        a = extremal_norm(spec, j)
        assert sf(spec, a) <= 1 / j
        assert a == 0 or sf(spec, a - 1) > 1 / j
