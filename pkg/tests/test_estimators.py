import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from gwlimits.estimators import (DegenerateWeightsError, WeightScheme, estimate_from_csv,
                                 kappa_theta, lambda_sq, load_trajectory_csv,
                                 mean_confidence_interval, ratio_statistic, sigma2_estimate,
                                 weighted_counts)

weights_st = st.one_of(
    st.just(WeightScheme.all_ones()),
    st.floats(0.1, 1.2).map(WeightScheme.geometric),
    st.lists(st.floats(0.0, 5.0), min_size=1, max_size=6)
    .filter(lambda v: any(b > 0 for b in v)).map(WeightScheme.finite),
)


class TestWeights:
    def test_all_ones_lambda(self):
        assert_allclose(lambda_sq(WeightScheme.all_ones(), 2.0, 6.0), 6.0)

    def test_constant_two(self):
        w = WeightScheme.all_ones().scale(2.0)
        kappa, _ = kappa_theta(w, 2.0)
        assert_allclose(kappa, 2.0)
        assert_allclose(w.series(2.0, 2), 4.0)
        assert_allclose(lambda_sq(w, 2.0, 6.0), 12.0)

    def test_geometric_closed_form(self):
        w = WeightScheme.geometric(0.5)
        kappa, tab = kappa_theta(w, 2.0)
        assert_allclose(kappa, 1 / 1.5)
        assert_allclose(tab.theta[:3], [0.75, 0.1875, 0.046875])

    @given(weights_st, st.floats(1.6, 6.0))
    def test_series_match_direct_sums(self, w, m):
        # rho <= 1.2 and m >= 1.6 keep rho^2 / m <= 0.9, so 600 terms leave < 1e-27
        j = np.arange(1, 601)
        b = w.values(600)
        inv = np.exp(-j * math.log(m))
        assert_allclose(w.series(m, 1), np.sum(b * inv), rtol=1e-10)
        assert_allclose(w.series(m, 2), np.sum(b**2 * inv), rtol=1e-10)

    @given(weights_st, st.floats(1.6, 6.0))
    def test_theta_sums_to_one(self, w, m):
        _, tab = kappa_theta(w, m)
        assert_allclose(tab.theta.sum() + tab.residual, 1.0, atol=1e-10)
        assert np.all(tab.theta >= 0)

    @given(weights_st, st.floats(1.6, 6.0), st.floats(0.01, 2.0))
    def test_lambda_scale_invariant(self, w, m, c):
        assert_allclose(lambda_sq(w.scale(c), m, 3.0), c * lambda_sq(w, m, 3.0), rtol=1e-10)

    def test_divergent(self):
        with pytest.raises(DegenerateWeightsError):
            kappa_theta(WeightScheme.geometric(3.0), 2.0)

    @pytest.mark.parametrize("args", [("finite-list", (0.0, 0.0)), ("geometric", (0.0,)),
                                      ("all-ones", (1.0,)), ("bogus", ())])
    def test_invalid(self, args):
        with pytest.raises(DegenerateWeightsError):
            WeightScheme(*args)

    def test_round_trip(self):
        w = WeightScheme.geometric(0.4).scale(3.0)
        assert WeightScheme.from_dict(json.loads(json.dumps(w.to_dict()))) == w


class TestRatio:
    def test_counts(self):
        traj = [1, 2, 3, 5]
        N, D = weighted_counts(traj, WeightScheme.finite([1.0, 10.0]))
        assert (N, D) == (5 + 30, 3 + 20)

    def test_doubling_exact(self):
        traj = 2 ** np.arange(15)
        for w in (WeightScheme.all_ones(), WeightScheme.geometric(0.7)):
            assert ratio_statistic(traj, w, 2.0).X == 0.0

    def test_extinct_defined_zero(self):
        est = ratio_statistic([1, 0, 0, 0], WeightScheme.finite([1.0]), 2.0)
        assert est.D == 0 and est.X == 0.0 and est.m_hat is None

    def test_attaches_constants(self):
        est = ratio_statistic([1, 2, 4, 7], WeightScheme.all_ones(), 2.0, sigma2=6.0)
        assert_allclose([est.kappa, est.lambda2], [1.0, 6.0])
        assert json.loads(est.to_json())["lambda2"] == est.lambda2


class TestInterval:
    def test_width(self):
        traj = np.array([1, 2, 5, 9, 20, 41, 80])
        w = WeightScheme.all_ones()
        est = mean_confidence_interval(traj, w, 0.95, sigma2=6.0)
        lo, hi = est.interval
        N, D = weighted_counts(traj, w)
        assert_allclose(est.m_hat, N / D)
        assert_allclose(hi - lo, 2 * 1.959963984540054 * math.sqrt(lambda_sq(w, N / D, 6.0) / D))

    def test_errors(self):
        with pytest.raises(ValueError):
            mean_confidence_interval([1, 0, 0], WeightScheme.all_ones())
        with pytest.raises(ValueError):
            mean_confidence_interval([1, 1, 1, 1], WeightScheme.all_ones())

    def test_student_wider(self):
        traj = np.array([1, 3, 5, 12, 22, 47, 90, 170])
        w = WeightScheme.all_ones()
        a = mean_confidence_interval(traj, w).interval
        b = mean_confidence_interval(traj, w, quantile="student").interval
        assert b[1] - b[0] > a[1] - a[0]

    def test_sigma2_methods(self):
        traj = np.array([1, 3, 5, 12, 22, 47, 90, 170])
        m = 2.0
        res = (traj[1:] - m * traj[:-1]) ** 2 / traj[:-1]
        assert_allclose(sigma2_estimate(traj, m), res.sum() / (len(res) - 1))
        w = WeightScheme.all_ones()
        assert_allclose(sigma2_estimate(traj, m, w, "weighted"),
                        np.sum(traj[:-1] * res) / traj[:-1].sum())

    def test_csv(self, tmp_path):
        p = tmp_path / "cycles.csv"
        p.write_text("generation,Z\n2,5\n0,1\n1,2\n3,11\n")
        assert_allclose(load_trajectory_csv(p), [1, 2, 5, 11])
        est = estimate_from_csv(p, WeightScheme.all_ones())
        assert est.interval[0] < est.m_hat < est.interval[1]
        p.write_text("generation,Z\n0,1\n2,5\n")
        with pytest.raises(ValueError):
            load_trajectory_csv(p)
