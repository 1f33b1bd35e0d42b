import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from gwlimits.engine import (EnsembleResult, PopulationOverflow, RejectionBudgetExceeded,
                             SimConfig, conditioning_probability, generation_draws, iid_draws,
                             iid_streams, replicate_seed, resolve_window, run_ensemble,
                             simulate_conditioned, simulate_run)
from gwlimits.functionals import DEMAX, SMAX, SMIN, TOTAL, XMAX
from gwlimits.offspring import (OffspringSpec, extinction_prob, survival_prob, yaglom_pmf,
                                zn_pmf)
from gwlimits.sampling import CounterStream, derive_key, sample_total_offspring

BINARY = OffspringSpec.binary_split(0.6)
DOUBLING = OffspringSpec.explicit_table([0, 0, 1])


def replay_trajectory(cfg, seed, attempt=0):
    """Rebuild a trajectory from the per-generation streams, outside the kernel."""
    z = [1]
    for g in range(1, cfg.horizon + 1):
        if z[-1] == 0:
            z.append(0)
        elif g >= cfg.window_start and cfg.accumulators:
            z.append(int(generation_draws(cfg, seed, attempt, g, z[-1]).sum()))
        else:
            key = derive_key(seed, attempt, g)
            z.append(sample_total_offspring(cfg.spec, CounterStream(key), z[-1]))
    return np.array(z)


class TestWindow:
    def test_rules(self):
        assert resolve_window("sqrt", 30) == 5
        assert resolve_window(3, 30) == 3
        assert resolve_window("pow:0.5", 100) == 10

    @pytest.mark.parametrize("rule", [0, 31, "bogus"])
    def test_invalid(self, rule):
        with pytest.raises(ValueError):
            resolve_window(rule, 30)

    def test_config_round_trip(self):
        cfg = SimConfig(BINARY, 20, window=4, condition="survival-proxy",
                        accumulators=("donsker", "extremal"))
        assert SimConfig.from_dict(cfg.to_dict()) == cfg


class TestSimulateRun:
    def test_doubling(self):
        rec = simulate_run(SimConfig(DOUBLING, 10, window=3, accumulators=("donsker",)), 1)
        assert_array_equal(rec.trajectory, 2 ** np.arange(11))
        assert_allclose(rec.w_n, 1.0)
        # all draws equal the mean: centered partial sums vanish
        assert_allclose(rec.window[:, [SMAX, SMIN]], 0.0)

    def test_absorption(self):
        cfg = SimConfig(BINARY, 15, window=3)
        for i in range(200):
            z = simulate_run(cfg, replicate_seed(3, i)).trajectory
            first = np.argmax(z == 0) if (z == 0).any() else None
            if first is not None:
                assert np.all(z[first:] == 0)

    @given(st.integers(0, 2**64 - 1))
    def test_replay(self, seed):
        cfg = SimConfig(OffspringSpec.poisson(1.5), 12, window=4,
                        accumulators=("donsker", "darling-erdos"))
        rec = simulate_run(cfg, seed)
        assert_array_equal(rec.trajectory, replay_trajectory(cfg, seed))

    def test_overflow(self):
        cfg = SimConfig(DOUBLING, 40, window=1, population_cap=1000)
        with pytest.raises(PopulationOverflow):
            simulate_run(cfg, 0)

    def test_window_rows_hold_generation_sizes(self):
        cfg = SimConfig(BINARY, 20, window=5, accumulators=("donsker", "darling-erdos", "extremal"))
        for i in range(20):
            rec = simulate_run(cfg, replicate_seed(8, i))
            assert_array_equal(rec.window[:, TOTAL], rec.trajectory[-5:])
            assert np.all(rec.window[:, SMAX] >= 0) and np.all(rec.window[:, SMIN] <= 0)

    def test_window_matches_replayed_draws(self):
        cfg = SimConfig(OffspringSpec.geometric(1 / 3), 10, window=3,
                        accumulators=("donsker", "darling-erdos", "extremal"))
        seed = replicate_seed(4, 2)
        rec = simulate_run(cfg, seed)
        m = 2.0
        for w in range(3):
            g = cfg.window_start + w
            k = int(rec.trajectory[g - 1])
            if k == 0:
                continue
            d = generation_draws(cfg, seed, 0, g, k)
            s = np.cumsum(d - m)
            assert rec.window[w, TOTAL] == d.sum()
            assert_allclose(rec.window[w, SMAX], max(0.0, s.max()))
            assert_allclose(rec.window[w, SMIN], min(0.0, s.min()))
            assert_allclose(rec.window[w, DEMAX], (s / np.sqrt(np.arange(1, k + 1))).max())
            assert rec.window[w, XMAX] == d.max()


class TestEnsemble:
    def test_exact_law_small(self):
        ens = run_ensemble(SimConfig(BINARY, 5, window=1), 17, 100_000)
        pm = zn_pmf(BINARY, 5, 64)
        z = ens.trajectories[:, 5]
        for k in (0, 2, 4, 8):
            p = pm.probs[k]
            assert abs((z == k).mean() - p) <= 4 * math.sqrt(p * (1 - p) / len(z))

    def test_supercritical_survival(self):
        ens = run_ensemble(SimConfig(BINARY, 50, window=1), 5, 20_000)
        surv = 1 - extinction_prob(BINARY)
        frac = (ens.trajectories[:, 50] > 0).mean()
        assert abs(frac - surv) <= 3 * math.sqrt(surv * (1 - surv) / 20_000)

    def test_worker_invariance(self):
        cfg = SimConfig(BINARY, 12, window=3, accumulators=("donsker",))
        a = run_ensemble(cfg, 9, 3000, workers=1)
        b = run_ensemble(cfg, 9, 3000, workers=3)
        assert a.to_json() == b.to_json()

    def test_merge_order_free(self):
        cfg = SimConfig(BINARY, 8, window=1)
        full = run_ensemble(cfg, 2, 2500)
        parts = [full.subset(full.indices < 1000), full.subset(full.indices >= 1000)]
        assert EnsembleResult.merge(parts[::-1]).to_json() == full.to_json()
        with pytest.raises(ValueError):
            EnsembleResult.merge([parts[0], parts[0]])

    def test_record_matches_single_run(self):
        cfg = SimConfig(BINARY, 10, window=2, accumulators=("donsker",))
        ens = run_ensemble(cfg, 77, 50)
        for i in (0, 13, 49):
            rec = simulate_run(cfg, replicate_seed(77, i))
            assert_array_equal(ens.record(i).trajectory, rec.trajectory)
            assert_array_equal(ens.record(i).window, rec.window)


class TestConditioning:
    def test_last_parent_rejection(self):
        spec = OffspringSpec.geometric(0.5)
        cfg = SimConfig(spec, 50, window=1, condition="last-parent-positive")
        ens = run_ensemble(cfg, 1, 2000)
        assert ens.ok.all()
        assert np.all(ens.trajectories[:, 49] > 0)
        p = conditioning_probability(cfg)
        assert_allclose(p, 1 / 50, rtol=1e-10)
        tried = ens.attempts.sum()
        assert abs(ens.accepted / tried - p) <= 4 * math.sqrt(p * (1 - p) / tried)

    def test_proxy_acceptance(self):
        spec = OffspringSpec.geometric(1 / 3)
        cfg = SimConfig(spec, 20, window=1, condition="survival-proxy", proxy_generations=10)
        ens = run_ensemble(cfg, 4, 4000)
        p = survival_prob(spec, 30)
        tried = ens.attempts.sum()
        assert abs(ens.accepted / tried - p) <= 4 * math.sqrt(p * (1 - p) / tried)
        assert np.all(ens.trajectories[:, 20] > 0)

    def test_budget(self):
        spec = OffspringSpec.geometric(2 / 3)
        cfg = SimConfig(spec, 40, window=1, condition="last-parent-positive", max_attempts=10)
        with pytest.raises(RejectionBudgetExceeded) as exc:
            simulate_conditioned(cfg, 3)
        assert 0 < exc.value.acceptance_estimate < 1

    def test_htransform_yaglom(self):
        # conditioned on Z_{n-1} > 0 a subcritical Z_{n-1} follows the Yaglom law
        spec = OffspringSpec.geometric(2 / 3)
        cfg = SimConfig(spec, 30, window=1, condition="last-parent-positive",
                        conditioning="h-transform")
        ens = run_ensemble(cfg, 6, 20_000)
        z = ens.trajectories[:, 29]
        assert np.all(z > 0)
        y = yaglom_pmf(spec, tol=1e-12).probs
        for k in (1, 2, 3, 4):
            p = y[k - 1]
            assert abs((z == k).mean() - p) <= 4 * math.sqrt(p * (1 - p) / len(z))

    def test_htransform_matches_rejection(self):
        spec = OffspringSpec.geometric(0.55)
        kw = dict(window=1, condition="last-parent-positive")
        rej = run_ensemble(SimConfig(spec, 8, **kw), 1, 20_000).trajectories[:, 8]
        ht = run_ensemble(SimConfig(spec, 8, conditioning="h-transform", **kw), 1,
                          20_000).trajectories[:, 8]
        for k in (0, 1, 2, 5):
            a, b = (rej == k).mean(), (ht == k).mean()
            se = math.sqrt(a * (1 - a) / 20_000 + b * (1 - b) / 20_000)
            assert abs(a - b) <= 4.5 * se + 1e-9


class TestIidStreams:
    def test_rows_match_replayed_draws(self):
        spec = OffspringSpec.poisson(1.5)
        res, _, _ = iid_streams(spec, 500, 12, 6)
        for i in range(6):
            d = iid_draws(spec, 12, i, 500)
            s = np.cumsum(d - 1.5)
            assert res[i, TOTAL] == d.sum()
            assert_allclose(res[i, SMAX], max(0.0, s.max()))
            assert_allclose(res[i, DEMAX], (s / np.sqrt(np.arange(1, 501))).max())
            assert res[i, XMAX] == d.max()

    def test_worker_invariance(self):
        spec = OffspringSpec.geometric(0.5)
        a = iid_streams(spec, 200, 3, 2500, keep_grids=True, grid_size=16)
        b = iid_streams(spec, 200, 3, 2500, keep_grids=True, grid_size=16, workers=2)
        for x, y in zip(a, b):
            assert_array_equal(x, y)
