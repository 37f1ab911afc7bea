import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marginlab import bounds
from marginlab.data import ClassGaussianSpec


class TestVarianceIdentity:
    def test_identical_points(self):
        assert bounds.variance_identity_check(np.ones((5, 3))) == 0.0

    def test_two_points(self):
        assert bounds.variance_identity_check(np.array([[0.0, 0.0], [3.0, 4.0]])) < 1e-15

    def test_random(self):
        Z = np.random.default_rng(0).normal(size=(50, 5))
        assert bounds.variance_identity_check(Z) < 1e-12


class TestPullBound:
    def test_identical_pair(self):
        r = bounds.pull_bound_check(np.zeros((2, 3)), 0.0)
        assert r.lhs == 0.0
        assert r.rhs == pytest.approx(math.log(2))
        assert r.passed

    def test_large_alpha(self):
        r = bounds.pull_bound_check(np.random.default_rng(0).normal(size=(5, 2)), 100.0)
        assert r.lhs < -90 and r.rhs >= 0 and r.passed

    def test_singleton(self):
        with pytest.raises(ValueError):
            bounds.pull_bound_check(np.zeros((1, 2)), 0.0)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_random_instances(self, seed):
        rng = np.random.default_rng(seed)
        n, K = int(rng.integers(2, 21)), int(rng.integers(1, 9))
        r = bounds.pull_bound_check(rng.normal(0, rng.uniform(0.05, 2), size=(n, K)), float(rng.uniform(0, 5)))
        assert r.passed and r.slack == pytest.approx(r.rhs - r.lhs)


class TestPushBound:
    def test_coincident_singletons(self):
        r = bounds.push_bound_check(np.zeros((2, 2)), [0, 1], 0.0, 0)
        assert r.lhs == 0.0 and r.rhs == pytest.approx(math.log(2)) and r.passed

    def test_single_class(self):
        with pytest.raises(ValueError):
            bounds.push_bound_check(np.zeros((3, 2)), [0, 0, 0], 0.0, 0)

    @pytest.mark.parametrize("beta", [0.0, 1.0, 5.0, 20.0, 100.0])
    def test_beta_grid(self, beta):
        rng = np.random.default_rng(1)
        y = np.repeat([0, 1, 2], [4, 6, 3])
        Z = rng.normal(size=(13, 3)) + np.eye(3)[y]
        for c in range(3):
            assert bounds.push_bound_check(Z, y, beta, c).passed


class TestHardSoft:
    def test_strict_gap(self):
        rng = np.random.default_rng(2)
        y = np.arange(10) % 2
        assert bounds.hard_vs_soft_pull_check(rng.normal(size=(10, 2)), y, [0.5, 0.5]).passed


class TestGaussianAUC:
    def test_symmetric_binary(self):
        spec = ClassGaussianSpec([[1.0, 0.0], [-1.0, 0.0]], [1.0, 1.0], [0.5, 0.5])
        W = spec.means.T
        assert bounds.gaussian_auc_closed_form(W, spec) == pytest.approx(0.9213503964748575, abs=1e-12)

    def test_coincident_classes(self):
        spec = ClassGaussianSpec([[1.0, 2.0], [1.0, 2.0]], [1.0, 3.0], [0.5, 0.5])
        assert bounds.gaussian_auc_closed_form(np.ones((2, 2)), spec) == 0.5

    def test_zero_weight(self):
        spec = ClassGaussianSpec([[1.0], [0.0]], 1.0, [0.5, 0.5])
        with pytest.raises(ValueError):
            bounds.gaussian_auc_closed_form(np.array([[0.0, 1.0]]), spec)

    def test_monotone_in_separation(self):
        vals = []
        for sep in (0.0, 0.5, 1.0, 2.0):
            spec = ClassGaussianSpec([[sep, 0.0], [0.0, 0.0], [0.0, 1.0]], [1.0, 0.5, 2.0], np.full(3, 1 / 3))
            vals.append(bounds.gaussian_auc_closed_form(np.array([[1.0, -1.0, 0.2], [0.3, 0.0, 1.0]]), spec))
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_monte_carlo_agreement(self):
        spec = ClassGaussianSpec([[1.0, 0.0], [-0.5, 0.5], [0.0, -1.0]], [0.5, 1.0, 1.5], np.full(3, 1 / 3))
        W = np.array([[1.0, -0.5, 0.2], [0.1, 1.0, -1.0]])
        mc = bounds.gaussian_auc_monte_carlo(W, spec, n=300_000, seed=0)
        assert abs(mc - bounds.gaussian_auc_closed_form(W, spec)) < 5e-3


class TestBennett:
    def test_constant_samples(self):
        b = bounds.bennett_bound(np.full(10, 0.3), 1.0, 0.05)
        assert b == pytest.approx(0.3 + 7 * math.log(40) / 27, rel=1e-12)

    def test_rate(self):
        rng = np.random.default_rng(0)
        gaps = []
        for n in (100, 400, 1600, 6400):
            z = rng.random(n)
            gaps.append(bounds.bennett_bound(z, 1.0, 0.05) - z.mean())
        scaled = [g * math.sqrt(n) for g, n in zip(gaps, (100, 400, 1600, 6400))]
        assert all(a > b for a, b in zip(gaps, gaps[1:]))
        assert all(0.5 < s < 4.0 for s in scaled)

    def test_errors(self):
        with pytest.raises(ValueError):
            bounds.bennett_bound([0.5, 1.5], 1.0, 0.05)
        with pytest.raises(ValueError):
            bounds.bennett_bound([0.5], 1.0, 0.05)

    def test_coverage_small(self):
        assert bounds.bennett_coverage(500, 50, 0.05, seed=1) >= 0.95


class TestVarianceChain:
    def test_zero_weight(self):
        Z = np.random.default_rng(0).normal(size=(6, 2))
        for ch in bounds.loss_variance_lemma_check(Z, [1, -1] * 3, np.zeros(2)):
            assert ch.var_log == ch.var_lin == ch.quad_form == ch.trace_bound == 0.0

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        Z, y, w = rng.normal(size=(10, 3)), np.array([1, -1] * 5), rng.normal(size=3)
        a = bounds.loss_variance_lemma_check(Z, y, w)
        b = bounds.loss_variance_lemma_check(Z, y, w, shifts={1: 3.0, -1: -1.7})
        for x, z in zip(a, b):
            assert abs(x.var_lin - z.var_lin) < 1e-12
            assert x.holds() and z.holds()

    def test_small_class(self):
        with pytest.raises(ValueError):
            bounds.loss_variance_lemma_check(np.zeros((3, 1)), [1, 1, -1], np.ones(1))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_random(self, seed):
        rng = np.random.default_rng(seed)
        n, K = int(rng.integers(4, 30)), int(rng.integers(1, 6))
        y = np.where(np.arange(n) % 2 == 0, 1, -1)
        chains = bounds.loss_variance_lemma_check(rng.normal(size=(n, K)) * 2, y, rng.normal(size=K) * 2,
                                                  float(rng.normal()))
        assert all(ch.holds() for ch in chains)


class TestGenBound:
    def make(self, n=200, seed=0):
        spec = ClassGaussianSpec([[1.0, 0.0], [-1.0, 0.0]], [1.0, 1.0], [0.7, 0.3])
        from marginlab.data import gaussian_mixture_lt
        tr, te = gaussian_mixture_lt(spec, n, seed), gaussian_mixture_lt(spec, 100_000, seed + 1)
        pm = lambda lab: np.where(lab == 1, 1, -1)
        return tr.inputs, pm(tr.labels), te.inputs, pm(te.labels)

    def test_degenerate_scorer(self):
        Zt, yt, Ze, ye = self.make()
        pri = {-1: 0.7, 1: 0.3}
        r = bounds.gen_bound_check(Zt, yt, Ze, ye, np.zeros(2), 0.0, {1: 0.0, -1: 0.0}, {1: 0.3, -1: 0.7}, pri, 0.05)
        assert r.lhs == pytest.approx(math.log(2), abs=1e-12)
        assert r.instance["empirical"] == pytest.approx(math.log(2), abs=1e-12)
        assert r.slack == pytest.approx(r.instance["bennett"] + r.instance["variance"]) and r.passed

    def test_monotone_in_alpha(self):
        Zt, yt, _, _ = self.make()
        pri = {-1: 0.7, 1: 0.3}
        w = np.array([1.0, 0.5])
        prev = -np.inf
        for a in (0.0, 0.5, 2.0, 8.0):
            rhs = bounds.gen_bound_rhs(Zt, yt, w, 0.0, {1: 0.0, -1: 0.0}, {1: a, -1: a}, pri, 3.0, 0.05)["total"]
            assert rhs > prev
            prev = rhs

    def test_missing_class(self):
        Zt, yt, Ze, ye = self.make()
        with pytest.raises(ValueError):
            bounds.gen_bound_check(Zt, yt, Ze, np.ones_like(ye), np.ones(2), 0.0, {1: 0.0, -1: 0.0},
                                   {1: 0.3, -1: 0.7}, {-1: 0.7, 1: 0.3}, 0.05)

    def test_trial(self):
        assert bounds.gen_bound_trial(0, 3, bounds.BoundConfig()).passed


class TestBayesRealizability:
    def test_shared_variance(self):
        spec = ClassGaussianSpec([[0.0, 1.0], [2.0, 0.0], [-1.0, -1.0]], 0.7, [0.2, 0.5, 0.3])
        assert bounds.bayes_logistic_realizability_check(spec, 100, seed=0) < 1e-10

    def test_identical_means(self):
        spec = ClassGaussianSpec([[1.0], [1.0]], 1.0, [0.8, 0.2])
        assert bounds.bayes_logistic_realizability_check(spec, 50) < 1e-12

    def test_class_specific_variance_rejected(self):
        spec = ClassGaussianSpec([[0.0], [1.0]], [1.0, 2.0], [0.5, 0.5])
        with pytest.raises(ValueError):
            bounds.bayes_logistic_realizability_check(spec)


class TestSuite:
    def test_config_validation(self):
        for kw in (dict(delta=0.0), dict(delta=1.0), dict(B=math.inf), dict(B=0.0), dict(trials=0)):
            with pytest.raises(ValueError):
                bounds.BoundConfig(**kw)

    def test_record_pass_flag(self):
        assert bounds.BoundCheckRecord("x", {}, 1.0, 1.0 - 5e-10).passed
        assert not bounds.BoundCheckRecord("x", {}, 1.0, 1.0 - 2e-9).passed

    def test_deterministic_and_order_independent(self):
        a = bounds.run_suite(3, 5, auc_trials=1, auc_samples=20_000)
        b = bounds.run_suite(3, 5, auc_trials=1, auc_samples=20_000)
        assert [r.to_dict() for r in a.records] == [r.to_dict() for r in b.records]
        single = bounds.run_trial("push_bound", 3, 4, bounds.BoundConfig(seed=3))
        assert [r.to_dict() for r in single] == [r.to_dict() for r in a.records if r.check == "push_bound"][-len(single):]

    def test_trials_must_be_positive(self):
        with pytest.raises(ValueError):
            bounds.run_suite(0, 0)

    def test_coverage_summary(self):
        s = bounds.coverage_summary(940, 1000, 0.05)
        assert s["required"] == pytest.approx(1 - 0.05 - 3 * math.sqrt(0.05 * 0.95 / 1000))
        assert s["passed"]
        assert not bounds.coverage_summary(900, 1000, 0.05)["passed"]
