import math

import numpy as np
import pytest

from marginlab import data


class TestTwoMoons:
    def test_tail_rate(self):
        ds = data.two_moons_lt(10000, 0.05, seed=0)
        tail = int((ds.labels == 1).sum())
        assert abs(tail - 500) <= 3 * math.sqrt(10000 * 0.05 * 0.95)

    def test_noise_free_loci(self):
        ds = data.two_moons_lt(500, 0.3, noise=0.0, seed=1)
        tail = ds.inputs[ds.labels == 1]
        head = ds.inputs[ds.labels == 0]
        r_tail = np.linalg.norm(tail - data.TWO_MOONS_TAIL_CENTRE, axis=1)
        np.testing.assert_allclose(r_tail, 1.0, atol=1e-12)
        assert np.all(tail[:, 1] <= 0.25 + 1e-12)
        np.testing.assert_allclose(np.linalg.norm(head - [-0.5, -0.25], axis=1), 1.0, atol=1e-12)
        assert np.all(head[:, 1] >= -0.25 - 1e-12)

    def test_deterministic(self):
        a, b = data.two_moons_lt(100, seed=3), data.two_moons_lt(100, seed=3)
        assert a.inputs.tobytes() == b.inputs.tobytes()
        np.testing.assert_array_equal(a.labels, b.labels)

    @pytest.mark.parametrize("kw", [dict(n=1), dict(n=10, tail_prob=0.0), dict(n=10, noise=-1)])
    def test_errors(self, kw):
        with pytest.raises(ValueError):
            data.two_moons_lt(**kw)


class TestGaussianMixture:
    def test_tiny_variance(self):
        spec = data.ClassGaussianSpec([[0, 0], [5, 5]], [1e-12, 1e-12], [0.5, 0.5])
        ds = data.gaussian_mixture_lt(spec, 200, seed=0)
        assert np.abs(ds.inputs - spec.means[ds.labels]).max() < 1e-4

    def test_class_means_and_priors(self):
        spec = data.ClassGaussianSpec([[0, 0, 0], [2, -1, 0]], [1.0, 4.0], [0.8, 0.2])
        n = 20000
        ds = data.gaussian_mixture_lt(spec, n, seed=1)
        for c in range(2):
            S = ds.inputs[ds.labels == c]
            sd = math.sqrt(spec.variances[c])
            assert np.all(np.abs(S.mean(0) - spec.means[c]) <= 4 * sd / math.sqrt(len(S)))
            p = spec.priors[c]
            assert abs(len(S) / n - p) <= 3 * math.sqrt(p * (1 - p) / n)

    def test_exact_counts(self):
        spec = data.random_gaussian_spec(3, 2, seed=0)
        ds = data.gaussian_mixture_counts(spec, [5, 0, 2], seed=0)
        np.testing.assert_array_equal(ds.counts, [5, 0, 2])

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            data.ClassGaussianSpec([[0.0]], [0.0], [1.0])
        with pytest.raises(ValueError):
            data.ClassGaussianSpec([[0.0], [1.0]], [1.0], [0.3, 0.3])
        with pytest.raises(ValueError):
            data.gaussian_mixture_lt(data.random_gaussian_spec(2, 1), 0)

    def test_posterior_identical_means_equals_priors(self):
        spec = data.ClassGaussianSpec([[1.0, 1.0], [1.0, 1.0]], 1.0, [0.7, 0.3])
        X = np.random.default_rng(0).normal(size=(10, 2))
        np.testing.assert_allclose(spec.posterior(X), np.tile([0.7, 0.3], (10, 1)), atol=1e-15)


class TestExpProfile:
    def test_endpoints(self):
        c = data.exp_profile(1000, 10, 100)
        assert c[0] == 1000 and c[-1] == 10
        assert np.all(np.diff(c) <= 0)

    def test_balanced(self):
        np.testing.assert_array_equal(data.exp_profile(37, 4, 1.0), [37] * 4)

    @pytest.mark.parametrize("args", [(1, 10, 100), (100, 10, 0.5), (100, 1, 10)])
    def test_errors(self, args):
        with pytest.raises(ValueError):
            data.exp_profile(*args)


class TestBuckets:
    def test_examples(self):
        assert data.head_torso_tail_buckets([150, 50, 5]) == ["Head", "Torso", "Tail"]
        assert data.head_torso_tail_buckets([100, 20, 19]) == ["Head", "Torso", "Tail"]


class TestDataset:
    def test_counts_priors(self):
        ds = data.Dataset(np.zeros((4, 2)), [0, 1, 1, 1], 3)
        np.testing.assert_array_equal(ds.counts, [1, 3, 0])
        assert ds.priors.sum() == 1.0

    def test_label_range(self):
        with pytest.raises(ValueError):
            data.Dataset(np.zeros((2, 1)), [0, 2], 2)

    def test_csv_round_trip(self, tmp_path):
        ds = data.two_moons_lt(50, 0.2, seed=4)
        ds.to_csv(tmp_path / "d.csv")
        back = data.Dataset.from_csv(tmp_path / "d.csv", 2)
        assert back.inputs.tobytes() == ds.inputs.tobytes()
        np.testing.assert_array_equal(back.labels, ds.labels)
