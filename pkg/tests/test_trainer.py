import math

import numpy as np
import pytest

from marginlab import data, losses, metrics, scorer
from marginlab.trainer import TrainConfig, TrainingDiverged, lr_at, sgd_momentum_step, train


class TestSchedule:
    def test_warmup_reaches_base(self):
        cfg = TrainConfig(lr=0.4, schedule="warmup_step", warmup_epochs=15, decay_epochs=(30, 60), epochs=90)
        assert lr_at(cfg, 14, 9, 10) == pytest.approx(0.4)
        assert lr_at(cfg, 15, 0, 10) == pytest.approx(0.4)
        assert lr_at(cfg, 0, 0, 10) == pytest.approx(0.4 / 150)

    def test_decay(self):
        cfg = TrainConfig(lr=0.4, schedule="warmup_step", warmup_epochs=15, decay_epochs=(30, 60), epochs=90)
        assert lr_at(cfg, 30) == pytest.approx(0.04)
        assert lr_at(cfg, 29) == pytest.approx(0.4)
        assert lr_at(cfg, 60) == pytest.approx(0.004)

    def test_cosine(self):
        cfg = TrainConfig(lr=0.4, schedule="cosine", epochs=10)
        assert lr_at(cfg, 5) == pytest.approx(0.2)
        assert lr_at(cfg, 0) == pytest.approx(0.4)

    def test_constant(self):
        assert lr_at(TrainConfig(lr=0.3), 17, 4, 9) == 0.3

    @pytest.mark.parametrize("kw", [dict(lr=0.0), dict(momentum=1.0), dict(batch_size=0), dict(schedule="step")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestSGD:
    def test_plain_step(self):
        th, v = sgd_momentum_step(np.array([1.0, 2.0]), np.array([0.5, -1.0]), np.zeros(2), 0.1, 0.0, 0.0)
        np.testing.assert_allclose(th, [0.95, 2.1])

    def test_fixed_point(self):
        th, v = sgd_momentum_step(np.array([1.0, 2.0]), np.zeros(2), np.zeros(2), 0.1, 0.9, 0.0)
        np.testing.assert_array_equal(th, [1.0, 2.0])

    def test_two_momentum_steps(self):
        g = np.array([1.0, -2.0])
        th0 = np.zeros(2)
        th1, v = sgd_momentum_step(th0, g, np.zeros(2), 0.1, 0.9, 0.0)
        th2, _ = sgd_momentum_step(th1, g, v, 0.1, 0.9, 0.0)
        np.testing.assert_allclose(th2 - th1, -0.1 * 1.9 * g)

    def test_weight_decay(self):
        th, _ = sgd_momentum_step(np.array([2.0]), np.zeros(1), np.zeros(1), 0.5, 0.0, 0.1)
        np.testing.assert_allclose(th, [1.9])

    def test_non_finite(self):
        with pytest.raises(FloatingPointError):
            sgd_momentum_step(np.zeros(1), np.array([np.nan]), np.zeros(1), 0.1, 0.0, 0.0)


def small_problem(seed=0, n=10):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.normal(size=(n, 2)) + 3 * np.column_stack([y, -y])
    return data.Dataset(X, y, 2)


class TestTrain:
    def test_zero_epochs(self):
        ds = small_problem()
        r = train(ds, [2, 4, 2], TrainConfig(epochs=0))
        assert r.params.to_vector().tobytes() == scorer.init_params([2, 4, 2], 0).to_vector().tobytes()
        assert r.history == []

    def test_separable_converges(self):
        ds = small_problem(n=40)
        r = train(ds, [2, 2], TrainConfig(epochs=200, batch_size=8, lr=0.1, weight_decay=0.0))
        pred = scorer.forward(r.params, ds.inputs).logits.argmax(1)
        assert (pred == ds.labels).mean() == 1.0

    def test_bit_identical(self):
        ds = small_problem(n=30)
        spec = losses.LossSpec(np.zeros((2, 2)), alpha=[0.5, 0.5], lam_pull=0.1)
        cfg = TrainConfig(epochs=5, batch_size=7, lr=0.05, seed=3)
        a, b = train(ds, [2, 5, 3, 2], cfg, spec), train(ds, [2, 5, 3, 2], cfg, spec)
        assert a.params.to_vector().tobytes() == b.params.to_vector().tobytes()
        assert [h.loss for h in a.history] == [h.loss for h in b.history]

    def test_matches_hand_rolled_loop(self):
        ds = small_problem(n=10)
        cfg = TrainConfig(epochs=3, batch_size=4, lr=0.1, momentum=0.9, weight_decay=0.0, seed=5)
        r = train(ds, [2, 3, 2], cfg)

        p = scorer.init_params([2, 3, 2], 5)
        theta, vel = p.to_vector(), None
        rng = np.random.default_rng(5)
        for _ in range(3):
            order = rng.permutation(10)
            for s in range(0, 10, 4):
                idx = order[s:s + 4]
                g = scorer.backward(p.from_vector(theta), ds.inputs[idx], ds.labels[idx],
                                    losses.LossSpec.plain(2)).to_vector()
                vel = g if vel is None else 0.9 * vel + g
                theta = theta - 0.1 * vel
        np.testing.assert_array_equal(r.params.to_vector(), theta)

    def test_tiny_lr_small_change(self):
        ds = small_problem(n=10)
        init = scorer.init_params([2, 3, 2], 0).to_vector()
        moves = []
        for lr in (1e-6, 1e-7):
            r = train(ds, [2, 3, 2], TrainConfig(epochs=1, batch_size=10, lr=lr, momentum=0.0))
            moves.append(np.abs(r.params.to_vector() - init).max())
        assert moves[0] == pytest.approx(10 * moves[1], rel=1e-6)

    def test_divergence_reports_epoch(self):
        ds = small_problem(n=10)
        ds.inputs[:] *= 1e150
        with pytest.raises(TrainingDiverged) as info:
            train(ds, [2, 8, 2], TrainConfig(epochs=3, lr=1.0))
        assert 0 <= info.value.epoch < 3
        assert f"epoch {info.value.epoch}" in str(info.value)

    def test_history_records_parts_and_eval(self):
        ds = small_problem(n=20)
        spec = losses.LossSpec(np.zeros((2, 2)), alpha=[0.5, 0.5], lam_pull=0.01)
        r = train(ds, [2, 4, 2], TrainConfig(epochs=3, batch_size=5, eval_every=1), spec, eval_set=ds)
        assert len(r.history) == 3
        assert set(r.history[0].parts) == {"ce", "pull"}
        assert 0 <= r.history[-1].eval["balanced_accuracy"] <= 1

    def test_prototype_head(self):
        ds = small_problem(n=40)
        r = train(ds, [2, 6, 3, 2], TrainConfig(epochs=30, batch_size=10, lr=0.05, head="prototype"))
        W, b = scorer.centroid_head(r.centroids, 1.0)
        np.testing.assert_array_equal(r.params.head_W, W)
        np.testing.assert_array_equal(r.params.head_b, b)
        _, F = r.predict(ds.inputs)
        assert metrics.balanced_accuracy(F.argmax(1), ds.labels, 2) > 0.9

    def test_architecture_mismatch(self):
        with pytest.raises(ValueError):
            train(small_problem(), [3, 2], TrainConfig(epochs=1))


@pytest.mark.slow
def test_two_moons_pull_reduces_variance():
    ratios = []
    for seed in range(5):
        tr = data.two_moons_lt(2000, 0.05, seed=seed)
        te = data.two_moons_lt(5000, 0.05, seed=100 + seed)
        out = []
        for lam in (0.0, 0.01):
            spec = losses.LossSpec(np.zeros((2, 2)), alpha=losses.alpha_schedule(tr.priors), lam_pull=lam)
            r = train(tr, [2, 16, 8, 2, 2], TrainConfig(epochs=50, lr=0.05, seed=seed), spec)
            fwd = scorer.forward(r.params, te.inputs)
            out.append(np.nanmean(metrics.class_variance(fwd.embeddings, te.labels, 2)[0]))
        ratios.append(out[1] / out[0] if out[0] > 0 else math.nan)
    assert np.nanmedian(ratios) < 1.0
