"""Minibatch SGD with momentum over the scorer and the ELM objective."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import losses
from .data import Dataset
from .metrics import evaluate
from .scorer import ScorerParams, backprop, centroid_head, forward, init_params


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, message: str = "non-finite loss"):
        super().__init__(f"training diverged at epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    epochs: int = 256
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: Literal["constant", "cosine", "warmup_step"] = "constant"
    warmup_epochs: int = 0
    decay_epochs: tuple[int, ...] = ()
    decay_factor: float = 0.1
    seed: int = 0
    head: Literal["learned", "prototype"] = "learned"
    v2: float = 1.0
    ema_decay: float = 0.9
    eval_every: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.schedule not in ("constant", "cosine", "warmup_step"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.head not in ("learned", "prototype"):
            raise ValueError(f"unknown head mode {self.head!r}")
        if self.v2 <= 0:
            raise ValueError("v2 must be positive")
        self.decay_epochs = tuple(sorted(int(e) for e in self.decay_epochs))


def lr_at(config: TrainConfig, epoch: int, step: int = 0, steps_per_epoch: int = 1) -> float:
    """Learning rate for ``step`` (0-based) of ``epoch`` (0-based).

    ``warmup_step`` ramps linearly so that the last step of the warmup period
    reaches the base rate, then multiplies by ``decay_factor`` once for every
    decay epoch already reached.  ``cosine`` anneals over all steps.
    """
    base = config.lr
    spe = max(int(steps_per_epoch), 1)
    if config.schedule == "constant":
        return base
    if config.schedule == "cosine":
        total = max(config.epochs * spe, 1)
        progress = min((epoch * spe + step) / total, 1.0)
        return base * 0.5 * (1.0 + math.cos(math.pi * progress))
    if config.warmup_epochs > 0 and epoch < config.warmup_epochs:
        return base * (epoch * spe + step + 1) / (config.warmup_epochs * spe)
    n_decays = sum(epoch >= e for e in config.decay_epochs)
    return base * config.decay_factor ** n_decays


def sgd_momentum_step(theta, grad, velocity, lr: float, momentum: float, weight_decay: float):
    """``v <- m v + (g + wd theta)``, ``theta <- theta - lr v``; returns new arrays."""
    g = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient")
    v = momentum * np.asarray(velocity, dtype=float) + g + weight_decay * np.asarray(theta, dtype=float)
    return theta - lr * v, v


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    parts: dict
    eval: dict = field(default_factory=dict)


@dataclass
class TrainResult:
    params: ScorerParams
    history: list[EpochRecord]
    centroids: np.ndarray | None = None

    def predict(self, inputs, v2: float = 1.0):
        """Embeddings and logits; prototype runs use the stored centroids."""
        fwd = forward(self.params, inputs)
        if self.centroids is None:
            return fwd.embeddings, fwd.logits
        W, b = centroid_head(self.centroids, v2)
        return fwd.embeddings, fwd.embeddings @ W + b


def _with_head(params: ScorerParams, W, b) -> ScorerParams:
    return ScorerParams(params.layers, np.asarray(W, dtype=float), np.asarray(b, dtype=float))


def train(dataset: Dataset, layer_sizes, config: TrainConfig, spec: losses.LossSpec | None = None,
          eval_set: Dataset | None = None, params: ScorerParams | None = None) -> TrainResult:
    """Train a scorer on ``dataset``.

    ``layer_sizes`` is ``[d, h1, ..., K, L]``.  In prototype mode the head is
    recomputed before every step from class centroids kept as an EMA of batch
    means (decay ``config.ema_decay``); only the hidden layers are updated.
    """
    L = dataset.num_classes
    spec = spec if spec is not None else losses.LossSpec.plain(L)
    if spec.num_classes != L:
        raise ValueError("loss spec and dataset disagree on the number of classes")
    if params is None:
        params = init_params(layer_sizes, config.seed)
    if params.num_classes != L or params.input_dim != dataset.dim:
        raise ValueError("architecture does not match the dataset")
    theta = params.to_vector()
    velocity = np.zeros_like(theta)
    rng = np.random.default_rng(config.seed)
    n = len(dataset)
    spe = math.ceil(n / config.batch_size)
    prototype = config.head == "prototype"
    centroids = None
    if prototype:
        emb = forward(params, dataset.inputs).embeddings
        centroids = losses.batch_centroids(emb, dataset.labels, L)
        centroids = np.where(np.isnan(centroids), 0.0, centroids)
    history: list[EpochRecord] = []

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total, parts_sum, lr = 0.0, {}, config.lr
        for step in range(spe):
            idx = order[step * config.batch_size:(step + 1) * config.batch_size]
            X, y = dataset.inputs[idx], dataset.labels[idx]
            lr = lr_at(config, epoch, step, spe)
            p = params.from_vector(theta)
            if prototype:
                z = forward(p, X).embeddings
                batch_mu = losses.batch_centroids(z, y, L)
                seen = ~np.isnan(batch_mu[:, 0])
                centroids[seen] = config.ema_decay * centroids[seen] + (1 - config.ema_decay) * batch_mu[seen]
                p = _with_head(p, *centroid_head(centroids, config.v2))
            with np.errstate(over="ignore", invalid="ignore"):
                fwd = forward(p, X)
            if not (np.all(np.isfinite(fwd.logits)) and np.all(np.isfinite(fwd.embeddings))):
                raise TrainingDiverged(epoch, "non-finite activations")
            res = losses.elm_objective(fwd.embeddings, fwd.logits, y, spec)
            if not np.isfinite(res.value):
                raise TrainingDiverged(epoch)
            try:
                g = backprop(p, fwd, res.grad_logits, res.grad_embeddings, head_trainable=not prototype)
            except FloatingPointError as exc:
                raise TrainingDiverged(epoch, str(exc)) from None
            gvec = g.to_vector()
            if prototype:
                n_head = p.head_W.size + p.head_b.size
                theta_step, velocity = sgd_momentum_step(theta, gvec, velocity, lr, config.momentum,
                                                         config.weight_decay)
                theta_step[-n_head:] = theta[-n_head:]
                velocity[-n_head:] = 0.0
                theta = theta_step
            else:
                theta, velocity = sgd_momentum_step(theta, gvec, velocity, lr, config.momentum,
                                                    config.weight_decay)
            if not np.all(np.isfinite(theta)):
                raise TrainingDiverged(epoch, "non-finite parameters")
            w = len(idx) / n
            total += w * res.value
            for k, v in res.parts.items():
                parts_sum[k] = parts_sum.get(k, 0.0) + w * v
        rec = EpochRecord(epoch, lr, float(total), {k: float(v) for k, v in parts_sum.items()})
        last = epoch == config.epochs - 1
        if eval_set is not None and config.eval_every and ((epoch + 1) % config.eval_every == 0 or last):
            cur = TrainResult(params.from_vector(theta), [], centroids)
            Z, F = cur.predict(eval_set.inputs, config.v2)
            rec.eval = evaluate(Z, F, eval_set.labels, L, with_samples=False).summary()
        history.append(rec)

    final = params.from_vector(theta)
    if prototype:
        final = _with_head(final, *centroid_head(centroids, config.v2))
        return TrainResult(final, history, centroids.copy())
    return TrainResult(final, history)
