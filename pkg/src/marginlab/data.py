"""Synthetic long-tail datasets."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

BUCKETS = ("Head", "Torso", "Tail")


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.labels = np.asarray(self.labels, dtype=int)
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("one label per input row required")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels must lie in [0, num_classes)")

    def __len__(self) -> int:
        return self.labels.size

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    @property
    def priors(self) -> np.ndarray:
        return self.counts / len(self)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x_{j}" for j in range(self.dim)] + ["y"])
            for x, y in zip(self.inputs, self.labels):
                w.writerow([repr(float(v)) for v in x] + [int(y)])

    @classmethod
    def from_csv(cls, path, num_classes: int | None = None) -> "Dataset":
        with open(Path(path), newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[-1] != "y" or header[:-1] != [f"x_{j}" for j in range(len(header) - 1)]:
            raise ValueError("expected header x_0..x_{d-1}, y")
        X = np.array([[float(v) for v in r[:-1]] for r in body])
        y = np.array([int(r[-1]) for r in body])
        L = int(y.max()) + 1 if num_classes is None else num_classes
        return cls(X, y, L)


@dataclass
class ClassGaussianSpec:
    """Isotropic Gaussian class conditionals ``N(mu_y, var_y I)`` with priors."""

    means: np.ndarray
    variances: np.ndarray
    priors: np.ndarray

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        L = self.means.shape[0]
        self.variances = np.broadcast_to(np.asarray(self.variances, dtype=float), (L,)).copy()
        self.priors = np.asarray(self.priors, dtype=float)
        if np.any(self.variances <= 0):
            raise ValueError("class variances must be positive")
        if self.priors.shape != (L,) or np.any(self.priors < 0) or abs(self.priors.sum() - 1) > 1e-8:
            raise ValueError("priors must be a distribution over the classes")

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_likelihood(self, X) -> np.ndarray:
        """``log q(x | y)`` for every row and class, shape ``(N, L)``."""
        X = np.atleast_2d(X)
        d2 = ((X[:, None, :] - self.means[None]) ** 2).sum(-1)
        return -0.5 * d2 / self.variances - 0.5 * self.dim * np.log(2 * np.pi * self.variances)

    def posterior(self, X) -> np.ndarray:
        """Bayes-rule ``q(y | x) = q(x | y) q(y) / q(x)``."""
        with np.errstate(divide="ignore"):
            a = self.log_likelihood(X) + np.log(self.priors)
        a -= a.max(axis=1, keepdims=True)
        e = np.exp(a)
        return e / e.sum(axis=1, keepdims=True)


def two_moons_lt(n: int, tail_prob: float = 0.05, noise: float = 0.1, seed: int = 0) -> Dataset:
    """Imbalanced two-moons: label 0 = Head (upper arc), 1 = Tail (lower arc).

    Unit-radius half circles in the usual interleaved layout, shifted so the
    pair is centred at the origin: Head arc centred at ``(-0.5, -0.25)``, Tail
    arc centred at ``(0.5, 0.25)``.
    """
    if n < 2:
        raise ValueError("two_moons_lt needs n >= 2")
    if not 0 < tail_prob < 1:
        raise ValueError("tail_prob must lie in (0, 1)")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < tail_prob).astype(int)
    t = rng.uniform(0.0, np.pi, size=n)
    head = np.column_stack([np.cos(t) - 0.5, np.sin(t) - 0.25])
    tail = np.column_stack([0.5 - np.cos(t), 0.25 - np.sin(t)])
    X = np.where(y[:, None] == 1, tail, head)
    X = X + noise * rng.standard_normal((n, 2))
    return Dataset(X, y, 2)


TWO_MOONS_TAIL_CENTRE = np.array([0.5, 0.25])


def gaussian_mixture_lt(spec: ClassGaussianSpec, n: int, seed: int = 0) -> Dataset:
    """``n`` i.i.d. draws with labels from ``spec.priors``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    y = rng.choice(spec.num_classes, size=n, p=spec.priors)
    X = spec.means[y] + np.sqrt(spec.variances[y])[:, None] * rng.standard_normal((n, spec.dim))
    return Dataset(X, y, spec.num_classes)


def gaussian_mixture_counts(spec: ClassGaussianSpec, counts, seed: int = 0) -> Dataset:
    """Exactly ``counts[y]`` draws from each class, in class order."""
    counts = np.asarray(counts, dtype=int)
    if counts.shape != (spec.num_classes,) or np.any(counts < 0):
        raise ValueError("one non-negative count per class required")
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(spec.num_classes), counts)
    X = spec.means[y] + np.sqrt(spec.variances[y])[:, None] * rng.standard_normal((y.size, spec.dim))
    return Dataset(X, y, spec.num_classes)


def random_gaussian_spec(num_classes: int, dim: int, mean_scale: float = 1.0, variance: float = 1.0,
                         priors=None, seed: int = 0) -> ClassGaussianSpec:
    """Class means drawn i.i.d. ``N(0, mean_scale^2 I)``, shared variance."""
    rng = np.random.default_rng(seed)
    means = mean_scale * rng.standard_normal((num_classes, dim))
    if priors is None:
        priors = np.full(num_classes, 1.0 / num_classes)
    return ClassGaussianSpec(means, np.full(num_classes, variance), priors)


def exp_profile(n_max: int, num_classes: int, rho: float) -> np.ndarray:
    """Geometrically decaying class counts ``round(n_max * rho^(-y / (L - 1)))``."""
    if rho < 1:
        raise ValueError("imbalance ratio must be >= 1")
    if num_classes < 2:
        raise ValueError("need at least two classes")
    y = np.arange(num_classes)
    counts = np.round(n_max * rho ** (-y / (num_classes - 1))).astype(int)
    if counts.min() < 1:
        raise ValueError(f"n_max={n_max} leaves a class with no samples at rho={rho}")
    return counts


def head_torso_tail_buckets(counts, thresholds=(100, 20)) -> list[str]:
    """``Head`` for >= 100 samples, ``Torso`` for [20, 100), ``Tail`` below 20."""
    hi, lo = thresholds
    if hi < lo:
        raise ValueError("thresholds must be (upper, lower) with upper >= lower")
    return ["Head" if c >= hi else "Torso" if c >= lo else "Tail" for c in np.asarray(counts)]
