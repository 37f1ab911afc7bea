"""Feedforward ReLU scorer with hand-written backward pass and closed-form heads."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .losses import LossSpec, elm_objective


@dataclass
class ScorerParams:
    """Hidden ReLU layers followed by an affine head.

    ``layers[k] = (W, b)`` with ``W`` of shape ``(d_out, d_in)``.  The head maps
    the last hidden activation (the embedding, dimension ``K``) to ``L``
    logits as ``Z @ head_W + head_b`` with ``head_W`` of shape ``(K, L)``.
    """

    layers: list[tuple[np.ndarray, np.ndarray]]
    head_W: np.ndarray
    head_b: np.ndarray

    def __post_init__(self):
        d_prev = None
        for W, b in self.layers:
            if b.shape != (W.shape[0],):
                raise ValueError("bias does not match layer output dimension")
            if d_prev is not None and W.shape[1] != d_prev:
                raise ValueError("consecutive layer dimensions do not chain")
            d_prev = W.shape[0]
        if d_prev is not None and self.head_W.shape[0] != d_prev:
            raise ValueError("head input dimension must equal the embedding dimension")
        if self.head_b.shape != (self.head_W.shape[1],):
            raise ValueError("head bias does not match the number of classes")

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1] if self.layers else self.head_W.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.head_W.shape[0]

    @property
    def num_classes(self) -> int:
        return self.head_W.shape[1]

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for k, (W, b) in enumerate(self.layers):
            out += [(f"layer{k}.weight", W), (f"layer{k}.bias", b)]
        out += [("head.weight", self.head_W), ("head.bias", self.head_b)]
        return out

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.arrays()])

    def from_vector(self, theta: np.ndarray) -> "ScorerParams":
        """New params with the same shapes as ``self`` filled from ``theta``."""
        pieces, pos = [], 0
        for _, a in self.arrays():
            pieces.append(np.asarray(theta[pos:pos + a.size], dtype=float).reshape(a.shape).copy())
            pos += a.size
        if pos != theta.size:
            raise ValueError("parameter vector has the wrong length")
        layers = [(pieces[2 * k], pieces[2 * k + 1]) for k in range(len(self.layers))]
        return ScorerParams(layers, pieces[-2], pieces[-1])

    def copy(self) -> "ScorerParams":
        return self.from_vector(self.to_vector())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.to_vector())))


def init_params(layer_sizes, seed: int) -> ScorerParams:
    """Random parameters for ``layer_sizes = [d, h1, ..., K, L]``.

    Weights are zero-mean uniform with variance ``2 / fan_in``; biases are
    zero.  ``[d, L]`` gives a linear model on the raw inputs.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ValueError(f"layer_sizes needs at least two positive entries, got {layer_sizes!r}")
    rng = np.random.default_rng(seed)

    def draw(fan_in, shape):
        a = np.sqrt(6.0 / fan_in)
        return rng.uniform(-a, a, size=shape)

    layers = []
    for d_in, d_out in zip(sizes[:-2], sizes[1:-1]):
        layers.append((draw(d_in, (d_out, d_in)), np.zeros(d_out)))
    K, L = sizes[-2], sizes[-1]
    return ScorerParams(layers, draw(K, (K, L)), np.zeros(L))


@dataclass
class ForwardResult:
    embeddings: np.ndarray
    logits: np.ndarray
    pre_acts: list[np.ndarray] = field(default_factory=list)
    acts: list[np.ndarray] = field(default_factory=list)


def forward(params: ScorerParams, inputs) -> ForwardResult:
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    if X.shape[1] != params.input_dim:
        raise ValueError(f"input dimension {X.shape[1]} does not match network input {params.input_dim}")
    acts, pre_acts = [X], []
    h = X
    for W, b in params.layers:
        z = h @ W.T + b
        h = np.maximum(z, 0.0)
        pre_acts.append(z)
        acts.append(h)
    logits = h @ params.head_W + params.head_b
    return ForwardResult(embeddings=h, logits=logits, pre_acts=pre_acts, acts=acts)


def backprop(params: ScorerParams, fwd: ForwardResult, grad_logits, grad_embeddings=None,
             head_trainable: bool = True) -> ScorerParams:
    """Chain upstream gradients on logits/embeddings back to every parameter.

    The returned object has the shape of ``params`` and holds gradients.  The
    rectifier's subgradient at exactly zero is taken as 0.
    """
    gL = np.asarray(grad_logits, dtype=float)
    Z = fwd.embeddings
    if head_trainable:
        gW_head = Z.T @ gL
        gb_head = gL.sum(axis=0)
    else:
        gW_head = np.zeros_like(params.head_W)
        gb_head = np.zeros_like(params.head_b)
    gh = gL @ params.head_W.T
    if grad_embeddings is not None:
        gh = gh + grad_embeddings
    grads = []
    for k in range(len(params.layers) - 1, -1, -1):
        W, _ = params.layers[k]
        gz = gh * (fwd.pre_acts[k] > 0)
        grads.append((gz.T @ fwd.acts[k], gz.sum(axis=0)))
        gh = gz @ W
    grads.reverse()
    out = ScorerParams(grads, gW_head, gb_head)
    if not out.is_finite():
        raise FloatingPointError("non-finite gradient")
    return out


def loss_and_grad(params: ScorerParams, inputs, labels, spec: LossSpec):
    """Objective value, its components and the gradient for every parameter."""
    fwd = forward(params, inputs)
    res = elm_objective(fwd.embeddings, fwd.logits, labels, spec)
    if not np.isfinite(res.value):
        raise FloatingPointError("non-finite loss")
    return res, backprop(params, fwd, res.grad_logits, res.grad_embeddings)


def backward(params: ScorerParams, inputs, labels, spec: LossSpec) -> ScorerParams:
    return loss_and_grad(params, inputs, labels, spec)[1]


def _relu_pattern(params, X):
    return [z > 0 for z in forward(params, X).pre_acts]


def finite_diff_check(params: ScorerParams, inputs, labels, spec: LossSpec, h: float = 1e-5,
                      max_coords: int | None = None, seed: int = 0, floor: float = 1e-6) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``, so
    coordinates where both gradients vanish score 0.  Coordinates whose
    perturbation flips a rectifier on or off are skipped.  With
    ``max_coords`` a seeded random subset of coordinates is checked.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    X = np.asarray(inputs, dtype=float)
    theta = params.to_vector()
    analytic = backward(params, X, labels, spec).to_vector()
    coords = np.arange(theta.size)
    if max_coords is not None and max_coords < theta.size:
        coords = np.sort(np.random.default_rng(seed).choice(theta.size, max_coords, replace=False))
    base_pattern = _relu_pattern(params, X)

    def objective(t):
        p = params.from_vector(t)
        fwd = forward(p, X)
        return elm_objective(fwd.embeddings, fwd.logits, labels, spec).value, p

    worst = 0.0
    for i in coords:
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        fp, pp = objective(tp)
        fm, pm = objective(tm)
        if any(np.any(a != b) for pat in (_relu_pattern(pp, X), _relu_pattern(pm, X))
               for a, b in zip(pat, base_pattern)):
            continue
        numeric = (fp - fm) / (2.0 * h)
        a = analytic[i]
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        worst = max(worst, err)
    return float(worst)


def min_preact_margin(params: ScorerParams, inputs) -> float:
    """Smallest ``|pre-activation|`` over the batch; inf for a linear model."""
    pre = forward(params, inputs).pre_acts
    return float(min((np.abs(z).min() for z in pre), default=np.inf))


# -- closed-form heads ---------------------------------------------------------


def bayes_gaussian_head(means, variances, priors):
    """Affine head realising the posterior of isotropic Gaussian classes.

    ``w_y = mu_y / s_y``, ``b_y = -||mu_y||^2 / (2 s_y) + log P(y)``.  The
    posterior is exact when all classes share one variance.
    """
    mu = np.asarray(means, dtype=float)
    var = np.broadcast_to(np.asarray(variances, dtype=float), (mu.shape[0],))
    p = np.asarray(priors, dtype=float)
    if np.any(var <= 0):
        raise ValueError("variances must be positive")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-8:
        raise ValueError("priors must form a distribution")
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    W = (mu / var[:, None]).T
    b = -np.einsum("ij,ij->i", mu, mu) / (2.0 * var) + logp
    return W, b


def prototype_head(embeddings, labels, v2: float = 1.0, num_classes: int | None = None,
                   fallback=None):
    """Head computed from class centroids: ``w_y = mu_y / v2``, ``b_y = -||mu_y||^2 / (2 v2)``.

    No prior term enters the bias.  A class missing from ``labels`` takes its
    centroid from ``fallback`` (shape ``(L, K)``) if given, else raises.
    """
    if v2 <= 0:
        raise ValueError("v2 must be positive")
    Z = np.asarray(embeddings, dtype=float)
    y = np.asarray(labels, dtype=int)
    L = int(y.max()) + 1 if num_classes is None else num_classes
    counts = np.bincount(y, minlength=L)
    sums = np.zeros((L, Z.shape[1]))
    np.add.at(sums, y, Z)
    mu = np.empty_like(sums)
    present = counts > 0
    mu[present] = sums[present] / counts[present, None]
    if not present.all():
        if fallback is None:
            raise ValueError(f"classes {np.flatnonzero(~present).tolist()} have no samples")
        mu[~present] = np.asarray(fallback, dtype=float)[~present]
    return centroid_head(mu, v2)


def centroid_head(centroids, v2: float = 1.0):
    mu = np.asarray(centroids, dtype=float)
    return mu.T / v2, -np.einsum("ij,ij->i", mu, mu) / (2.0 * v2)


def tau_normalize_head(W, tau: float):
    """Scale each class column ``w_y`` by ``||w_y||^(-tau)``; zero columns untouched."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    W = np.asarray(W, dtype=float)
    norms = np.linalg.norm(W, axis=0)
    scale = np.ones_like(norms)
    nz = norms > 0
    scale[nz] = norms[nz] ** (-tau)
    return W * scale[None, :]


def softmax(logits):
    f = np.asarray(logits, dtype=float)
    e = np.exp(f - f.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)
