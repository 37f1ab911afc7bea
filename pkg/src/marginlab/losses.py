"""Logit-margin cross-entropy and embedding regularisers.

Every regulariser works on a minibatch of embeddings ``Z`` of shape ``(N, K)``
with integer labels in ``[0, L)``.  Functions returning gradients give the
gradient of the *sum* of the per-sample values with respect to ``Z`` unless an
anchor ``index`` is passed, in which case value and gradient refer to that
single anchor.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

DELTA_SCHEMES = ("zero", "ldam", "tan", "logadj")


def _as_prob_vector(priors) -> np.ndarray:
    p = np.asarray(priors, dtype=float)
    if p.ndim != 1 or p.size < 1:
        raise ValueError("priors must be a non-empty 1-d array")
    if np.any(p <= 0):
        raise ValueError("priors must be strictly positive")
    if abs(p.sum() - 1.0) > 1e-8:
        raise ValueError(f"priors must sum to 1, got {p.sum()!r}")
    return p


def delta_schedule(priors, scheme: str = "logadj") -> np.ndarray:
    """Margin matrix ``D[y, y']`` for the margin cross-entropy.

    ``ldam``: ``P(y)^(-1/4)``; ``tan``: ``P(y')``; ``logadj``:
    ``log(P(y') / P(y))``.  The diagonal is always zero.
    """
    p = _as_prob_vector(priors)
    L = p.size
    if scheme == "zero":
        delta = np.zeros((L, L))
    elif scheme == "ldam":
        delta = np.repeat((p ** -0.25)[:, None], L, axis=1)
    elif scheme == "tan":
        delta = np.repeat(p[None, :], L, axis=0)
    elif scheme == "logadj":
        logp = np.log(p)
        delta = logp[None, :] - logp[:, None]
    else:
        raise ValueError(f"unknown margin scheme {scheme!r}; expected one of {DELTA_SCHEMES}")
    np.fill_diagonal(delta, 0.0)
    return delta


def alpha_schedule(bases, exponent: float = 1.0, scale: float = 1.0) -> np.ndarray:
    """Per-class embedding margins ``scale * base ** exponent``.

    ``bases`` are either class priors or class counts; the two differ by a
    factor ``N ** exponent`` and neither is preferred here.
    """
    b = np.asarray(bases, dtype=float)
    if np.any(b <= 0):
        raise ValueError("alpha_schedule bases must be strictly positive")
    return scale * b ** exponent


# -- logit margins -----------------------------------------------------------


def margin_ce(logits, labels, delta=None):
    """Cross-entropy with additive logit margins.

    ``log(1 + sum_{y' != y} exp(D[y, y'] + f_y' - f_y))``

    Accepts a single logit vector with a scalar label, or a batch ``(N, L)``
    with labels ``(N,)``.  Returns ``(values, grad_logits)``; the gradient of
    each value with respect to its own logit row sums to zero.
    """
    f = np.asarray(logits, dtype=float)
    single = f.ndim == 1
    f2 = np.atleast_2d(f)
    y = np.atleast_1d(np.asarray(labels, dtype=int))
    N, L = f2.shape
    if y.shape != (N,):
        raise ValueError("labels must match the number of logit rows")
    if not np.all(np.isfinite(f2)):
        raise ValueError("logits must be finite")
    if delta is None:
        delta = np.zeros((L, L))
    delta = np.asarray(delta, dtype=float)
    rows = np.arange(N)

    z = delta[y] + f2 - f2[rows, y][:, None]
    z[rows, y] = 0.0
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=1, keepdims=True)
    values = (m + np.log(s))[:, 0]
    p = e / s
    grad = p.copy()
    grad[rows, y] = p[rows, y] - 1.0
    # log(1 + ...) is never below 0 but rounding can give -1e-17
    values = np.maximum(values, 0.0)
    if single:
        return float(values[0]), grad[0]
    return values, grad


def softmax_ce(logits, labels):
    """Plain softmax cross-entropy ``-log softmax(f)_y`` (reference form)."""
    f = np.atleast_2d(np.asarray(logits, dtype=float))
    y = np.atleast_1d(np.asarray(labels, dtype=int))
    m = f.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(f - m).sum(axis=1, keepdims=True)))[:, 0]
    return lse - f[np.arange(len(y)), y]


# -- pairwise embedding regularisers ------------------------------------------


def sq_dists(Z: np.ndarray) -> np.ndarray:
    N, K = Z.shape
    if N * N * K <= 2_000_000:
        diff = Z[:, None, :] - Z[None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff)
    # large batches: Gram form, clipped against cancellation
    sq = np.einsum("ij,ij->i", Z, Z)
    D = sq[:, None] + sq[None, :] - 2.0 * Z @ Z.T
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def _soft_pair_term(Z, labels, margins, same_class: bool):
    """Shared core of the pull and push regularisers.

    For anchor ``i`` the exponent is ``D_ij - m_{y_i}`` (pull, same class) or
    ``m_{y_i} - D_ij`` (push, other classes), and the value is
    ``log(1 + sum_j exp(exponent_ij))``.
    """
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(labels, dtype=int)
    margins = np.asarray(margins, dtype=float)
    N = Z.shape[0]
    D = sq_dists(Z)
    same = y[:, None] == y[None, :]
    if same_class:
        mask = same & ~np.eye(N, dtype=bool)
        S = D - margins[y][:, None]
        sign = 1.0
    else:
        mask = ~same
        S = margins[y][:, None] - D
        sign = -1.0
    S = np.where(mask, S, -np.inf)
    m = np.maximum(S.max(axis=1, initial=-np.inf), 0.0)
    E = np.where(mask, np.exp(S - m[:, None]), 0.0)
    denom = np.exp(-m) + E.sum(axis=1)
    values = m + np.log(denom)
    P = E / denom[:, None]
    return values, P, sign


def _pair_grad(Z, P, sign):
    # d/dZ of sum_i log(1 + sum_j exp(sign * ||z_i - z_j||^2 + c_i))
    rs = P.sum(axis=1)
    cs = P.sum(axis=0)
    return 2.0 * sign * ((rs + cs)[:, None] * Z - P @ Z - P.T @ Z)


def _anchor_grad(Z, P, sign, i):
    g = np.zeros_like(Z)
    diff = Z[i][None, :] - Z  # z_i - z_j
    w = P[i][:, None]
    g[i] = 2.0 * sign * (w * diff).sum(axis=0)
    g -= 2.0 * sign * w * diff
    return g


def pull_reg(embeddings, labels, alpha, index: int | None = None):
    """Soft pull regulariser over same-class pairs.

    ``log(1 + sum_{x+ in S_y \\ {x}} exp(||z - z+||^2 - alpha_y))``; an anchor
    alone in its class contributes ``log 1 = 0``.
    """
    Z = np.asarray(embeddings, dtype=float)
    values, P, sign = _soft_pair_term(Z, labels, alpha, same_class=True)
    if index is None:
        return values, _pair_grad(Z, P, sign)
    return float(values[index]), _anchor_grad(Z, P, sign, index)


def push_reg(embeddings, labels, beta, index: int | None = None):
    """Soft push regulariser over pairs from different classes.

    ``log(1 + sum_{x- not in S_y} exp(beta_y - ||z - z-||^2))``.
    """
    Z = np.asarray(embeddings, dtype=float)
    values, P, sign = _soft_pair_term(Z, labels, beta, same_class=False)
    if index is None:
        return values, _pair_grad(Z, P, sign)
    return float(values[index]), _anchor_grad(Z, P, sign, index)


def hard_pull(embeddings, labels, alpha, index: int | None = None):
    """Hinge of the largest same-class squared distance, ``[max D - alpha_y]_+``."""
    Z = np.asarray(embeddings, dtype=float)
    y = np.asarray(labels, dtype=int)
    alpha = np.asarray(alpha, dtype=float)
    N = Z.shape[0]
    D = sq_dists(Z)
    mask = (y[:, None] == y[None, :]) & ~np.eye(N, dtype=bool)
    worst = np.where(mask, D, -np.inf).max(axis=1, initial=-np.inf)
    values = np.where(np.isfinite(worst), np.maximum(worst - alpha[y], 0.0), 0.0)
    if index is None:
        return values
    return float(values[index])


def hard_push(embeddings, labels, beta, index: int | None = None):
    """Hinge of the closest negative, ``max_{x-} [beta_y - D]_+``."""
    Z = np.asarray(embeddings, dtype=float)
    y = np.asarray(labels, dtype=int)
    beta = np.asarray(beta, dtype=float)
    D = sq_dists(Z)
    mask = y[:, None] != y[None, :]
    closest = np.where(mask, D, np.inf).min(axis=1, initial=np.inf)
    values = np.where(np.isfinite(closest), np.maximum(beta[y] - closest, 0.0), 0.0)
    if index is None:
        return values
    return float(values[index])


# -- centroid based regularisers ----------------------------------------------


def batch_centroids(embeddings, labels, num_classes: int) -> np.ndarray:
    """Per-class means; rows of absent classes are NaN."""
    Z = np.asarray(embeddings, dtype=float)
    y = np.asarray(labels, dtype=int)
    sums = np.zeros((num_classes, Z.shape[1]))
    np.add.at(sums, y, Z)
    counts = np.bincount(y, minlength=num_classes).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / counts[:, None]


def center_loss(embeddings, labels, centroids):
    """``||z - mu_y||^2`` per sample, gradient w.r.t. ``z`` with centroids fixed."""
    Z = np.asarray(embeddings, dtype=float)
    y = np.asarray(labels, dtype=int)
    mu = np.asarray(centroids, dtype=float)
    if np.any(y >= mu.shape[0]) or not np.all(np.isfinite(mu[np.unique(y)])):
        raise ValueError("missing centroid for a class present in the batch")
    diff = Z - mu[y]
    return np.einsum("ij,ij->i", diff, diff), 2.0 * diff


def gaussian_xent_penalty(embeddings, labels, centroids, s2: float = 1.0) -> np.ndarray:
    """Negative log-density of ``N(mu_y, s2 I)`` at each embedding.

    Equals ``center_loss / (2 s2)`` plus ``(K/2) log(2 pi s2)`` per sample.
    """
    if s2 <= 0:
        raise ValueError("s2 must be positive")
    Z = np.asarray(embeddings, dtype=float)
    values, _ = center_loss(Z, labels, centroids)
    K = Z.shape[1]
    return 0.5 * K * np.log(2.0 * np.pi * s2) + values / (2.0 * s2)


def dro_lt_reg(embeddings, labels, eps, centroids=None):
    """DRO-LT contrastive-to-centroid regulariser, per sample.

    ``log sum_{(x', y')} exp(-||z' - mu_y||^2 + ||z - mu_y||^2 + eps_y [y' != y])``

    With ``centroids=None`` the batch means are used and the returned gradient
    includes the dependence of those means on the embeddings.  With explicit
    centroids they are treated as constants.
    """
    Z = np.asarray(embeddings, dtype=float)
    y = np.asarray(labels, dtype=int)
    eps = np.asarray(eps, dtype=float)
    N = Z.shape[0]
    if N == 0:
        raise ValueError("empty batch")
    L = max(int(y.max()) + 1, eps.size)
    detached = centroids is not None
    mu = np.asarray(centroids, dtype=float) if detached else batch_centroids(Z, y, L)
    M = mu[y]  # (N, K) centroid of each anchor's class
    # d_ij = ||z_j - mu_{y_i}||^2
    d = (Z * Z).sum(1)[None, :] - 2.0 * M @ Z.T + (M * M).sum(1)[:, None]
    d_self = np.einsum("ij,ij->i", Z - M, Z - M)
    A = -d + d_self[:, None] + eps[y][:, None] * (y[None, :] != y[:, None])
    a_max = A.max(axis=1, keepdims=True)
    E = np.exp(A - a_max)
    s = E.sum(axis=1, keepdims=True)
    values = (a_max + np.log(s))[:, 0]
    P = E / s

    # dA_ij/dz_j = -2 (z_j - mu_i); dA_ij/dz_i = 2 (z_i - mu_i); dA_ij/dmu_i = 2 (z_j - z_i)
    grad = 2.0 * (Z - M) * P.sum(axis=1)[:, None]
    grad -= 2.0 * (P.sum(axis=0)[:, None] * Z - P.T @ M)
    if not detached:
        g_mu_anchor = 2.0 * (P @ Z - P.sum(axis=1)[:, None] * Z)
        g_mu = np.zeros_like(mu)
        np.add.at(g_mu, y, g_mu_anchor)
        counts = np.bincount(y, minlength=mu.shape[0]).astype(float)
        grad += g_mu[y] / counts[y][:, None]
    return values, grad


def dro_lt_simplified(embeddings, labels, eps, centroids=None) -> np.ndarray:
    """Same quantity as :func:`dro_lt_reg`, written in the split-sum form.

    ``2e + log[sum_{z' in S_y} exp(d(mu,z) - d(mu,z') - 2e) + sum_{z'' not in S_y} exp(d(mu,z) - d(mu,z''))]``

    with ``e = eps / 2`` and ``d`` the squared Euclidean distance.
    """
    Z = np.asarray(embeddings, dtype=float)
    y = np.asarray(labels, dtype=int)
    half = 0.5 * np.asarray(eps, dtype=float)
    L = max(int(y.max()) + 1, half.size)
    mu = batch_centroids(Z, y, L) if centroids is None else np.asarray(centroids, dtype=float)
    out = np.empty(Z.shape[0])
    for i in range(Z.shape[0]):
        c = mu[y[i]]
        d_i = float(np.sum((Z[i] - c) ** 2))
        d_all = np.sum((Z - c) ** 2, axis=1)
        same = y == y[i]
        terms = np.concatenate([d_i - d_all[same] - 2.0 * half[y[i]], d_i - d_all[~same]])
        top = terms.max()
        out[i] = 2.0 * half[y[i]] + top + np.log(np.exp(terms - top).sum())
    return out


def spreadout_reg(embeddings, dim: int | None = None) -> float:
    """Spreadout regulariser ``M1^2 + max(0, M2 - 1/d)`` on unit-normalised rows.

    ``M1`` and ``M2`` are the mean and mean square of inner products over
    ordered pairs ``x != x'``.
    """
    Z = np.asarray(embeddings, dtype=float)
    if Z.shape[0] < 2:
        raise ValueError("spreadout needs at least two embeddings")
    norms = np.linalg.norm(Z, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero-norm embedding cannot be normalised")
    U = Z / norms[:, None]
    G = U @ U.T
    off = ~np.eye(Z.shape[0], dtype=bool)
    m1 = G[off].mean()
    m2 = (G[off] ** 2).mean()
    d = Z.shape[1] if dim is None else dim
    return float(m1 ** 2 + max(0.0, m2 - 1.0 / d))


def range_loss(centroids, gamma: float) -> float:
    """``max_{y != y'} [gamma - ||mu_y - mu_y'||^2]_+``."""
    mu = np.asarray(centroids, dtype=float)
    if mu.ndim != 2 or mu.shape[0] < 2:
        raise ValueError("range loss needs at least two centroids")
    D = sq_dists(mu)
    iu = np.triu_indices(mu.shape[0], k=1)
    return float(max(0.0, gamma - D[iu].min()))


# -- full objective ------------------------------------------------------------


@dataclass
class LossSpec:
    """Margins and weights of the combined training objective.

    A regulariser is switched on by giving it a positive weight.  Only the
    pull term belongs to the base objective; push, center and DRO-LT are
    optional extras for ablations and baselines.
    """

    delta: np.ndarray
    alpha: np.ndarray | None = None
    beta: np.ndarray | None = None
    eps: np.ndarray | None = None
    lam_pull: float = 0.0
    lam_push: float = 0.0
    lam_center: float = 0.0
    lam_dro: float = 0.0
    s2: float = 1.0

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=float)
        L = self.delta.shape[0]
        if self.delta.shape != (L, L):
            raise ValueError("delta must be square")
        if np.any(np.diag(self.delta) != 0):
            raise ValueError("delta must have a zero diagonal")
        for name in ("alpha", "beta", "eps"):
            v = getattr(self, name)
            v = np.zeros(L) if v is None else np.asarray(v, dtype=float)
            if v.shape != (L,):
                raise ValueError(f"{name} must have one entry per class")
            setattr(self, name, v)
        for name in ("lam_pull", "lam_push", "lam_center", "lam_dro"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.s2 <= 0:
            raise ValueError("s2 must be positive")

    @property
    def num_classes(self) -> int:
        return self.delta.shape[0]

    @classmethod
    def plain(cls, num_classes: int) -> "LossSpec":
        return cls(delta=np.zeros((num_classes, num_classes)))

    def with_(self, **changes) -> "LossSpec":
        return replace(self, **changes)


@dataclass
class ObjectiveResult:
    value: float
    parts: dict = field(default_factory=dict)
    grad_logits: np.ndarray | None = None
    grad_embeddings: np.ndarray | None = None


def elm_objective(embeddings, logits, labels, spec: LossSpec) -> ObjectiveResult:
    """Batch mean of margin CE plus weighted embedding regularisers.

    ``parts`` holds the unweighted batch mean of each active component.
    Gradients are of the returned ``value``.
    """
    Z = np.asarray(embeddings, dtype=float)
    y = np.asarray(labels, dtype=int)
    N = Z.shape[0]
    ce, g_logits = margin_ce(logits, y, spec.delta)
    ce = np.atleast_1d(ce)
    g_logits = np.atleast_2d(g_logits) / N
    g_emb = np.zeros_like(Z)
    parts = {"ce": float(ce.mean())}
    value = parts["ce"]

    if spec.lam_pull > 0:
        v, g = pull_reg(Z, y, spec.alpha)
        parts["pull"] = float(v.mean())
        value += spec.lam_pull * parts["pull"]
        g_emb += spec.lam_pull * g / N
    if spec.lam_push > 0:
        v, g = push_reg(Z, y, spec.beta)
        parts["push"] = float(v.mean())
        value += spec.lam_push * parts["push"]
        g_emb += spec.lam_push * g / N
    if spec.lam_center > 0:
        # batch centroids: residuals sum to zero per class, so holding the
        # centroids fixed gives the exact gradient
        mu = batch_centroids(Z, y, spec.num_classes)
        v, g = center_loss(Z, y, mu)
        parts["center"] = float(v.mean())
        value += spec.lam_center * parts["center"]
        g_emb += spec.lam_center * g / N
    if spec.lam_dro > 0:
        v, g = dro_lt_reg(Z, y, spec.eps)
        parts["dro"] = float(v.mean())
        value += spec.lam_dro * parts["dro"]
        g_emb += spec.lam_dro * g / N

    return ObjectiveResult(value=float(value), parts=parts, grad_logits=g_logits, grad_embeddings=g_emb)
