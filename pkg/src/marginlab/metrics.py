"""Evaluation statistics: balanced error, AUC, margins and embedding geometry."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

HIST_BINS = 50


def per_class_accuracy(predictions, labels, num_classes: int) -> np.ndarray:
    pred = np.asarray(predictions, dtype=int)
    y = np.asarray(labels, dtype=int)
    counts = np.bincount(y, minlength=num_classes)
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise ValueError(f"classes {missing} are absent from the evaluation set")
    hits = np.bincount(y[pred == y], minlength=num_classes)
    return hits / counts


def balanced_accuracy(predictions, labels, num_classes: int) -> float:
    return float(per_class_accuracy(predictions, labels, num_classes).mean())


def balanced_error(predictions, labels, num_classes: int) -> float:
    """Mean of per-class error rates (misclassification under uniform labels)."""
    return 1.0 - balanced_accuracy(predictions, labels, num_classes)


def ovr_auc(logits, labels, num_classes: int) -> float:
    """Multi-class one-vs-rest AUC with tied pairs counted as 1/2.

    For each class ``y`` the score ``f_y`` of class-``y`` points is compared
    with that of every other point; results are averaged over classes.
    """
    F = np.atleast_2d(np.asarray(logits, dtype=float))
    y = np.asarray(labels, dtype=int)
    aucs = []
    for c in range(num_classes):
        pos = y == c
        n_pos, n_neg = int(pos.sum()), int((~pos).sum())
        if n_pos == 0 or n_neg == 0:
            raise ValueError(f"class {c} or its complement is empty")
        ranks = rankdata(F[:, c])
        u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
        aucs.append(u / (n_pos * n_neg))
    return float(np.mean(aucs))


def margins(logits, labels) -> np.ndarray:
    """``f_y(x) - max_{y' != y} f_y'(x)`` for every row."""
    F = np.atleast_2d(np.asarray(logits, dtype=float))
    y = np.asarray(labels, dtype=int)
    rows = np.arange(len(y))
    own = F[rows, y]
    other = F.copy()
    other[rows, y] = -np.inf
    return own - other.max(axis=1)


def margin_distribution(logits, labels, cls: int) -> np.ndarray:
    y = np.asarray(labels, dtype=int)
    sel = y == cls
    if not sel.any():
        raise ValueError(f"class {cls} not present")
    return margins(np.atleast_2d(logits)[sel], y[sel])


def max_intra_class_distance(embeddings, labels, cls: int) -> np.ndarray:
    """Per-instance largest distance to a same-class embedding, divided by the
    largest embedding norm in the whole set."""
    Z = np.asarray(embeddings, dtype=float)
    y = np.asarray(labels, dtype=int)
    S = Z[y == cls]
    if S.shape[0] < 2:
        raise ValueError(f"class {cls} needs at least two samples")
    scale = np.linalg.norm(Z, axis=1).max()
    if scale == 0:
        raise ValueError("all embeddings are zero")
    d = np.sqrt(((S[:, None, :] - S[None, :, :]) ** 2).sum(-1))
    return d.max(axis=1) / scale


def class_variance(embeddings, labels, num_classes: int):
    """Trace of each class's biased covariance, the class centroids and counts.

    Absent classes get NaN centroid and variance; singletons have variance 0.
    """
    Z = np.asarray(embeddings, dtype=float)
    y = np.asarray(labels, dtype=int)
    K = Z.shape[1]
    counts = np.bincount(y, minlength=num_classes)
    centroids = np.full((num_classes, K), np.nan)
    traces = np.full(num_classes, np.nan)
    for c in range(num_classes):
        S = Z[y == c]
        if len(S):
            centroids[c] = S.mean(axis=0)
            traces[c] = ((S - centroids[c]) ** 2).sum(axis=1).mean()
    return traces, centroids, counts


def bucket_breakdown(class_accuracy, buckets) -> dict:
    """Unweighted mean accuracy per bucket; empty buckets are left out."""
    acc = np.asarray(class_accuracy, dtype=float)
    out = {}
    for name in dict.fromkeys(buckets):
        sel = np.array([b == name for b in buckets])
        out[name] = float(acc[sel].mean())
    return out


def histogram(values, bins: int = HIST_BINS) -> dict:
    v = np.asarray(values, dtype=float)
    lo, hi = (float(v.min()), float(v.max())) if v.size else (0.0, 1.0)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    return {"edges": edges.tolist(), "counts": counts.tolist()}


def ecdf(values) -> dict:
    v = np.sort(np.asarray(values, dtype=float))
    return {"x": v.tolist(), "p": (np.arange(1, v.size + 1) / max(v.size, 1)).tolist()}


@dataclass
class Report:
    accuracy: float
    balanced_accuracy: float
    balanced_error: float
    class_accuracy: list
    bucket_accuracy: dict
    auc: float
    mean_trace_variance: float
    class_trace_variance: list
    margins: dict = field(default_factory=dict)
    intra_distances: dict = field(default_factory=dict)
    margin_hist: dict = field(default_factory=dict)
    intra_hist: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self) -> dict:
        keys = ("accuracy", "balanced_accuracy", "balanced_error", "auc", "mean_trace_variance")
        out = {k: getattr(self, k) for k in keys}
        for b, v in self.bucket_accuracy.items():
            out[f"acc_{b.lower()}"] = v
        return out


def evaluate(embeddings, logits, labels, num_classes: int, buckets=None, with_samples: bool = True) -> Report:
    """Full report on one evaluation set.  Class keys in the sample dicts are
    1-based to match the usual ``[L]`` labelling."""
    Z = np.asarray(embeddings, dtype=float)
    F = np.asarray(logits, dtype=float)
    y = np.asarray(labels, dtype=int)
    pred = F.argmax(axis=1)
    acc = per_class_accuracy(pred, y, num_classes)
    traces, _, counts = class_variance(Z, y, num_classes)
    bucket_acc = bucket_breakdown(acc, buckets) if buckets is not None else {}
    rep = Report(
        accuracy=float((pred == y).mean()),
        balanced_accuracy=float(acc.mean()),
        balanced_error=float(1.0 - acc.mean()),
        class_accuracy=acc.tolist(),
        bucket_accuracy=bucket_acc,
        auc=ovr_auc(F, y, num_classes),
        mean_trace_variance=float(np.nanmean(traces)),
        class_trace_variance=traces.tolist(),
    )
    if with_samples:
        has_norm = np.linalg.norm(Z, axis=1).max() > 0
        for c in range(num_classes):
            key = str(c + 1)
            g = margin_distribution(F, y, c)
            rep.margins[key] = g.tolist()
            rep.margin_hist[key] = histogram(g)
            if counts[c] >= 2 and has_norm:
                d = max_intra_class_distance(Z, y, c)
                rep.intra_distances[key] = d.tolist()
                rep.intra_hist[key] = histogram(d)
    return rep
