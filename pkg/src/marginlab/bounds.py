"""Numerical checks of the pull/push lower bounds, the Gaussian AUC formula,
the loss-variance lemmas and the generalisation bound.

Deterministic inequalities return a :class:`BoundCheckRecord`; the suite
runner at the bottom draws random instances from a master seed so that each
trial can be reproduced from ``(seed, trial)`` alone.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import log1p, ndtr

from . import losses
from .data import ClassGaussianSpec, gaussian_mixture_counts, gaussian_mixture_lt
from .metrics import class_variance, ovr_auc
from .scorer import bayes_gaussian_head, softmax

SLACK_TOL = 1e-9


@dataclass
class BoundConfig:
    B: float = 1.0
    delta: float = 0.05
    trials: int = 1000
    max_dim: int = 8
    max_class_size: int = 20
    max_classes: int = 4
    eval_size: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not (math.isfinite(self.B) and self.B > 0):
            raise ValueError("B must be positive and finite")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass
class BoundCheckRecord:
    check: str
    instance: dict
    lhs: float
    rhs: float
    tolerance: float = SLACK_TOL
    slack: float = field(init=False)
    passed: bool = field(init=False)

    def __post_init__(self):
        self.slack = float(self.rhs - self.lhs)
        self.passed = bool(self.slack >= -self.tolerance)

    def to_dict(self) -> dict:
        return asdict(self)


# -- deterministic identities and inequalities ------------------------------------


def variance_identity_check(embeddings) -> float:
    """Relative gap in ``(1/n^2) sum_{x,x'} ||z - z'||^2 = (2/n) sum_x ||z - mean||^2``.

    The left side is a plain double loop so it stays independent of the
    vectorised variance code it is compared with.
    """
    Z = np.atleast_2d(np.asarray(embeddings, dtype=float))
    n = Z.shape[0]
    lhs = 0.0
    for i in range(n):
        diff = Z[i] - Z
        lhs += float(np.sum(diff * diff))
    lhs /= n * n
    mu = Z.mean(axis=0)
    rhs = 2.0 / n * float(np.sum((Z - mu) ** 2))
    return abs(lhs - rhs) / max(abs(lhs), 1.0)


def pull_bound_check(class_embeddings, alpha: float) -> BoundCheckRecord:
    """``(2n/(n-1)) tr V - alpha + log(n-1) <= mean_x pull(x)`` for one class."""
    Z = np.atleast_2d(np.asarray(class_embeddings, dtype=float))
    n, K = Z.shape
    if n < 2:
        raise ValueError("the pull bound needs at least two samples in the class")
    trace_var = float(((Z - Z.mean(axis=0)) ** 2).sum(axis=1).mean())
    lhs = 2.0 * n / (n - 1) * trace_var - alpha + math.log(n - 1)
    values, _ = losses.pull_reg(Z, np.zeros(n, dtype=int), np.array([alpha]))
    return BoundCheckRecord("pull_bound", {"n": n, "K": K, "alpha": float(alpha)}, lhs, float(values.mean()))


def push_lower_bound(embeddings, labels, beta: float, cls: int) -> float:
    Z = np.asarray(embeddings, dtype=float)
    y = np.asarray(labels, dtype=int)
    L = int(y.max()) + 1
    traces, centroids, counts = class_variance(Z, y, L)
    n_neg = int(counts.sum() - counts[cls])
    total = 0.0
    for c in range(L):
        if c == cls or counts[c] == 0:
            continue
        gap = float(np.sum((centroids[cls] - centroids[c]) ** 2))
        total += counts[c] / n_neg * (traces[cls] + traces[c] + gap)
    return -total + beta + math.log(n_neg)


def push_bound_check(embeddings, labels, beta, cls: int) -> BoundCheckRecord:
    """Empirical lower bound on the class-average push regulariser of ``cls``."""
    Z = np.asarray(embeddings, dtype=float)
    y = np.asarray(labels, dtype=int)
    present = np.unique(y)
    if present.size < 2 or cls not in present:
        raise ValueError("push bound needs the class and at least one other class")
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (int(y.max()) + 1,))
    lhs = push_lower_bound(Z, y, float(beta[cls]), cls)
    values, _ = losses.push_reg(Z, y, beta)
    rhs = float(values[y == cls].mean())
    inst = {"N": int(Z.shape[0]), "K": int(Z.shape[1]), "classes": int(present.size),
            "class": int(cls), "beta": float(beta[cls])}
    return BoundCheckRecord("push_bound", inst, lhs, rhs)


def hard_vs_soft_pull_check(embeddings, labels, alpha) -> BoundCheckRecord:
    """Hinge pull must sit strictly below the soft pull at every anchor with a
    same-class partner; records the smallest gap.

    Once the hinge exceeds about 36 the soft excess ``log(1 + e^-h)`` drops
    below double resolution, so there only ``soft >= hard`` is required.
    """
    y = np.asarray(labels, dtype=int)
    soft, _ = losses.pull_reg(embeddings, y, alpha)
    hard = losses.hard_pull(embeddings, y, alpha)
    has_partner = np.bincount(y)[y] >= 2
    gap = (soft - hard)[has_partner]
    representable = hard[has_partner] < 36.0
    gap_min = float(gap.min()) if gap.size else math.inf
    rec = BoundCheckRecord("hard_below_soft_pull", {"N": int(y.size)}, 0.0, gap_min, tolerance=0.0)
    rec.passed = bool(np.all(gap >= 0) and np.all(gap[representable] > 0))
    return rec


# -- Gaussian one-vs-rest AUC ------------------------------------------------------


def gaussian_auc_closed_form(W, spec: ClassGaussianSpec) -> float:
    """One-vs-rest AUC of the linear scores ``w_y . z`` under isotropic Gaussian
    classes, with the complement of ``y`` a uniform mixture of the other classes.

    Each ordered pair contributes ``Psi(w_y . (mu_y - mu_y') / (||w_y|| sqrt(s_y + s_y')))``.
    """
    W = np.asarray(W, dtype=float)
    L = spec.num_classes
    norms = np.linalg.norm(W, axis=0)
    if np.any(norms == 0):
        raise ValueError("zero-norm class weight vector")
    total = 0.0
    for y in range(L):
        for yp in range(L):
            if yp == y:
                continue
            num = W[:, y] @ (spec.means[y] - spec.means[yp])
            den = norms[y] * math.sqrt(spec.variances[y] + spec.variances[yp])
            total += float(ndtr(num / den))
    return total / (L * (L - 1))


def gaussian_auc_monte_carlo(W, spec: ClassGaussianSpec, n: int = 1_000_000, seed: int = 0) -> float:
    """Empirical one-vs-rest AUC from ``n`` samples split equally over classes."""
    L = spec.num_classes
    per = n // L
    data = gaussian_mixture_counts(spec, np.full(L, per), seed=seed)
    return ovr_auc(data.inputs @ np.asarray(W, dtype=float), data.labels, L)


# -- concentration ---------------------------------------------------------------


def bennett_bound(samples, B: float, delta: float) -> float:
    """Empirical-Bernstein upper confidence bound on ``E[Z]`` for ``Z`` in ``[0, B]``.

    ``mean + sqrt(2 V ln(2/delta) / n) + 7 B ln(2/delta) / (3 (n - 1))`` with
    ``V`` the unbiased sample variance.
    """
    z = np.asarray(samples, dtype=float)
    n = z.size
    if n < 2:
        raise ValueError("need at least two samples")
    if np.any(z < 0) or np.any(z > B):
        raise ValueError("samples must lie in [0, B]")
    log_term = math.log(2.0 / delta)
    var = float(z.var(ddof=1))
    return float(z.mean() + math.sqrt(2.0 * var * log_term / n) + 7.0 * B * log_term / (3.0 * (n - 1)))


def bennett_coverage(trials: int = 10_000, n: int = 50, delta: float = 0.05, seed: int = 0) -> float:
    """Fraction of uniform[0, 1] trials whose bound covers the true mean 1/2."""
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(trials):
        hits += bennett_bound(rng.random(n), 1.0, delta) >= 0.5
    return hits / trials


# -- loss variance lemmas ----------------------------------------------------------


def log_loss(y, f):
    """``log(1 + exp(-y f))`` computed stably."""
    m = -np.asarray(y, dtype=float) * np.asarray(f, dtype=float)
    return np.maximum(m, 0.0) + log1p(np.exp(-np.abs(m)))


@dataclass
class VarianceChain:
    cls: int
    var_log: float
    var_lin: float
    quad_form: float
    trace_bound: float

    def holds(self, tol: float = SLACK_TOL, eq_tol: float = 1e-10) -> bool:
        eq_gap = abs(self.var_lin - self.quad_form) / max(abs(self.quad_form), 1.0)
        return (self.var_log <= self.var_lin + tol and eq_gap <= eq_tol
                and self.quad_form <= self.trace_bound + tol)


def loss_variance_lemma_check(embeddings, labels, w, b: float = 0.0, shifts=None) -> list[VarianceChain]:
    """Per-class ``V[log loss] <= V[linear loss] = w' C w <= ||w||^2 tr C``.

    Labels are in ``{-1, +1}``; ``shifts`` maps each label to its additive
    logit adjustment.  All variances use the biased empirical convention.
    """
    Z = np.asarray(embeddings, dtype=float)
    y = np.asarray(labels, dtype=int)
    w = np.asarray(w, dtype=float)
    shifts = shifts or {-1: 0.0, 1: 0.0}
    out = []
    for c in (-1, 1):
        S = Z[y == c]
        if S.shape[0] < 2:
            raise ValueError(f"class {c} needs at least two samples")
        f = S @ w + b + shifts[c]
        C = np.cov(S, rowvar=False, bias=True).reshape(Z.shape[1], Z.shape[1])
        out.append(VarianceChain(
            cls=c,
            var_log=float(np.var(log_loss(c, f))),
            var_lin=float(np.var(-c * f)),
            quad_form=float(w @ C @ w),
            trace_bound=float(w @ w * np.trace(C)),
        ))
    return out


# -- generalisation bound ----------------------------------------------------------


def gen_bound_rhs(train_emb, train_labels, w, b, shifts, alphas, priors, B: float, delta: float) -> dict:
    """Right-hand side of the pull-based generalisation bound and its terms.

    ``shifts``, ``alphas`` and ``priors`` are dicts keyed by ``-1`` and ``+1``.
    """
    Z = np.asarray(train_emb, dtype=float)
    y = np.asarray(train_labels, dtype=int)
    w = np.asarray(w, dtype=float)
    log_term = math.log(2.0 / delta)
    bennett_term, empirical, inside = 0.0, 0.0, 0.0
    for c in (-1, 1):
        S = Z[y == c]
        n = S.shape[0]
        if n < 2:
            raise ValueError(f"class {c} needs at least two training samples")
        losses_c = log_loss(c, S @ w + b + shifts[c])
        pull, _ = losses.pull_reg(S, np.zeros(n, dtype=int), np.array([alphas[c]]))
        bennett_term += priors[c] / (n - 1)
        empirical += priors[c] * float(losses_c.mean())
        inside += priors[c] / n * (float(pull.mean()) + alphas[c])
    bennett_term *= 7.0 * B * log_term / 3.0
    variance_term = float(np.linalg.norm(w)) * math.sqrt(log_term * inside)
    return {"bennett": bennett_term, "empirical": empirical, "variance": variance_term,
            "total": bennett_term + empirical + variance_term}


def gen_bound_check(train_emb, train_labels, eval_emb, eval_labels, w, b, shifts, alphas, priors,
                    delta: float, B: float | None = None) -> BoundCheckRecord:
    """Population loss (estimated on a large fresh split) against the bound.

    With ``B=None`` the loss bound is set to 1.01 times the largest loss seen
    on either split.
    """
    w = np.asarray(w, dtype=float)
    Ze, ye = np.asarray(eval_emb, dtype=float), np.asarray(eval_labels, dtype=int)
    if not set(np.unique(ye)) >= {-1, 1}:
        raise ValueError("both classes must appear in the evaluation split")
    shift_e = np.where(ye == 1, shifts[1], shifts[-1])
    eval_losses = log_loss(ye, Ze @ w + b + shift_e)
    if B is None:
        Zt, yt = np.asarray(train_emb, dtype=float), np.asarray(train_labels, dtype=int)
        train_losses = log_loss(yt, Zt @ w + b + np.where(yt == 1, shifts[1], shifts[-1]))
        B = 1.01 * float(max(eval_losses.max(), train_losses.max()))
    terms = gen_bound_rhs(train_emb, train_labels, w, b, shifts, alphas, priors, B, delta)
    inst = {"n_train": int(len(train_labels)), "n_eval": int(len(ye)), "B": B, "delta": delta, **terms}
    return BoundCheckRecord("gen_bound", inst, float(eval_losses.mean()), terms["total"])


# -- Bayes realisability -----------------------------------------------------------


def bayes_logistic_realizability_check(spec: ClassGaussianSpec, n: int = 100, seed: int = 0) -> float:
    """Largest gap between the softmax of the Bayes affine head and the direct
    Bayes-rule posterior on ``n`` points drawn from ``spec``."""
    if not np.allclose(spec.variances, spec.variances[0], rtol=0, atol=0):
        raise ValueError("the affine head is exact only for a shared variance")
    W, b = bayes_gaussian_head(spec.means, spec.variances, spec.priors)
    X = gaussian_mixture_lt(spec, n, seed=seed).inputs
    return float(np.abs(softmax(X @ W + b) - spec.posterior(X)).max())


# -- suite -------------------------------------------------------------------------

DETERMINISTIC_CHECKS = ("variance_identity", "pull_bound", "push_bound", "variance_chain",
                        "hard_below_soft_pull", "dro_lt_forms", "gaussian_penalty_center",
                        "bayes_realizability")


def trial_rng(seed: int, check: str, trial: int) -> np.random.Generator:
    key = sum(ord(ch) * 31 ** i for i, ch in enumerate(check)) % (2 ** 32)
    return np.random.default_rng([seed, key, trial])


def _random_embeddings(rng, cfg: BoundConfig, min_classes: int = 1):
    K = int(rng.integers(1, cfg.max_dim + 1))
    L = int(rng.integers(min_classes, cfg.max_classes + 1))
    sizes = rng.integers(2, cfg.max_class_size + 1, size=L)
    y = np.repeat(np.arange(L), sizes)
    scale = rng.uniform(0.05, 2.0)
    Z = scale * rng.standard_normal((y.size, K)) + rng.normal(0, 2, size=(L, K))[y]
    return Z, y


def run_trial(check: str, seed: int, trial: int, cfg: BoundConfig) -> list[BoundCheckRecord]:
    rng = trial_rng(seed, check, trial)
    if check == "variance_identity":
        n, K = int(rng.integers(1, 60)), int(rng.integers(1, 9))
        Z = rng.normal(0, rng.uniform(0.1, 5), size=(n, K)) + rng.normal(0, 3, size=K)
        return [BoundCheckRecord(check, {"n": n, "K": K}, variance_identity_check(Z), 1e-12, tolerance=0.0)]
    if check == "pull_bound":
        n, K = int(rng.integers(2, cfg.max_class_size + 1)), int(rng.integers(1, cfg.max_dim + 1))
        Z = rng.normal(0, rng.uniform(0.05, 2.0), size=(n, K))
        return [pull_bound_check(Z, float(rng.uniform(0, 5)))]
    if check == "push_bound":
        Z, y = _random_embeddings(rng, cfg, min_classes=2)
        L = int(y.max()) + 1
        beta = rng.uniform(0, 5, size=L)
        return [push_bound_check(Z, y, beta, c) for c in range(L)]
    if check == "variance_chain":
        K = int(rng.integers(1, cfg.max_dim + 1))
        n = int(rng.integers(4, 2 * cfg.max_class_size + 1))
        y = np.where(np.arange(n) % 2 == 0, 1, -1)
        Z = rng.normal(0, rng.uniform(0.1, 3), size=(n, K)) + np.outer(y, rng.normal(0, 1, K))
        w = rng.normal(0, rng.uniform(0.1, 3), size=K)
        shifts = {-1: float(rng.normal()), 1: float(rng.normal())}
        recs = []
        for ch in loss_variance_lemma_check(Z, y, w, float(rng.normal()), shifts):
            inst = {"n": n, "K": K, "class": ch.cls}
            recs.append(BoundCheckRecord("var_log_le_var_lin", inst, ch.var_log, ch.var_lin))
            eq = abs(ch.var_lin - ch.quad_form) / max(abs(ch.quad_form), 1.0)
            recs.append(BoundCheckRecord("var_lin_eq_quad_form", inst, eq, 1e-10, tolerance=0.0))
            recs.append(BoundCheckRecord("quad_form_le_trace", inst, ch.quad_form, ch.trace_bound))
        return recs
    if check == "hard_below_soft_pull":
        Z, y = _random_embeddings(rng, cfg)
        alpha = rng.uniform(0, 5, size=int(y.max()) + 1)
        return [hard_vs_soft_pull_check(Z, y, alpha)]
    if check == "dro_lt_forms":
        Z, y = _random_embeddings(rng, cfg)
        eps = rng.uniform(0, 3, size=int(y.max()) + 1)
        a, _ = losses.dro_lt_reg(Z, y, eps)
        b = losses.dro_lt_simplified(Z, y, eps)
        rel = float(np.max(np.abs(a - b) / np.maximum(np.abs(a), 1.0)))
        return [BoundCheckRecord(check, {"N": int(y.size)}, rel, 1e-10, tolerance=0.0)]
    if check == "gaussian_penalty_center":
        Z, y = _random_embeddings(rng, cfg)
        s2 = float(rng.uniform(0.1, 10))
        mu = losses.batch_centroids(Z, y, int(y.max()) + 1)
        pen = losses.gaussian_xent_penalty(Z, y, mu, s2)
        cen, _ = losses.center_loss(Z, y, mu)
        const = 0.5 * Z.shape[1] * math.log(2 * math.pi * s2)
        recovered = (pen - const) * 2.0 * s2
        rel = float(np.max(np.abs(recovered - cen) / np.maximum(np.abs(cen), 1.0)))
        return [BoundCheckRecord(check, {"N": int(y.size), "s2": s2}, rel, 1e-12, tolerance=0.0)]
    if check == "bayes_realizability":
        L, K = int(rng.integers(2, cfg.max_classes + 1)), int(rng.integers(1, cfg.max_dim + 1))
        priors = rng.dirichlet(np.ones(L))
        spec = ClassGaussianSpec(rng.normal(0, 2, size=(L, K)), np.full(L, rng.uniform(0.2, 3)), priors)
        err = bayes_logistic_realizability_check(spec, n=100, seed=int(rng.integers(2 ** 31)))
        return [BoundCheckRecord(check, {"L": L, "K": K}, err, 1e-10, tolerance=0.0)]
    raise KeyError(check)


def gen_bound_trial(seed: int, trial: int, cfg: BoundConfig, n_train: int = 200) -> BoundCheckRecord:
    """One draw of binary Gaussian data with a scorer fixed before sampling."""
    rng = trial_rng(seed, "gen_bound", trial)
    K = int(rng.integers(1, 5))
    p_pos = float(rng.uniform(0.1, 0.5))
    mu = rng.normal(0, 1, size=(2, K))
    spec = ClassGaussianSpec(mu, np.full(2, rng.uniform(0.3, 2.0)), [1 - p_pos, p_pos])
    w = rng.normal(0, 1, size=K)
    b = float(rng.normal(0, 0.5))
    shift = math.log(p_pos / (1 - p_pos))
    shifts = {1: shift, -1: shift}
    alphas = {-1: 1 - p_pos, 1: p_pos}
    priors = {-1: 1 - p_pos, 1: p_pos}
    draw = int(rng.integers(2 ** 31))
    train = gaussian_mixture_lt(spec, n_train, seed=draw)
    while np.bincount(train.labels, minlength=2).min() < 2:
        draw += 1
        train = gaussian_mixture_lt(spec, n_train, seed=draw)
    test = gaussian_mixture_lt(spec, cfg.eval_size, seed=draw + 7919)
    to_pm = lambda lab: np.where(lab == 1, 1, -1)
    return gen_bound_check(train.inputs, to_pm(train.labels), test.inputs, to_pm(test.labels),
                           w, b, shifts, alphas, priors, cfg.delta)


def auc_trial(seed: int, trial: int, n_mc: int = 1_000_000) -> dict:
    rng = trial_rng(seed, "gaussian_auc", trial)
    L, K = int(rng.integers(2, 5)), int(rng.integers(1, 5))
    spec = ClassGaussianSpec(rng.normal(0, 1.5, size=(L, K)), rng.uniform(0.3, 2.0, size=L), np.full(L, 1 / L))
    W = rng.normal(0, 1, size=(K, L))
    closed = gaussian_auc_closed_form(W, spec)
    mc = gaussian_auc_monte_carlo(W, spec, n=n_mc, seed=int(rng.integers(2 ** 31)))
    return {"L": L, "K": K, "closed_form": closed, "monte_carlo": mc, "gap": abs(closed - mc)}


@dataclass
class SuiteResult:
    records: list[BoundCheckRecord]
    coverage: dict
    auc: list[dict]

    @property
    def deterministic_failures(self) -> list[BoundCheckRecord]:
        return [r for r in self.records if r.check != "gen_bound" and not r.passed]

    @property
    def passed(self) -> bool:
        auc_ok = all(a["gap"] < AUC_TOL for a in self.auc)
        return not self.deterministic_failures and auc_ok and all(c["passed"] for c in self.coverage.values())

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "coverage": self.coverage,
            "auc": self.auc,
            "failures": [r.to_dict() for r in self.deterministic_failures],
            "records": [r.to_dict() for r in self.records],
        }


AUC_TOL = 3e-3


def coverage_summary(hits: int, trials: int, delta: float) -> dict:
    """Coverage passes when misses stay within ``delta`` plus three binomial sigmas."""
    allowed = delta + 3.0 * math.sqrt(delta * (1 - delta) / trials)
    rate = hits / trials
    return {"trials": trials, "covered": hits, "rate": rate, "required": 1.0 - allowed,
            "passed": bool(rate >= 1.0 - allowed)}


def run_suite(seed: int = 0, trials: int = 1000, cfg: BoundConfig | None = None, checks=DETERMINISTIC_CHECKS,
              auc_trials: int = 10, auc_samples: int = 1_000_000, bennett_n: int = 50, map_fn=map) -> SuiteResult:
    """Run every check ``trials`` times.

    ``map_fn`` may be an executor's ``map``; results keep trial order either way.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    cfg = cfg or BoundConfig(trials=trials, seed=seed)
    jobs = [(c, t) for c in checks for t in range(trials)]
    records = [r for batch in map_fn(lambda job: run_trial(job[0], seed, job[1], cfg), jobs) for r in batch]

    gen = list(map_fn(lambda t: gen_bound_trial(seed, t, cfg), range(trials)))
    records += gen
    rng = trial_rng(seed, "bennett", 0)
    bennett_hits = sum(bennett_bound(rng.random(bennett_n), 1.0, cfg.delta) >= 0.5 for _ in range(trials))
    coverage = {
        "bennett": coverage_summary(int(bennett_hits), trials, cfg.delta),
        "gen_bound": coverage_summary(sum(r.passed for r in gen), trials, cfg.delta),
    }
    auc = list(map_fn(lambda t: auc_trial(seed, t, auc_samples), range(min(auc_trials, trials))))
    return SuiteResult(records, coverage, auc)
