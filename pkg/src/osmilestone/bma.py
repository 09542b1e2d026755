"""Per-iteration model weights and the model-averaged posterior predictive."""

import json
import math
from dataclasses import dataclass

import numpy as np

from .models.base import PpdMatrix
from .stats import stream_key

WEIGHT_LABELS = ("T", "NT", "NL", "OS")


class WeightError(ValueError):
    pass


@dataclass
class BmaWeights:
    """``weights[t, q]`` is the weight of model ``labels[q]`` at iteration ``t``."""

    weights: np.ndarray
    labels: tuple
    prior_probs: np.ndarray
    log_g: np.ndarray

    @property
    def n_iter(self):
        return self.weights.shape[0]

    def mean(self):
        return dict(zip(self.labels, (float(v) for v in self.weights.mean(axis=0))))

    def column(self, label):
        if label not in self.labels:
            return np.zeros(self.n_iter)
        return self.weights[:, self.labels.index(label)]

    def to_csv(self, path):
        """Always writes all four submodel columns; absent models get weight 0."""
        cols = [self.column(lab) for lab in WEIGHT_LABELS]
        with open(path, "w") as fh:
            fh.write("iter," + ",".join(f"w_{lab}" for lab in WEIGHT_LABELS) + "\n")
            for t in range(self.n_iter):
                fh.write(f"{t}," + ",".join(repr(float(c[t])) for c in cols) + "\n")

    def summary(self):
        return {
            "mean_weights": {lab: float(self.column(lab).mean()) for lab in WEIGHT_LABELS},
            "models": list(self.labels),
            "prior_probs": [float(p) for p in self.prior_probs],
            "log_g": [float(g) for g in self.log_g],
            "n_iter": self.n_iter,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def plugin_log_g(matrix):
    """Log density of a normal fit to ``matrix`` (iterations x params), at its mean.

    That is ``-d/2 log(2 pi) - 1/2 log|Sigma|``; a small ridge keeps
    near-degenerate columns from producing an infinite value.
    """
    x = np.asarray(matrix, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    d = x.shape[1]
    if d == 0:
        return 0.0
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    ridge = 1e-12 * max(float(np.trace(cov)) / d, 1e-300)
    sign, logdet = np.linalg.slogdet(cov + ridge * np.eye(d))
    if sign <= 0:
        raise WeightError("posterior covariance is not positive definite")
    return -0.5 * d * math.log(2.0 * math.pi) - 0.5 * logdet


def compute_weights(loglik, logprior, log_g=None, prior_probs=None, labels=WEIGHT_LABELS):
    """Softmax over models of ``l_q + log pi_q + sum_{h != q} log g_h + log P(M_q)``.

    ``loglik`` and ``logprior`` are sequences of per-iteration arrays, one
    per model, all the same length.
    """
    ll = [np.asarray(v, dtype=float) for v in loglik]
    lp = [np.asarray(v, dtype=float) for v in logprior]
    q = len(ll)
    if q == 0 or len(lp) != q or len(labels) != q:
        raise WeightError("need one loglik and one logprior stream per model")
    n = ll[0].size
    if any(v.shape != (n,) for v in ll + lp):
        raise WeightError("every stream must have the same number of iterations")
    log_g = np.zeros(q) if log_g is None else np.asarray(log_g, dtype=float)
    prior_probs = np.full(q, 1.0 / q) if prior_probs is None else np.asarray(prior_probs, dtype=float)
    if log_g.shape != (q,) or prior_probs.shape != (q,):
        raise WeightError("log_g and prior_probs need one entry per model")
    if np.any(prior_probs < 0) or not math.isclose(prior_probs.sum(), 1.0, rel_tol=1e-9):
        raise WeightError("prior model probabilities must be nonnegative and sum to 1")
    others = log_g.sum() - log_g
    with np.errstate(divide="ignore"):
        logits = np.stack(ll, axis=1) + np.stack(lp, axis=1) + others + np.log(prior_probs)
    logits = np.where(np.isnan(logits), -np.inf, logits)
    top = logits.max(axis=1, keepdims=True)
    if np.any(~np.isfinite(top)):
        raise WeightError("an iteration has no model with finite weight")
    w = np.exp(logits - top)
    w /= w.sum(axis=1, keepdims=True)
    return BmaWeights(w, tuple(labels), prior_probs, log_g)


def model_streams(model, draws):
    """``(loglik, logprior, log_g)`` for one fitted submodel."""
    ll = model.os_conditional_loglik(draws)
    lp = model.log_prior_linked(draws)
    return ll, lp, plugin_log_g(model.linked_matrix(draws))


def weights_from_fits(fits, prior_probs=None):
    """``fits`` maps weight label -> (model, draws)."""
    labels = tuple(lab for lab in WEIGHT_LABELS if lab in fits)
    streams = [model_streams(*fits[lab]) for lab in labels]
    return compute_weights(
        [s[0] for s in streams], [s[1] for s in streams], [s[2] for s in streams], prior_probs, labels
    )


def bma_ppd(weights, ppds, seed):
    """Mixture realization: per iteration and subject, pick a model by its weight."""
    if len(ppds) != len(weights.labels):
        raise WeightError("need one PPD matrix per weighted model")
    ref = ppds[0]
    for p in ppds[1:]:
        if p.times.shape != ref.times.shape or list(p.subject_ids) != list(ref.subject_ids):
            raise WeightError("PPD matrices are not aligned on iterations and subjects")
    if ref.n_iter != weights.n_iter:
        raise WeightError("PPD iteration count differs from weight iteration count")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream_key("bma"),)))
    u = rng.random(ref.times.shape)
    cum = np.cumsum(weights.weights, axis=1)
    cum[:, -1] = 1.0
    pick = (u[:, :, None] >= cum[:, None, :]).sum(axis=2)
    # zero-weight models are never picked, even when u lands on a tie
    stack = np.stack([p.times for p in ppds])
    caps = np.stack([p.capped for p in ppds])
    it = np.arange(ref.n_iter)[:, None]
    sub = np.arange(ref.times.shape[1])[None, :]
    times = stack[pick, it, sub]
    capped = caps[pick, it, sub]
    return PpdMatrix(times, list(ref.subject_ids), ref.followup, capped)
