"""Posterior predictive summaries and evaluation metrics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import glm
from .errors import ArgumentError
from .vi import VariationalState, apply_factor, project_to_ball


@dataclass
class PredictiveSummary:
    mc_mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    confident: np.ndarray
    level: float = 0.95
    threshold: float = 0.5

    def __len__(self):
        return len(self.mc_mean)


def _states(model):
    return list(model) if isinstance(model, (list, tuple)) else [model]


def sample_linear_predictor(state, X, m, rng):
    """``m x n`` draws of ``X beta`` with ``beta ~ q``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    eps = rng.standard_normal((m, state.noise_dim))
    theta = state.mean + apply_factor(state, eps)
    Z = X if state.basis is None else X @ state.basis
    return theta @ Z.T


def predictive_matrix(model, spec, X, m, rng):
    """``m x n`` draws of ``g(x^T beta)``; a list of states is an equal mixture."""
    states = _states(model)
    counts = [m // len(states) + (i < m % len(states)) for i in range(len(states))]
    draws = [sample_linear_predictor(s, X, c, rng) for s, c in zip(states, counts) if c]
    return glm.link_eval(spec.link, np.vstack(draws))


def predictive_samples(state, spec, x_test, m, rng):
    if m < 1:
        raise ArgumentError("need at least one predictive sample")
    return predictive_matrix(state, spec, np.asarray(x_test, dtype=float)[None, :], m, rng)[:, 0]


def _nearest_rank(q, m):
    # tiny guard keeps e.g. 0.025 * 100 from rounding up past 2.5
    return max(1, math.ceil(q * m - 1e-9))


def interval(samples, level=0.95):
    """Nearest-rank ``(alpha/2, 1 - alpha/2)`` empirical quantiles along axis 0."""
    s = np.sort(np.asarray(samples, dtype=float), axis=0)
    m = s.shape[0]
    alpha = 1.0 - level
    if not 0.0 < level < 1.0:
        raise ArgumentError("level must lie in (0, 1)")
    if alpha / 2.0 * m < 1.0 - 1e-9:
        raise ArgumentError(f"need at least {math.ceil(2.0 / alpha - 1e-9)} samples for level {level}")
    lo = _nearest_rank(alpha / 2.0, m)
    hi = _nearest_rank(1.0 - alpha / 2.0, m)
    if s.ndim == 1:
        return float(s[lo - 1]), float(s[hi - 1])
    return s[lo - 1], s[hi - 1]


def summarize(model, spec, X, m=1000, rng=None, level=0.95, threshold=0.5):
    rng = np.random.default_rng(0) if rng is None else rng
    draws = predictive_matrix(model, spec, X, m, rng)
    lower, upper = interval(draws, level)
    confident = (lower > threshold) | (upper < threshold)
    return PredictiveSummary(draws.mean(axis=0), lower, upper, confident, level, threshold)


@dataclass
class MetricsReport:
    task: str
    metrics: dict
    counts: dict = field(default_factory=dict)

    def to_dict(self):
        return {"task": self.task, "metrics": dict(self.metrics), "counts": dict(self.counts)}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


CLASSIFICATION_METRICS = ("zero_one_loss", "auc", "um", "cc")
REGRESSION_METRICS = ("rmse", "cp", "al")


def auc_score(scores, labels):
    """Mann-Whitney AUC with half credit for ties; ``None`` for a single class."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)  # average ranks; sums of half-integers are exact
    u = float(ranks[pos].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def classification_metrics(summaries, y_true, threshold=0.5):
    y = np.asarray(y_true, dtype=float)
    if len(y) != len(summaries):
        raise ArgumentError("summaries and labels differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise ArgumentError("labels must be 0 or 1")
    pred = (summaries.mc_mean > threshold).astype(float)
    correct = pred == y
    wrong = ~correct
    conf = np.asarray(summaries.confident, dtype=bool)
    counts = {
        "n": int(len(y)),
        "positives": int(y.sum()),
        "negatives": int(len(y) - y.sum()),
        "misclassified": int(wrong.sum()),
        "unconfident_misclassified": int((wrong & ~conf).sum()),
        "confident_misclassified": int((wrong & conf).sum()),
        "confident": int(conf.sum()),
        "confident_correct": int((correct & conf).sum()),
    }
    metrics = {
        "zero_one_loss": counts["misclassified"] / counts["n"],
        "auc": auc_score(summaries.mc_mean, y),
        "um": counts["unconfident_misclassified"] / counts["misclassified"]
        if counts["misclassified"]
        else None,
        "cc": counts["confident_correct"] / counts["confident"] if counts["confident"] else None,
    }
    return MetricsReport("classification", metrics, counts)


def regression_metrics(summaries, g_true):
    g = np.asarray(g_true, dtype=float)
    if len(g) == 0:
        raise ArgumentError("empty evaluation set")
    if len(g) != len(summaries):
        raise ArgumentError("summaries and truth differ in length")
    inside = (summaries.lower <= g) & (g <= summaries.upper)
    metrics = {
        "rmse": float(np.sqrt(np.mean((summaries.mc_mean - g) ** 2))),
        "cp": float(inside.mean()),
        "al": float(np.mean(summaries.upper - summaries.lower)),
    }
    return MetricsReport("regression", metrics, {"n": int(len(g)), "covered": int(inside.sum())})


def excess_risk(estimate, spec, true_beta, X_test, radius=np.inf):
    """Empirical ``L2(P_X)`` distance between fitted and oracle mean functions.

    ``estimate`` is a coefficient vector or a VariationalState, whose
    projected mean is used.
    """
    if isinstance(estimate, VariationalState):
        estimate = project_to_ball(estimate.beta_mean(), radius)
    beta_hat = np.asarray(estimate, dtype=float)
    X_test = np.asarray(X_test, dtype=float)
    diff = glm.link_eval(spec.link, X_test @ beta_hat) - glm.link_eval(spec.link, X_test @ true_beta)
    return float(np.sqrt(np.mean(diff * diff)))



def point_metrics(pred, target, task):
    """Metrics for a method that emits point predictions only (no intervals).

    Interval-based entries are reported as ``None`` so the report keeps
    the same keys as the Bayesian one.
    """
    pred = np.asarray(pred, dtype=float)
    t = np.asarray(target, dtype=float)
    if len(pred) != len(t) or len(t) == 0:
        raise ArgumentError("predictions and targets must be non-empty and of equal length")
    if task == "classification":
        if not np.all((t == 0) | (t == 1)):
            raise ArgumentError("labels must be 0 or 1")
        wrong = int(np.sum((pred > 0.5).astype(float) != t))
        counts = {"n": int(len(t)), "positives": int(t.sum()), "negatives": int(len(t) - t.sum()),
                  "misclassified": wrong}
        metrics = {"zero_one_loss": wrong / len(t), "auc": auc_score(pred, t), "um": None, "cc": None}
        return MetricsReport(task, metrics, counts)
    if task == "regression":
        metrics = {"rmse": float(np.sqrt(np.mean((pred - t) ** 2))), "cp": None, "al": None}
        return MetricsReport(task, metrics, {"n": int(len(t))})
    raise ArgumentError(f"unknown task {task!r}")


def task_for(spec):
    return "classification" if spec.family.kind == "bernoulli" else "regression"
