"""Principal component regression with cross-validated component count."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .datagen import Dataset
from .errors import ArgumentError, DegenerateInputError

RIDGE_FALLBACK = 1e-6


@dataclass
class PcrModel:
    center: np.ndarray
    loadings: np.ndarray
    intercept: float
    coef: np.ndarray
    family: str
    converged: bool = True
    ridge_fallback: bool = False

    @property
    def n_components(self):
        return self.loadings.shape[1]

    def project(self, X):
        return (np.atleast_2d(X) - self.center) @ self.loadings

    def linear_predictor(self, X):
        return self.intercept + self.project(X) @ self.coef


def _inverse_link(family, eta):
    if family == "bernoulli":
        return expit(eta)
    if family == "poisson":
        return np.exp(np.clip(eta, -700, 700))
    return eta


def _loglik(family, eta, y):
    if family == "bernoulli":
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    mu = np.exp(np.clip(eta, -700, 700))
    return float(np.sum(y * eta - mu))


def irls(Z, y, family, ridge=0.0, max_iter=100, tol=1e-8):
    """Newton/IRLS for logistic or Poisson regression; column 0 is the intercept.

    Returns ``(coef, converged, diverged)``.  Step halving keeps the
    penalized log-likelihood non-decreasing.
    """
    n, q = Z.shape
    pen = np.full(q, ridge)
    pen[0] = 0.0
    w = np.zeros(q)
    if family == "poisson":
        w[0] = np.log(max(y.mean(), 1e-8))

    def objective(v):
        return _loglik(family, Z @ v, y) - 0.5 * float(np.sum(pen * v * v))

    f = objective(w)
    for _ in range(max_iter):
        eta = Z @ w
        mu = _inverse_link(family, eta)
        W = mu * (1.0 - mu) if family == "bernoulli" else mu
        grad = Z.T @ (y - mu) - pen * w
        H = (Z * W[:, None]).T @ Z + np.diag(pen)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            return w, False, True
        if not np.all(np.isfinite(step)):
            return w, False, True
        t = 1.0
        while True:
            w_new = w + t * step
            f_new = objective(w_new)
            if np.isfinite(f_new) and f_new >= f - 1e-12 * abs(f):
                break
            t *= 0.5
            if t < 1e-10:
                return w, False, True
        change = np.linalg.norm(w_new - w) / max(np.linalg.norm(w), 1e-12)
        w, f = w_new, f_new
        if ridge == 0.0 and np.max(np.abs(Z @ w)) > 50.0:
            # fitted probabilities saturating: the data are (quasi-)separated
            return w, False, True
        if change < tol:
            return w, True, False
    return w, False, ridge == 0.0


def _fit_scores(scores, y, family):
    Z = np.hstack([np.ones((len(y), 1)), scores])
    if family == "gaussian":
        coef, *_ = np.linalg.lstsq(Z, y, rcond=None)
        return coef, True, False
    coef, ok, diverged = irls(Z, y, family)
    if diverged:
        coef, ok, _ = irls(Z, y, family, ridge=RIDGE_FALLBACK)
        return coef, ok, True
    return coef, ok, False


def _principal_directions(X):
    """Centering vector, principal directions and a mask of the directions
    with numerically nonzero variance."""
    center = X.mean(axis=0)
    _, s, Vt = np.linalg.svd(X - center, full_matrices=False)
    tol = s[0] * max(X.shape) * np.finfo(float).eps if s.size else 0.0
    return center, Vt.T, s > tol


def pcr_fit(data, c, family=None, _directions=None):
    """Fit a GLM on the top-``c`` principal component scores of ``data.X``."""
    family = family or data.family
    X, y = np.asarray(data.X, float), np.asarray(data.y, float)
    n, p = X.shape
    if not 1 <= c <= min(n - 1, p):
        raise ArgumentError(f"need 1 <= c <= {min(n - 1, p)}, got {c}")
    if family not in ("bernoulli", "poisson", "gaussian"):
        raise ArgumentError(f"unknown family {family!r}")
    center, V, active = _directions if _directions is not None else _principal_directions(X)
    loadings = V[:, :c]
    # round-off directions carry no variance; their scores are noise that a
    # scale-invariant GLM could still exploit, so they get a zero coefficient
    use = np.flatnonzero(active[:c])
    fitted, ok, fallback = _fit_scores((X - center) @ loadings[:, use], y, family)
    coef = np.zeros(c)
    coef[use] = fitted[1:]
    return PcrModel(center, loadings, float(fitted[0]), coef, family, ok, fallback)


def pcr_predict(model, x_test):
    x = np.asarray(x_test, dtype=float)
    if x.shape[-1] != model.center.shape[0]:
        raise ArgumentError(
            f"expected {model.center.shape[0]} covariates, got {x.shape[-1]}"
        )
    out = _inverse_link(model.family, model.linear_predictor(x))
    return float(out[0]) if x.ndim == 1 else out


def deviance(family, y, mu):
    y = np.asarray(y, float)
    if family == "bernoulli":
        mu = np.clip(mu, 1e-12, 1.0 - 1e-12)
        return float(np.mean(-2.0 * (y * np.log(mu) + (1.0 - y) * np.log1p(-mu))))
    if family == "poisson":
        mu = np.maximum(mu, 1e-12)
        ratio = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / mu), 0.0)
        return float(np.mean(2.0 * (ratio - (y - mu))))
    return float(np.mean((y - mu) ** 2))


def fold_indices(n, folds, seed):
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, folds)]


def cv_select(data, grid=range(1, 31), folds=5, family=None, seed=0):
    """Grid value with the smallest mean held-out deviance (ties -> smaller c)."""
    family = family or data.family
    X, y = np.asarray(data.X, float), np.asarray(data.y, float)
    n, p = X.shape
    if n < 2 * folds:
        raise DegenerateInputError(f"need at least {2 * folds} observations for {folds}-fold CV")
    parts = fold_indices(n, folds, seed)
    n_train_min = n - max(len(f) for f in parts)
    feasible = [int(c) for c in grid if 1 <= c <= min(n_train_min - 1, p)]
    if not feasible:
        raise ArgumentError("no feasible component count in the grid")
    losses = np.zeros(len(feasible))
    for test in parts:
        train = np.setdiff1d(np.arange(n), test)
        directions = _principal_directions(X[train])
        dtrain = Dataset(X[train], y[train], family)
        for i, c in enumerate(feasible):
            m = pcr_fit(dtrain, c, family, _directions=directions)
            losses[i] += deviance(family, y[test], pcr_predict(m, X[test]))
    return feasible[int(np.argmin(losses / folds))]


def pcr_cv_fit(data, grid=range(1, 31), folds=5, family=None, seed=0):
    c = cv_select(data, grid, folds, family, seed)
    return pcr_fit(data, c, family)
