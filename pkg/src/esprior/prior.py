"""Effective-spectral prior on beta and inverse-Gaussian prior on sigma^2.

The beta prior is ``exp(-0.5 * beta^T S_k^+ beta)`` restricted to the ball
``||beta||_2 <= R``, where ``S_k`` is the rank-k truncation of the empirical
covariance.  Densities are unnormalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, ConfigurationError, DomainError
from .spectral import LowRankCovariance

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class SpectralPrior:
    low_rank: LowRankCovariance
    radius: float

    def __post_init__(self):
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ArgumentError(f"radius must be finite and positive, got {self.radius}")

    @classmethod
    def from_low_rank(cls, low_rank, radius=None):
        """Default radius is ``10 * sqrt(trace(S_k))``."""
        if radius is None:
            radius = 10.0 * np.sqrt(max(low_rank.trace, np.finfo(float).tiny))
        return cls(low_rank, float(radius))

    @property
    def dim(self):
        return self.low_rank.dim

    def precision_apply(self, beta):
        return self.low_rank.pinv_apply(beta)

    def gaussian_log_normalizer(self):
        """Log normalizing constant of the (degenerate) Gaussian N(0, S_k)."""
        lam = self.low_rank.positive_eigenvalues
        return -0.5 * (np.sum(np.log(lam)) + len(lam) * LOG_2PI)


@dataclass(frozen=True)
class VariancePrior:
    """Inverse-Gaussian prior on sigma^2 with mean ``eta`` and shape ``xi``."""

    eta: float = 1.0
    xi: float = 1.0

    def __post_init__(self):
        if not (self.eta > 0 and self.xi > 0):
            raise ArgumentError("inverse-gaussian mean and shape must be positive")


def _check_dim(prior, beta):
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (prior.dim,):
        raise ArgumentError(f"beta must have shape ({prior.dim},), got {beta.shape}")
    return beta


def log_prior_beta(prior, beta, truncated=True):
    """``-0.5 beta^T S_k^+ beta`` inside the radius-R ball, ``-inf`` outside.

    With ``truncated=False`` the indicator is dropped (the Gaussian
    surrogate used during optimization).
    """
    beta = _check_dim(prior, beta)
    if truncated and np.linalg.norm(beta) > prior.radius:
        return -np.inf
    return -0.5 * prior.low_rank.pinv_quadratic(beta)


def grad_log_prior_beta(prior, beta):
    beta = _check_dim(prior, beta)
    if np.linalg.norm(beta) >= prior.radius:
        raise DomainError("gradient undefined on or outside the truncation sphere")
    return -prior.precision_apply(beta)


def sample_prior_beta(prior, rng, size=None, budget=2_000_000, batch=50_000):
    """Rejection sampler: Gaussian on the retained span, redrawn outside the ball.

    Raises ConfigurationError when the acceptance rate over ``budget``
    trials is below 1e-6.
    """
    lr = prior.low_rank
    if lr.pos_rank < 1:
        raise ConfigurationError("prior has no positive eigenvalues to sample from")
    n_out = 1 if size is None else int(size)
    sd = np.sqrt(lr.positive_eigenvalues)
    V = lr.positive_eigenvectors
    accepted = []
    n_acc = 0
    tried = 0
    while n_acc < n_out:
        if tried >= budget and n_acc / tried < 1e-6:
            raise ConfigurationError(
                f"prior acceptance rate below 1e-6 after {tried} trials; radius "
                f"{prior.radius:g} is too small for trace {lr.trace:g}"
            )
        m = min(batch, max(2 * (n_out - n_acc), 16))
        coef = rng.standard_normal((m, lr.pos_rank)) * sd
        # V has orthonormal columns, so ||V c|| = ||c||
        ok = np.linalg.norm(coef, axis=1) <= prior.radius
        tried += m
        if ok.any():
            accepted.append(coef[ok])
            n_acc += int(ok.sum())
    coef = np.vstack(accepted)[:n_out]
    out = coef @ V.T
    return out[0] if size is None else out


def log_prior_sigma2(vp, sigma2):
    """Inverse-Gaussian log density of sigma^2 (squared-deviation form)."""
    s2 = np.asarray(sigma2, dtype=float)
    if np.any(s2 <= 0):
        raise DomainError("sigma2 must be positive")
    eta, xi = vp.eta, vp.xi
    val = (
        0.5 * np.log(xi)
        - 0.5 * LOG_2PI
        - 1.5 * np.log(s2)
        - xi * (s2 - eta) ** 2 / (2.0 * eta * eta * s2)
    )
    return float(val) if val.ndim == 0 else val


def grad_log_prior_sigma2(vp, sigma2):
    s2 = float(sigma2)
    if s2 <= 0:
        raise DomainError("sigma2 must be positive")
    eta, xi = vp.eta, vp.xi
    return -1.5 / s2 - xi / (2.0 * eta * eta) * (1.0 - eta * eta / (s2 * s2))
