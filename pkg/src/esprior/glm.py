"""Link functions and exponential-family likelihoods.

All functions are vectorized over numpy arrays.  ``score_eta`` is the
derivative of the per-observation log density with respect to the linear
predictor ``eta = x^T beta`` and is what the variational gradients consume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln, log_expit

from .errors import ArgumentError, DataError, DomainError

LINKS = ("identity", "logistic", "softplus", "bexp")
FAMILIES = ("bernoulli", "poisson", "gaussian")


@dataclass(frozen=True)
class LinkFunction:
    kind: str
    cap: float = 1e3  # only used by the bounded-exponential link

    def __post_init__(self):
        if self.kind not in LINKS:
            raise ArgumentError(f"unknown link {self.kind!r}; choose from {LINKS}")
        if self.kind == "bexp" and not self.cap > 0:
            raise ArgumentError("bounded-exponential cap must be positive")

    @property
    def lipschitz(self):
        return {"identity": 1.0, "logistic": 0.25, "softplus": 1.0}.get(
            self.kind, self.cap / 4.0
        )

    @property
    def range(self):
        """Open interval containing the image of the link."""
        if self.kind == "identity":
            return (-np.inf, np.inf)
        if self.kind == "logistic":
            return (0.0, 1.0)
        if self.kind == "softplus":
            return (0.0, np.inf)
        return (0.0, self.cap)


@dataclass(frozen=True)
class FamilyMember:
    """``sigma2`` is the fixed Gaussian variance; ``None`` with
    ``unknown_variance`` marks the two-parameter Gaussian model."""

    kind: str
    sigma2: float | None = None
    unknown_variance: bool = False

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise ArgumentError(f"unknown family {self.kind!r}; choose from {FAMILIES}")
        if self.kind == "gaussian" and not self.unknown_variance:
            s2 = 1.0 if self.sigma2 is None else float(self.sigma2)
            if not s2 > 0:
                raise ArgumentError("gaussian variance must be positive")
            object.__setattr__(self, "sigma2", s2)
        if self.unknown_variance and self.kind != "gaussian":
            raise ArgumentError("unknown variance is only defined for the gaussian family")


@dataclass(frozen=True)
class GlmSpec:
    link: LinkFunction
    family: FamilyMember

    def __post_init__(self):
        lo, hi = self.link.range
        if self.family.kind == "bernoulli" and not (lo >= 0.0 and hi <= 1.0):
            raise ArgumentError(f"bernoulli needs a link into (0,1), got {self.link.kind}")
        if self.family.kind == "poisson" and not lo >= 0.0:
            raise ArgumentError(f"poisson needs a positive link, got {self.link.kind}")

    @property
    def two_parameter(self):
        return self.family.unknown_variance

    def to_dict(self):
        return {
            "link": self.link.kind,
            "cap": self.link.cap,
            "family": self.family.kind,
            "sigma2": self.family.sigma2,
            "unknown_variance": self.family.unknown_variance,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            LinkFunction(d["link"], d.get("cap", 1e3)),
            FamilyMember(d["family"], d.get("sigma2"), d.get("unknown_variance", False)),
        )


def make_spec(family, link, sigma2=None, unknown_variance=False, cap=1e3):
    return GlmSpec(LinkFunction(link, cap), FamilyMember(family, sigma2, unknown_variance))


def link_eval(link, r):
    r = np.asarray(r, dtype=float)
    if link.kind == "identity":
        return r.copy() if r.ndim else float(r)
    if link.kind == "logistic":
        return expit(r)
    if link.kind == "softplus":
        return np.logaddexp(0.0, r)
    return link.cap * expit(r - np.log(link.cap))


def link_deriv(link, r):
    r = np.asarray(r, dtype=float)
    if link.kind == "identity":
        return np.ones_like(r)
    if link.kind == "logistic":
        s = expit(r)
        return s * (1.0 - s)
    if link.kind == "softplus":
        return expit(r)
    s = expit(r - np.log(link.cap))
    return link.cap * s * (1.0 - s)


def _log_link(link, r):
    """log g(r) for positive links, computed without cancellation."""
    if link.kind == "logistic":
        return log_expit(r)
    if link.kind == "bexp":
        return np.log(link.cap) + log_expit(r - np.log(link.cap))
    g = link_eval(link, r)
    return np.log(g)


def _resolve_sigma2(spec, sigma2):
    if spec.family.kind != "gaussian":
        return None
    if spec.family.unknown_variance:
        if sigma2 is None:
            raise ArgumentError("sigma2 is required for the unknown-variance gaussian model")
    else:
        sigma2 = spec.family.sigma2 if sigma2 is None else sigma2
    if not sigma2 > 0:
        raise DomainError("sigma2 must be positive")
    return float(sigma2)


def validate_response(spec, y):
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DataError("response contains non-finite values")
    if spec.family.kind == "bernoulli" and not np.all((y == 0) | (y == 1)):
        raise DataError("bernoulli responses must be 0 or 1")
    if spec.family.kind == "poisson" and not np.all((y >= 0) & (y == np.round(y))):
        raise DataError("poisson responses must be non-negative integers")
    return y


def log_likelihood_terms(spec, eta, y, sigma2=None, check=True):
    """Per-observation log densities."""
    eta = np.asarray(eta, dtype=float)
    y = validate_response(spec, y) if check else np.asarray(y, dtype=float)
    if eta.shape != y.shape:
        raise ArgumentError(f"eta and y shapes differ: {eta.shape} vs {y.shape}")
    kind = spec.family.kind
    link = spec.link
    if kind == "bernoulli":
        if link.kind == "logistic":
            return y * log_expit(eta) + (1.0 - y) * log_expit(-eta)
        g = link_eval(link, eta)
        return y * np.log(g) + (1.0 - y) * np.log1p(-g)
    if kind == "poisson":
        g = link_eval(link, eta)
        if np.any(g <= 0):
            raise DomainError("poisson mean must be positive")
        return y * _log_link(link, eta) - g - gammaln(y + 1.0)
    s2 = _resolve_sigma2(spec, sigma2)
    resid = y - link_eval(link, eta)
    return -0.5 * np.log(2.0 * np.pi * s2) - 0.5 * resid * resid / s2


def log_likelihood(spec, eta, y, sigma2=None):
    return float(np.sum(log_likelihood_terms(spec, eta, y, sigma2)))


def score_eta(spec, eta, y, sigma2=None, check=True):
    """d/d(eta) of the per-observation log density."""
    eta = np.asarray(eta, dtype=float)
    y = validate_response(spec, y) if check else np.asarray(y, dtype=float)
    kind = spec.family.kind
    link = spec.link
    g = link_eval(link, eta)
    if kind == "bernoulli":
        if link.kind == "logistic":
            return y - g
        dg = link_deriv(link, eta)
        return (y / g - (1.0 - y) / (1.0 - g)) * dg
    if kind == "poisson":
        if np.any(g <= 0):
            raise DomainError("poisson mean must be positive")
        return (y / g - 1.0) * link_deriv(link, eta)
    s2 = _resolve_sigma2(spec, sigma2)
    return (y - g) * link_deriv(link, eta) / s2


def score_sigma2(spec, eta, y, sigma2):
    """d/d(sigma2) of the per-observation gaussian log density."""
    s2 = _resolve_sigma2(spec, sigma2)
    resid = np.asarray(y, dtype=float) - link_eval(spec.link, eta)
    return -0.5 / s2 + 0.5 * resid * resid / (s2 * s2)


def mean_response(spec, eta):
    return link_eval(spec.link, eta)
