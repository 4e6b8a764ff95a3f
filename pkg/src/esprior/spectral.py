"""Empirical covariance, its spectrum, and rank-k truncations.

The covariance estimator uses the factor ``2 / total_n`` applied to the
centered scatter of the first half of the data, exactly as used by the
prior construction.  For wide matrices (``p`` above ``dense_threshold``)
the spectrum is obtained from the ``n1 x n1`` Gram matrix instead of the
``p x p`` covariance; this is exact for every nonzero eigenvalue.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DataError, DegenerateInputError, NumericError

EPS = np.finfo(float).eps
DENSE_THRESHOLD = 4096


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Spectrum:
    """Eigenpairs sorted by non-increasing eigenvalue.

    ``eigenvalues`` may be shorter than ``dim`` when only the leading
    (nonzero) part was computed; the remaining eigenvalues are zero.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", _frozen(self.eigenvalues))
        object.__setattr__(self, "eigenvectors", _frozen(self.eigenvectors))

    def reconstruct(self):
        V, lam = self.eigenvectors, self.eigenvalues
        return (V * lam) @ V.T

    @property
    def total_variance(self):
        return float(np.sum(self.eigenvalues))


@dataclass(frozen=True)
class LowRankCovariance:
    """Rank-k truncation ``sum_{j<=k} lam_j v_j v_j^T`` and its pseudoinverse."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    pos_rank: int

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", _frozen(self.eigenvalues))
        object.__setattr__(self, "eigenvectors", _frozen(self.eigenvectors))

    @property
    def rank(self):
        return len(self.eigenvalues)

    @property
    def dim(self):
        return self.eigenvectors.shape[0]

    @property
    def positive_eigenvalues(self):
        return self.eigenvalues[: self.pos_rank]

    @property
    def positive_eigenvectors(self):
        return self.eigenvectors[:, : self.pos_rank]

    @property
    def trace(self):
        return float(np.sum(self.positive_eigenvalues))

    def matrix(self):
        V, lam = self.positive_eigenvectors, self.positive_eigenvalues
        return (V * lam) @ V.T

    def pinv_matrix(self):
        V, lam = self.positive_eigenvectors, self.positive_eigenvalues
        return (V / lam) @ V.T

    def apply(self, x):
        """Multiply by the truncated covariance (``x`` is a vector or p x m)."""
        V, lam = self.positive_eigenvectors, self.positive_eigenvalues
        c = V.T @ x
        return V @ (c * lam if c.ndim == 1 else c * lam[:, None])

    def pinv_apply(self, x):
        """Multiply by the Moore-Penrose pseudoinverse."""
        V, lam = self.positive_eigenvectors, self.positive_eigenvalues
        c = V.T @ x
        return V @ (c / lam if c.ndim == 1 else c / lam[:, None])

    def pinv_quadratic(self, x):
        c = self.positive_eigenvectors.T @ x
        return float(np.sum(c * c / self.positive_eigenvalues))


def _check_block(X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ArgumentError(f"covariate block must be 2-d, got shape {X.shape}")
    if X.shape[0] < 2:
        raise DegenerateInputError("need at least 2 rows to estimate a covariance")
    if not np.all(np.isfinite(X)):
        raise DataError("covariate block contains non-finite entries")
    return X


def empirical_covariance(X1, total_n):
    """``(2 / total_n) * sum_i (x_i - xbar)(x_i - xbar)^T`` over the rows of X1."""
    X1 = _check_block(X1)
    if total_n < 1:
        raise ArgumentError("total_n must be positive")
    Xc = X1 - X1.mean(axis=0)
    S = (2.0 / total_n) * (Xc.T @ Xc)
    return 0.5 * (S + S.T)


def spectral_decompose(S):
    """Dense symmetric eigendecomposition, sorted descending, round-off clamped."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ArgumentError(f"expected a square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise NumericError("matrix has non-finite entries", dim=S.shape[0], bad=int(np.sum(~np.isfinite(S))))
    scale = max(np.abs(S).max(initial=0.0), 1.0)
    if np.abs(S - S.T).max(initial=0.0) > 1e-10 * scale:
        raise ArgumentError("matrix is not symmetric")
    try:
        lam, V = np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            "symmetric eigensolver did not converge",
            dim=S.shape[0],
            fro_norm=float(np.linalg.norm(S)),
            max_abs=float(np.abs(S).max(initial=0.0)),
        ) from exc
    order = np.argsort(lam)[::-1]
    lam, V = lam[order], V[:, order]
    return Spectrum(np.clip(lam, 0.0, None), V, S.shape[0])


def gram_spectrum(X1, total_n, top=None):
    """Leading eigenpairs of the covariance via the Gram matrix of centered X1."""
    X1 = _check_block(X1)
    n1, p = X1.shape
    Xc = X1 - X1.mean(axis=0)
    G = (2.0 / total_n) * (Xc @ Xc.T)
    mu, U = np.linalg.eigh(0.5 * (G + G.T))
    order = np.argsort(mu)[::-1]
    mu, U = np.clip(mu[order], 0.0, None), U[:, order]
    keep = mu > EPS * max(mu[0], 0.0) * max(n1, p)
    if top is not None:
        keep[top:] = False
    mu, U = mu[keep], U[:, keep]
    # v = Xc^T u / sqrt(mu * total_n / 2) has unit norm
    V = (Xc.T @ U) / np.sqrt(mu * total_n / 2.0)
    V, _ = np.linalg.qr(V)  # re-orthonormalize against round-off; signs irrelevant
    return Spectrum(mu, V, p)


def spectrum_from_data(X1, total_n, top=None, dense_threshold=DENSE_THRESHOLD):
    """Spectrum of the empirical covariance of X1, choosing dense or Gram path."""
    X1 = _check_block(X1)
    if X1.shape[1] > dense_threshold:
        return gram_spectrum(X1, total_n, top=top)
    return spectral_decompose(empirical_covariance(X1, total_n))


def numerical_rank(eigenvalues, dim):
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.size == 0 or lam[0] <= 0:
        return 0
    return int(np.sum(lam > EPS * lam[0] * dim))


def truncate(spec, k):
    """Keep the top-k eigenpairs of ``spec``."""
    if not (1 <= k <= spec.dim):
        raise ArgumentError(f"k must lie in [1, {spec.dim}], got {k}")
    m = len(spec.eigenvalues)
    lam = np.zeros(k)
    lam[: min(k, m)] = spec.eigenvalues[:k]
    V = spec.eigenvectors[:, : min(k, m)]
    if k > m:
        # only the leading part was computed; the missing directions carry
        # zero eigenvalue and never enter the positive part
        V = np.hstack([V, np.zeros((spec.dim, k - m))])
    pos = numerical_rank(lam, spec.dim)
    return LowRankCovariance(lam, V, pos)


def choose_k(spec, evr=0.95):
    """Smallest k whose leading eigenvalues capture ``evr`` of the trace."""
    if not (0.0 < evr <= 1.0):
        raise ArgumentError("explained-variance target must lie in (0, 1]")
    lam = spec.eigenvalues
    total = lam.sum()
    if total <= 0:
        raise DegenerateInputError("covariance has zero trace")
    frac = np.cumsum(lam) / total
    k = int(np.searchsorted(frac, evr - 1e-12) + 1)
    return min(k, numerical_rank(lam, spec.dim), spec.dim)


@dataclass(frozen=True)
class SpectrumDiagnostics:
    ks: np.ndarray
    bulk_proxy: np.ndarray
    tail_sum: float
    dim_ratio: float


def spectrum_diagnostics(spec, n, L_kappa, U_kappa, rho_n):
    """Descriptive eigenvalue-decay summaries for ``k`` in ``[L_kappa, U_kappa]``.

    ``bulk_proxy[i] = (rho_n + lam_k) * lam_k * k``, ``tail_sum`` is the sum
    of eigenvalues past ``L_kappa`` and ``dim_ratio = U_kappa / n``.  No
    pass/fail judgement is attached.
    """
    if not (1 <= L_kappa <= U_kappa <= spec.dim):
        raise ArgumentError(
            f"need 1 <= L_kappa <= U_kappa <= {spec.dim}, got {L_kappa}, {U_kappa}"
        )
    if n < 1:
        raise ArgumentError("n must be positive")
    lam = np.zeros(spec.dim)
    lam[: len(spec.eigenvalues)] = spec.eigenvalues
    ks = np.arange(L_kappa, U_kappa + 1)
    lk = lam[ks - 1]
    return SpectrumDiagnostics(
        ks=ks,
        bulk_proxy=(rho_n + lk) * lk * ks,
        tail_sum=float(np.sum(lam[L_kappa:])),
        dim_ratio=U_kappa / n,
    )
