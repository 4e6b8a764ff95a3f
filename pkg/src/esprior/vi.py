"""Stochastic variational inference with reparameterization gradients.

The variational family is Gaussian, ``beta = mu + F eps`` with ``F`` one of

* ``dense``   -- lower-triangular ``d x d`` factor,
* ``diag``    -- positive diagonal,
* ``lowrank`` -- ``[B, diag(s)]`` acting on ``eps = (eps_1, eps_2)`` with
  ``eps_1`` of length ``r`` and ``eps_2`` of length ``d``.

The kernels below evaluate the single-sample KL estimate

    log q(beta) - log N(beta | 0, S_k) - sum_i log L(y_i; g(x_i^T beta))

and its exact gradients at a fixed ``eps``.  For ``lowrank`` the ``log q``
term is replaced by minus the closed-form entropy, whose gradient is what
the dense formula ``-F^{-T}`` generalizes to.

When ``state.basis`` is set, the parameters are coordinates in that
orthonormal basis and ``beta = basis @ theta``.  ``fit`` uses this to
restrict ``q`` to the support of the prior (``support="span"``).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import glm
from .errors import ArgumentError, FitError, NumericError
from .prior import LOG_2PI, SpectralPrior, VariancePrior, grad_log_prior_sigma2, log_prior_sigma2
from .spectral import LowRankCovariance

FACTOR_KINDS = ("dense", "diag", "lowrank")


@dataclass
class VariationalState:
    mean: np.ndarray
    kind: str
    factor: np.ndarray
    lowrank: np.ndarray | None = None
    basis: np.ndarray | None = None
    variance_block: tuple | None = None

    def __post_init__(self):
        if self.kind not in FACTOR_KINDS:
            raise ArgumentError(f"unknown factor kind {self.kind!r}")
        d = len(self.mean)
        if self.kind == "dense" and self.factor.shape != (d, d):
            raise ArgumentError("dense factor must be square")
        if self.kind in ("diag", "lowrank") and self.factor.shape != (d,):
            raise ArgumentError("diagonal factor must be a vector")
        if self.kind == "lowrank" and (self.lowrank is None or self.lowrank.shape[0] != d):
            raise ArgumentError("lowrank state needs a (d, r) block")

    @property
    def dim(self):
        """Dimension of the coordinate space the parameters live in."""
        return len(self.mean)

    @property
    def p(self):
        return self.dim if self.basis is None else self.basis.shape[0]

    @property
    def noise_dim(self):
        if self.kind == "lowrank":
            return self.lowrank.shape[1] + self.dim
        return self.dim

    def covariance(self):
        """Coordinate-space covariance ``F F^T``."""
        if self.kind == "dense":
            return self.factor @ self.factor.T
        if self.kind == "diag":
            return np.diag(self.factor**2)
        return self.lowrank @ self.lowrank.T + np.diag(self.factor**2)

    def beta_mean(self):
        return self.mean if self.basis is None else self.basis @ self.mean

    def copy(self):
        return VariationalState(
            self.mean.copy(),
            self.kind,
            self.factor.copy(),
            None if self.lowrank is None else self.lowrank.copy(),
            self.basis,
            self.variance_block,
        )


def apply_factor(state, eps):
    """``F @ eps`` for a single noise vector or a batch (rows)."""
    eps = np.asarray(eps, dtype=float)
    if eps.shape[-1] != state.noise_dim:
        raise ArgumentError(f"eps must have trailing dim {state.noise_dim}, got {eps.shape}")
    if state.kind == "dense":
        return eps @ state.factor.T
    if state.kind == "diag":
        return eps * state.factor
    r = state.lowrank.shape[1]
    return eps[..., :r] @ state.lowrank.T + eps[..., r:] * state.factor


def reparam_sample(state, eps):
    """``beta = mu + F eps`` (mapped through ``basis`` when present)."""
    theta = state.mean + apply_factor(state, eps)
    return theta if state.basis is None else theta @ state.basis.T


def _lowrank_pieces(state):
    B, d = state.lowrank, state.factor
    Dinv2 = 1.0 / (d * d)
    Bs = B * Dinv2[:, None]
    M = np.eye(B.shape[1]) + B.T @ Bs
    try:
        cf = cho_factor(M, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericError("low-rank factor is singular") from exc
    logdet = 2.0 * np.sum(np.log(d)) + 2.0 * np.sum(np.log(np.diag(cf[0])))
    BsMinv = cho_solve(cf, Bs.T).T  # D^-2 B M^-1 = Sigma^-1 B
    diag_inv = Dinv2 - Dinv2 * np.sum(BsMinv * B, axis=1)
    return logdet, BsMinv, diag_inv


def entropy(state):
    d = state.dim
    if state.kind == "dense":
        logdet = 2.0 * np.sum(np.log(np.abs(np.diag(state.factor))))
    elif state.kind == "diag":
        logdet = 2.0 * np.sum(np.log(state.factor))
    else:
        logdet = _lowrank_pieces(state)[0]
    return 0.5 * (d * (LOG_2PI + 1.0) + logdet)


def _as_xy(data):
    if hasattr(data, "D2"):
        data = data.D2
    if isinstance(data, tuple):
        X, y = data
    else:
        X, y = data.X, data.y
    return np.asarray(X, dtype=float), np.asarray(y, dtype=float)


@dataclass
class _Eval:
    value: float
    g_mean: np.ndarray
    g_factor: np.ndarray
    g_lowrank: np.ndarray | None
    g_var: np.ndarray | None


def _check_noise(state, eps):
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    if eps.shape[1] != state.noise_dim:
        raise ArgumentError(f"eps must have length {state.noise_dim}, got {eps.shape[1]}")
    return eps


def _evaluate(state, X, y, spec, prior, eps, zeta=None, var_prior=None, scale=1.0, grads=True):
    """Single-sample objective (and gradients) at each row of ``eps``, averaged."""
    eps = _check_noise(state, eps)
    S = eps.shape[0]
    two = spec.two_parameter
    if two:
        if state.variance_block is None or var_prior is None:
            raise ArgumentError("two-parameter model needs a variance block and prior")
        zeta = np.zeros(S) if zeta is None else np.atleast_1d(np.asarray(zeta, dtype=float))
        if zeta.shape != (S,):
            raise ArgumentError("need one zeta per eps sample")
    if X.shape[1] != state.p or prior.dim != state.p:
        raise ArgumentError(
            f"dimension mismatch: state {state.p}, covariates {X.shape[1]}, prior {prior.dim}"
        )

    d = state.dim
    if state.kind == "lowrank":
        logdet, SinvB, diag_inv = _lowrank_pieces(state)
        neg_entropy = -0.5 * (d * (LOG_2PI + 1.0) + logdet)
    elif state.kind == "dense":
        diagL = np.diag(state.factor)
        log_abs_det = np.sum(np.log(np.abs(diagL)))
    else:
        log_abs_det = np.sum(np.log(state.factor))
    log_norm = prior.gaussian_log_normalizer()

    total = 0.0
    gm = np.zeros(d)
    gf = np.zeros_like(state.factor)
    gl = None if state.lowrank is None else np.zeros_like(state.lowrank)
    gv = np.zeros(2) if two else None

    for t in range(S):
        e = eps[t]
        theta = state.mean + apply_factor(state, e)
        beta = theta if state.basis is None else state.basis @ theta
        eta = X @ beta if X.shape[0] else np.zeros(0)
        sigma2 = None
        if two:
            m, s = state.variance_block
            log_s2 = m + s * zeta[t]
            sigma2 = float(np.exp(log_s2))
            if not np.isfinite(sigma2) or sigma2 <= 0:
                raise NumericError("variance sample is not finite", sample=float(log_s2))
        if state.kind == "lowrank":
            log_q = neg_entropy
        else:
            log_q = -log_abs_det - 0.5 * float(e @ e) - 0.5 * d * LOG_2PI
        neg_log_prior = 0.5 * prior.low_rank.pinv_quadratic(beta) - log_norm
        ll = glm.log_likelihood_terms(spec, eta, y, sigma2, check=False)
        value = log_q + neg_log_prior - scale * float(np.sum(ll))
        if two:
            value += -(log_s2 + np.log(s) + 0.5 * LOG_2PI + 0.5 * zeta[t] ** 2)
            value -= log_prior_sigma2(var_prior, sigma2)
        if not np.isfinite(value):
            raise NumericError("objective is not finite", sample=beta.copy())
        total += value
        if not grads:
            continue

        score = glm.score_eta(spec, eta, y, sigma2, check=False)
        g_beta = prior.precision_apply(beta) - scale * (X.T @ score)
        g = g_beta if state.basis is None else state.basis.T @ g_beta
        gm += g
        if state.kind == "dense":
            # lower-triangle projection of -L^{-T} is -diag(1 / L_ii)
            gf += np.tril(np.outer(g, e))
            gf[np.diag_indices(d)] -= 1.0 / diagL
        elif state.kind == "diag":
            gf += g * e - 1.0 / state.factor
        else:
            r = state.lowrank.shape[1]
            gl += np.outer(g, e[:r]) - SinvB
            gf += g * e[r:] - state.factor * diag_inv
        if two:
            dv = -grad_log_prior_sigma2(var_prior, sigma2)
            dv -= scale * float(np.sum(glm.score_sigma2(spec, eta, y, sigma2)))
            gv[0] += dv * sigma2 - 1.0
            gv[1] += dv * sigma2 * zeta[t] - zeta[t] - 1.0 / s

    inv = 1.0 / S
    return _Eval(
        total * inv,
        gm * inv,
        gf * inv,
        None if gl is None else gl * inv,
        None if gv is None else gv * inv,
    )


def kl_objective_estimate(state, data, spec, prior, eps_batch, *, zeta=None, var_prior=None, scale=1.0):
    """Monte Carlo KL(q || posterior) up to the log evidence, averaged over ``eps_batch``.

    Both Gaussian log densities carry their normalizing constants, so the
    estimate is exactly zero when the data are empty and ``q`` equals the
    prior (dense and diagonal factors).
    """
    X, y = _as_xy(data)
    return _evaluate(state, X, y, spec, prior, eps_batch, zeta, var_prior, scale, grads=False).value


def grad_mean(state, data, spec, prior, eps, *, zeta=None, var_prior=None, scale=1.0):
    X, y = _as_xy(data)
    return _evaluate(state, X, y, spec, prior, eps, zeta, var_prior, scale).g_mean


def grad_factor(state, data, spec, prior, eps, *, zeta=None, var_prior=None, scale=1.0):
    """Gradient on the factor's free entries.

    Returns the lower-triangular matrix (dense), a vector (diag), or the
    pair ``(grad_B, grad_diag)`` (lowrank).
    """
    X, y = _as_xy(data)
    ev = _evaluate(state, X, y, spec, prior, eps, zeta, var_prior, scale)
    if state.kind == "lowrank":
        return ev.g_lowrank, ev.g_factor
    return ev.g_factor


def grad_variance_block(state, data, spec, prior, eps, zeta, var_prior, *, scale=1.0):
    """Gradient with respect to ``(m, s)`` of the log-normal sigma^2 block."""
    X, y = _as_xy(data)
    return _evaluate(state, X, y, spec, prior, eps, zeta, var_prior, scale).g_var


class Adam:
    """Adam over a dict of float arrays, updated in place."""

    def __init__(self, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            params[k] -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


@dataclass(frozen=True)
class FitConfig:
    mc_samples: int = 1
    max_iters: int = 5000
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    tol: float = 1e-5
    patience: int = 50
    smoothing: float = 0.05
    seed: int = 0
    factor: str = "auto"
    rank: int | None = None
    minibatch: int | None = None
    support: str = "span"
    init_scale: float = 0.1

    def __post_init__(self):
        if self.mc_samples < 1:
            raise ArgumentError("mc_samples must be >= 1")
        if self.max_iters < 0:
            raise ArgumentError("max_iters must be >= 0")
        for name in ("lr", "beta1", "beta2", "smoothing"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ArgumentError(f"{name} must lie in (0, 1), got {v}")
        if not self.tol > 0:
            raise ArgumentError("tol must be positive")
        if self.factor not in FACTOR_KINDS + ("auto",):
            raise ArgumentError(f"unknown factor parameterization {self.factor!r}")
        if self.support not in ("span", "full"):
            raise ArgumentError("support must be 'span' or 'full'")
        if self.minibatch is not None and self.minibatch < 1:
            raise ArgumentError("minibatch must be positive")

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class FitResult:
    state: VariationalState
    trace: list
    grad_norms: list
    iterations: int
    converged: bool
    wall_time: float
    radius: float = np.inf
    extra: dict = field(default_factory=dict)

    def write_trace(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "objective", "grad_norm"])
            for i, (f, gn) in enumerate(zip(self.trace, self.grad_norms), start=1):
                w.writerow([i, repr(f), repr(gn)])


def resolve_factor(kind, dim):
    if kind == "auto":
        return "dense" if dim <= 512 else "lowrank"
    return kind


def initial_state(kind, low_rank, init_scale=0.1, rank=None, basis_coords=False):
    """Zero mean, ``init_scale * I`` factor; lowrank block ``init_scale * V sqrt(lam)``."""
    if basis_coords:
        d = low_rank.pos_rank
        U = np.eye(d)
    else:
        d = low_rank.dim
        U = low_rank.positive_eigenvectors
    lam = low_rank.positive_eigenvalues
    mean = np.zeros(d)
    if kind == "dense":
        return VariationalState(mean, kind, init_scale * np.eye(d))
    if kind == "diag":
        return VariationalState(mean, kind, np.full(d, init_scale))
    r = len(lam) if rank is None else min(int(rank), len(lam))
    r = max(r, 1)
    B = init_scale * U[:, :r] * np.sqrt(lam[:r])
    return VariationalState(mean, kind, np.full(d, init_scale), B)


def _reduced_problem(X, prior):
    V = prior.low_rank.positive_eigenvectors
    lam = prior.low_rank.positive_eigenvalues
    r = len(lam)
    reduced = SpectralPrior(LowRankCovariance(lam, np.eye(r), r), prior.radius)
    return X @ V, reduced, V


def fit(data, spec, prior, config=FitConfig(), var_prior=None, init=None):
    """Minimize the stochastic KL objective with Adam.

    ``data`` is a SplitData (its ``D2`` block is used), a Dataset, or an
    ``(X, y)`` pair.  With ``support="span"`` the variational Gaussian is
    confined to the span of the prior's retained eigenvectors.
    """
    X, y = _as_xy(data)
    if X.shape[0] == 0:
        raise ArgumentError("likelihood block D2 is empty")
    if X.shape[1] != prior.dim:
        raise ArgumentError(f"prior dimension {prior.dim} != covariate dimension {X.shape[1]}")
    glm.validate_response(spec, y)
    two = spec.two_parameter
    if two and var_prior is None:
        var_prior = VariancePrior()

    basis = None
    work_prior = prior
    Xw = X
    if config.support == "span":
        Xw, work_prior, basis = _reduced_problem(X, prior)
    dim = work_prior.low_rank.pos_rank if basis is not None else prior.dim
    kind = resolve_factor(config.factor, dim)
    if init is not None:
        state = init.copy()
    else:
        state = initial_state(
            kind, prior.low_rank, config.init_scale, config.rank, basis_coords=basis is not None
        )
        if two:
            m0 = float(np.log(max(np.var(y), 1e-3)))
            state.variance_block = (m0, 0.1)
    state.basis = None

    rng = np.random.default_rng(config.seed)
    n = Xw.shape[0]
    batch = config.minibatch if config.minibatch and config.minibatch < n else None
    scale = n / batch if batch else 1.0

    params = {"mean": state.mean.copy()}
    if kind == "dense":
        L = state.factor.copy()
        params["offdiag"] = np.tril(L, -1)
        params["logdiag"] = np.log(np.abs(np.diag(L)))
    else:
        params["logdiag"] = np.log(state.factor)
        if kind == "lowrank":
            params["lowrank"] = state.lowrank.copy()
    if two:
        m0, s0 = state.variance_block
        params["var_m"] = np.array([m0])
        params["var_logs"] = np.array([np.log(s0)])

    def to_state():
        if kind == "dense":
            F = params["offdiag"] + np.diag(np.exp(params["logdiag"]))
            st = VariationalState(params["mean"], kind, F)
        elif kind == "diag":
            st = VariationalState(params["mean"], kind, np.exp(params["logdiag"]))
        else:
            st = VariationalState(params["mean"], kind, np.exp(params["logdiag"]), params["lowrank"])
        if two:
            st.variance_block = (float(params["var_m"][0]), float(np.exp(params["var_logs"][0])))
        return st

    opt = Adam(config.lr, config.beta1, config.beta2, config.adam_eps)
    trace, gnorms = [], []
    ema_hist = []
    ema = None
    converged = False
    t0 = time.perf_counter()
    tril_mask = np.tril(np.ones((dim, dim), dtype=bool), -1) if kind == "dense" else None

    for it in range(config.max_iters):
        st = to_state()
        eps = rng.standard_normal((config.mc_samples, st.noise_dim))
        zeta = rng.standard_normal(config.mc_samples) if two else None
        if batch:
            idx = np.sort(rng.choice(n, size=batch, replace=False))
            Xb, yb = Xw[idx], y[idx]
        else:
            Xb, yb = Xw, y
        try:
            ev = _evaluate(st, Xb, yb, spec, work_prior, eps, zeta, var_prior, scale)
        except NumericError as exc:
            raise FitError(f"objective diverged at iteration {it + 1}: {exc}", trace) from exc
        grads = {"mean": ev.g_mean}
        if kind == "dense":
            grads["offdiag"] = np.where(tril_mask, ev.g_factor, 0.0)
            grads["logdiag"] = np.diag(ev.g_factor) * np.exp(params["logdiag"])
        else:
            grads["logdiag"] = ev.g_factor * st.factor
            if kind == "lowrank":
                grads["lowrank"] = ev.g_lowrank
        if two:
            s = st.variance_block[1]
            grads["var_m"] = ev.g_var[:1]
            grads["var_logs"] = ev.g_var[1:] * s
        gn = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
        if not (np.isfinite(ev.value) and np.isfinite(gn)):
            raise FitError(f"objective diverged at iteration {it + 1}", trace)
        trace.append(float(ev.value))
        gnorms.append(gn)
        ema = ev.value if ema is None else (1.0 - config.smoothing) * ema + config.smoothing * ev.value
        ema_hist.append(ema)
        opt.step(params, grads)
        if len(ema_hist) > config.patience:
            prev = ema_hist[-1 - config.patience]
            if abs(ema - prev) <= config.tol * max(1.0, abs(ema)):
                converged = True
                break

    # with no step taken, hand back the initial state exactly (no log/exp round trip)
    final = state.copy() if not trace else to_state()
    for key in ("mean", "factor"):
        setattr(final, key, np.array(getattr(final, key), copy=True))
    if final.lowrank is not None:
        final.lowrank = final.lowrank.copy()
    final.basis = basis
    return FitResult(
        state=final,
        trace=trace,
        grad_norms=gnorms,
        iterations=len(trace),
        converged=converged,
        wall_time=time.perf_counter() - t0,
        radius=prior.radius,
    )


def fit_two_parameter(data, spec, priors, config=FitConfig()):
    """Joint fit of beta and the log-normal sigma^2 block."""
    if not spec.two_parameter:
        raise ArgumentError("fit_two_parameter needs the unknown-variance gaussian family")
    beta_prior, var_prior = priors
    return fit(data, spec, beta_prior, config, var_prior=var_prior)


def project_to_ball(beta, radius):
    norm = np.linalg.norm(beta)
    if np.isfinite(radius) and norm > radius:
        return beta * (radius / norm)
    return beta


def point_estimates(result):
    """``(map_estimate, posterior_mean)``; both are the projected variational mean.

    A sequence of results (the swap-and-average fits) yields the
    coordinatewise average of the individual estimates.
    """
    if isinstance(result, (list, tuple)):
        ests = [point_estimates(r)[0] for r in result]
        avg = np.mean(ests, axis=0)
        return avg, avg.copy()
    beta = project_to_ball(result.state.beta_mean(), result.radius)
    return beta.copy(), beta.copy()


def sigma2_posterior_mean(state):
    """Mean of the log-normal sigma^2 block."""
    if state.variance_block is None:
        raise ArgumentError("state has no variance block")
    m, s = state.variance_block
    return float(np.exp(m + 0.5 * s * s))


def with_basis(state, basis):
    return replace(state, basis=basis)
