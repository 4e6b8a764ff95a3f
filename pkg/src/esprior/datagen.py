"""Simulation designs, data splitting, and table ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import glm
from .errors import ArgumentError, DataError, DegenerateInputError, ParseError


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    family: str = "gaussian"
    true_beta: np.ndarray | None = None
    true_sigma2: float | None = None
    center: np.ndarray | None = None
    g_true: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2:
            raise ArgumentError(f"X must be 2-d, got shape {self.X.shape}")
        if self.X.shape[0] != self.y.shape[0]:
            raise ArgumentError(f"X has {self.X.shape[0]} rows but y has {self.y.shape[0]} entries")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise DataError("dataset contains non-finite entries")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def subset(self, idx):
        return Dataset(
            self.X[idx],
            self.y[idx],
            self.family,
            self.true_beta,
            self.true_sigma2,
            self.center,
            None if self.g_true is None else self.g_true[idx],
        )


@dataclass
class SplitData:
    D1: np.ndarray
    D2: Dataset
    idx1: np.ndarray
    idx2: np.ndarray
    swapped: bool = False
    full: Dataset | None = field(default=None, repr=False)

    @property
    def n(self):
        return len(self.idx1) + len(self.idx2)


# ---------------------------------------------------------------------------
# spectra and covariates


def overparam_dim(n):
    """``floor(n ** (4/3))`` computed in exact integer arithmetic."""
    target = n**4
    p = int(round(target ** (1.0 / 3.0)))
    while p**3 > target:
        p -= 1
    while (p + 1) ** 3 <= target:
        p += 1
    return p


@dataclass(frozen=True)
class SpectrumSpec:
    """``rule="decay"``: ``10 exp(-j/8) + n exp(-sqrt(n)) / p``; ``"flat"``: ``value``."""

    rule: str = "decay"
    n: int = 100
    p: int = 464
    value: float = 1.0

    def eigenvalues(self):
        j = np.arange(1, self.p + 1, dtype=float)
        if self.rule == "decay":
            return 10.0 * np.exp(-j / 8.0) + self.n * math.exp(-math.sqrt(self.n)) / self.p
        if self.rule == "flat":
            return np.full(self.p, float(self.value))
        raise ArgumentError(f"unknown spectrum rule {self.rule!r}")


def gen_covariates(n, p, dist, spec, rng):
    """Independent rows with diagonal covariance ``diag(spec.eigenvalues())``."""
    if n < 1 or p < 1:
        raise ArgumentError("n and p must be positive")
    if spec.p != p:
        raise ArgumentError(f"spectrum has {spec.p} eigenvalues but p = {p}")
    rng = _rng(rng)
    lam = spec.eigenvalues()
    if dist == "gaussian":
        return rng.standard_normal((n, p)) * np.sqrt(lam)
    if dist == "laplace":
        return rng.laplace(0.0, 1.0, size=(n, p)) * np.sqrt(lam / 2.0)
    raise ArgumentError(f"unknown covariate distribution {dist!r}")


def _rng(seed_or_rng):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def _simulate(n, p, spec, dist, seed, beta, n_test):
    rng = _rng(seed)
    if beta is None:
        beta = rng.standard_normal(p)
    beta = np.asarray(beta, dtype=float)
    X = gen_covariates(n + n_test, p, dist, spec, rng)
    return rng, beta, X


def gen_logistic(n, p, spec, dist="gaussian", seed=0, beta=None, n_test=0):
    """Bernoulli responses with logistic mean; returns (train, test)."""
    rng, beta, X = _simulate(n, p, spec, dist, seed, beta, n_test)
    g = glm.link_eval(glm.LinkFunction("logistic"), X @ beta)
    y = (rng.uniform(size=len(g)) < g).astype(float)
    train = Dataset(X[:n], y[:n], "bernoulli", beta, None, None, g[:n])
    if not n_test:
        return train
    return train, Dataset(X[n:], y[n:], "bernoulli", beta, None, None, g[n:])


def gen_softplus_gaussian(n, p, spec, dist="gaussian", seed=0, beta=None, n_test=0, sigma2=1.0):
    """Gaussian responses around a softplus mean; the test block's ``y`` is noiseless."""
    rng, beta, X = _simulate(n, p, spec, dist, seed, beta, n_test)
    g = glm.link_eval(glm.LinkFunction("softplus"), X @ beta)
    y = g + math.sqrt(sigma2) * rng.standard_normal(len(g))
    train = Dataset(X[:n], y[:n], "gaussian", beta, sigma2, None, g[:n])
    if not n_test:
        return train
    return train, Dataset(X[n:], g[n:].copy(), "gaussian", beta, sigma2, None, g[n:])


def gen_linear_gaussian(n, p, spec, dist="gaussian", seed=0, beta=None, n_test=0, sigma2=1.0):
    """Identity-link Gaussian design used for the two-parameter model."""
    rng, beta, X = _simulate(n, p, spec, dist, seed, beta, n_test)
    g = X @ beta
    y = g + math.sqrt(sigma2) * rng.standard_normal(len(g))
    train = Dataset(X[:n], y[:n], "gaussian", beta, sigma2, None, g[:n])
    if not n_test:
        return train
    return train, Dataset(X[n:], g[n:].copy(), "gaussian", beta, sigma2, None, g[n:])


PRESETS = {
    "logistic-gaussian": ("logistic", "gaussian"),
    "logistic-laplace": ("logistic", "laplace"),
    "softplus-gaussian": ("softplus", "gaussian"),
    "softplus-laplace": ("softplus", "laplace"),
}


def simulate_preset(preset, n, seed, n_test=1000, p=None):
    if preset not in PRESETS:
        raise ArgumentError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    model, dist = PRESETS[preset]
    p = overparam_dim(n) if p is None else p
    spec = SpectrumSpec("decay", n, p)
    gen = gen_logistic if model == "logistic" else gen_softplus_gaussian
    return gen(n, p, spec, dist, seed, n_test=n_test)


# ---------------------------------------------------------------------------
# splitting


def split(data, seed=0, swap=False):
    """Uniform random half split: D1 builds the prior, D2 carries the likelihood."""
    n = data.n
    if n < 4:
        raise DegenerateInputError("need at least 4 observations to split")
    perm = _rng(seed).permutation(n)
    half = n // 2
    a, b = np.sort(perm[:half]), np.sort(perm[half:])
    if swap:
        a, b = b, a
    return SplitData(data.X[a], data.subset(b), a, b, swap, data)


def swap_roles(sd):
    full = sd.full
    if full is None:
        raise ArgumentError("split does not retain the full dataset")
    a, b = sd.idx2, sd.idx1
    return SplitData(full.X[a], full.subset(b), a, b, not sd.swapped, full)


# ---------------------------------------------------------------------------
# tables


def _fmt(x):
    return format(float(x), ".17g")


def write_csv(data, path, response_name="y"):
    """Header ``x1..xp,y``; 17 significant digits so values round-trip exactly."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j + 1}" for j in range(data.p)] + [response_name])
        for row, yi in zip(data.X, data.y):
            w.writerow([_fmt(v) for v in row] + [_fmt(yi)])


def read_csv_raw(path):
    """Parse a header-first CSV into (X, y, header) without centering."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ParseError(f"cannot open file: {exc}", path) from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("file is empty", path, 1) from None
        if len(header) < 2:
            raise ParseError("need at least one covariate column and a response", path, 1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, found {len(row)}", path, lineno
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ParseError("non-numeric cell", path, lineno) from None
    if not rows:
        raise ParseError("no data rows", path)
    A = np.array(rows)
    if not np.all(np.isfinite(A)):
        raise ParseError("non-finite value in table", path)
    return A[:, :-1], A[:, -1], header


def _read_whitespace(path, what):
    try:
        fh = open(path)
    except OSError as exc:
        raise ParseError(f"cannot open {what} file: {exc}", path) from exc
    rows = []
    width = None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise ParseError(f"expected {width} fields, found {len(parts)}", path, lineno)
            try:
                rows.append([float(v) for v in parts])
            except ValueError:
                raise ParseError("non-numeric cell", path, lineno) from None
    if not rows:
        raise ParseError(f"{what} file has no rows", path)
    return np.array(rows)


def load_table(path, format="csv", label_path=None, family=None, center=None):
    """Read a dataset and center its covariates columnwise.

    ``center`` (e.g. the training mean stored with a model) overrides the
    file's own column means.  ARCENE labels ``-1/+1`` map to ``0/1``.
    """
    if format == "csv":
        X, y, _ = read_csv_raw(path)
        fam = family or "gaussian"
    elif format == "arcene":
        if label_path is None:
            raise ArgumentError("arcene format needs a label file")
        X = _read_whitespace(path, "feature")
        lab = _read_whitespace(label_path, "label")
        if lab.shape[1] != 1:
            raise ParseError("label file must have one value per line", label_path)
        lab = lab[:, 0]
        if len(lab) != X.shape[0]:
            raise ParseError(
                f"label count {len(lab)} does not match row count {X.shape[0]}", label_path
            )
        bad = np.flatnonzero((lab != -1) & (lab != 1))
        if bad.size:
            raise ParseError("labels must be -1 or +1", label_path, int(bad[0]) + 1)
        y = (lab > 0).astype(float)
        fam = family or "bernoulli"
    else:
        raise ArgumentError(f"unknown table format {format!r}")
    if center is None:
        center = X.mean(axis=0)
    else:
        center = np.asarray(center, dtype=float)
        if center.shape != (X.shape[1],):
            raise DataError(
                f"centering vector has length {center.shape[0]}, table has {X.shape[1]} columns"
            )
    return Dataset(X - center, y, fam, center=center)
