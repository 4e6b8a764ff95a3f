import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit

from esprior import baseline
from esprior.datagen import Dataset
from esprior.errors import ArgumentError, DegenerateInputError


def rank_one_logistic(n, seed):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(6)
    u /= np.linalg.norm(u)
    t = 2.0 * rng.standard_normal(n)
    X = np.outer(t, u) + 0.05 * rng.standard_normal((n, 6))
    y = (rng.uniform(size=n) < expit(1.5 * t)).astype(float)
    return Dataset(X, y, "bernoulli")


class TestFit:
    def test_rank_one_matches_glm(self):
        rng = np.random.default_rng(0)
        t = rng.standard_normal(80)
        u = np.array([0.6, 0.8])
        X = np.outer(t, u) + 3.0
        y = (rng.uniform(size=80) < expit(0.4 + 1.2 * t)).astype(float)
        m = baseline.pcr_fit(Dataset(X, y, "bernoulli"), 1)
        # direct logistic GLM on the single centered coordinate
        z = (X - X.mean(axis=0)) @ u
        Z = np.column_stack([np.ones(80), z])
        coef, ok, _ = baseline.irls(Z, y, "bernoulli")
        np.testing.assert_allclose(baseline.pcr_predict(m, X), expit(Z @ coef), atol=1e-8)
        assert ok

    def test_gaussian_full_rank_is_ols(self, rng):
        X = rng.standard_normal((30, 4))
        y = X @ [1.0, -2.0, 0.5, 3.0] + 0.7 + 0.1 * rng.standard_normal(30)
        m = baseline.pcr_fit(Dataset(X, y, "gaussian"), 4)
        A = np.column_stack([np.ones(30), X])
        ols = np.linalg.solve(A.T @ A, A.T @ y)
        np.testing.assert_allclose(baseline.pcr_predict(m, X), A @ ols, atol=1e-10)

    def test_symmetric_intercept(self):
        X = np.array([[1.0, 0.5], [-1.0, -0.5], [2.0, -1.0], [-2.0, 1.0], [0.5, 2.0], [-0.5, -2.0]])
        X = np.vstack([X, X])
        y = np.array([1, 0, 1, 0, 0, 1, 0, 1, 0, 1, 1, 0], dtype=float)
        m = baseline.pcr_fit(Dataset(X, y, "bernoulli"), 2)
        assert abs(m.intercept) < 1e-8

    def test_separable_uses_ridge(self):
        X = np.array([[-2.0], [-1.0], [-0.5], [0.5], [1.0], [2.0]])
        y = np.array([0, 0, 0, 1, 1, 1], dtype=float)
        m = baseline.pcr_fit(Dataset(X, y, "bernoulli"), 1)
        assert m.ridge_fallback and np.all(np.isfinite(m.coef))
        assert np.all((baseline.pcr_predict(m, X) > 0.5) == (y == 1))

    def test_poisson_runs(self, rng):
        X = rng.standard_normal((60, 3))
        y = rng.poisson(np.exp(0.3 + 0.5 * X[:, 0])).astype(float)
        m = baseline.pcr_fit(Dataset(X, y, "poisson"), 2)
        assert m.converged and np.all(baseline.pcr_predict(m, X) > 0)

    def test_bad_component_count(self, rng):
        d = Dataset(rng.standard_normal((5, 3)), np.zeros(5), "gaussian")
        with pytest.raises(ArgumentError):
            baseline.pcr_fit(d, 5)


class TestPredict:
    def test_at_center(self, rng):
        d = rank_one_logistic(50, 1)
        m = baseline.pcr_fit(d, 2)
        assert baseline.pcr_predict(m, m.center) == pytest.approx(expit(m.intercept))

    def test_hand_gaussian(self):
        m = baseline.PcrModel(
            center=np.array([1.0, 1.0]),
            loadings=np.array([[1.0], [0.0]]),
            intercept=2.0,
            coef=np.array([3.0]),
            family="gaussian",
        )
        assert baseline.pcr_predict(m, np.array([2.0, 5.0])) == 2.0 + 3.0 * 1.0

    def test_logistic_range_and_dims(self):
        d = rank_one_logistic(40, 2)
        m = baseline.pcr_fit(d, 3)
        p = baseline.pcr_predict(m, d.X)
        assert np.all((p > 0) & (p < 1))
        with pytest.raises(ArgumentError):
            baseline.pcr_predict(m, np.zeros(5))


def exact_rank_one_logistic(n, seed):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(6)
    u /= np.linalg.norm(u)
    t = 2.0 * rng.standard_normal(n)
    X = np.outer(t, u) + rng.standard_normal(6)
    y = (rng.uniform(size=n) < expit(1.5 * t)).astype(float)
    return Dataset(X, y, "bernoulli")


class TestCV:
    def test_rank_one_selects_one(self):
        hits = sum(baseline.cv_select(exact_rank_one_logistic(150, s), seed=s) == 1 for s in range(5))
        assert hits >= 4

    def test_null_directions_get_zero_coefficient(self):
        d = exact_rank_one_logistic(80, 3)
        m1, m4 = baseline.pcr_fit(d, 1), baseline.pcr_fit(d, 4)
        np.testing.assert_array_equal(m4.coef[1:], 0.0)
        np.testing.assert_allclose(baseline.pcr_predict(m4, d.X), baseline.pcr_predict(m1, d.X), atol=1e-12)

    def test_deterministic(self):
        d = rank_one_logistic(60, 9)
        assert baseline.cv_select(d, seed=4) == baseline.cv_select(d, seed=4)

    def test_grid_clipped(self, rng):
        d = Dataset(rng.standard_normal((20, 40)), (rng.uniform(size=20) < 0.5).astype(float), "bernoulli")
        c = baseline.cv_select(d, seed=0)
        assert 1 <= c <= 15  # n_train = 16 caps the grid at 15

    def test_too_few(self, rng):
        with pytest.raises(DegenerateInputError):
            baseline.cv_select(Dataset(rng.standard_normal((8, 3)), np.zeros(8), "gaussian"))

    def test_empty_grid(self, rng):
        d = Dataset(rng.standard_normal((20, 3)), rng.standard_normal(20), "gaussian")
        with pytest.raises(ArgumentError):
            baseline.cv_select(d, grid=[10, 11], seed=0)


@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_projection_idempotent(seed, c):
    rng = np.random.default_rng(seed)
    d = Dataset(rng.standard_normal((12, 6)), rng.standard_normal(12), "gaussian")
    m = baseline.pcr_fit(d, c)
    x = rng.standard_normal(6)
    once = m.center + m.loadings @ m.project(x)[0]
    twice = m.center + m.loadings @ m.project(once)[0]
    np.testing.assert_allclose(once, twice, atol=1e-10)


@given(st.integers(0, 2**32 - 1))
def test_cv_in_feasible_grid(seed):
    rng = np.random.default_rng(seed)
    n, p = int(rng.integers(10, 40)), int(rng.integers(1, 12))
    d = Dataset(rng.standard_normal((n, p)), rng.standard_normal(n), "gaussian")
    c = baseline.cv_select(d, seed=seed)
    assert 1 <= c <= min(p, n - (n + 4) // 5 - 1)
