import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from esprior import glm
from esprior.errors import ArgumentError, DataError

LOGISTIC = glm.LinkFunction("logistic")
SOFTPLUS = glm.LinkFunction("softplus")
IDENTITY = glm.LinkFunction("identity")


class TestLinks:
    def test_values(self):
        assert glm.link_eval(LOGISTIC, 0.0) == 0.5
        assert glm.link_eval(SOFTPLUS, 0.0) == pytest.approx(math.log(2.0), abs=1e-15)

    @pytest.mark.parametrize("r", [-5.0, 1.0, 40.0])
    def test_logistic_symmetry(self, r):
        assert glm.link_eval(LOGISTIC, r) + glm.link_eval(LOGISTIC, -r) == pytest.approx(1.0, abs=1e-15)

    def test_derivatives(self):
        assert glm.link_deriv(LOGISTIC, 0.0) == 0.25
        for r in (-2.0, 0.0, 3.0):
            assert glm.link_deriv(SOFTPLUS, r) == pytest.approx(glm.link_eval(LOGISTIC, r))
        np.testing.assert_array_equal(glm.link_deriv(IDENTITY, np.array([-3.0, 0.0, 9.0])), 1.0)

    def test_extreme_inputs_finite(self):
        r = np.array([-1e4, -800.0, 800.0, 1e4])
        for kind in glm.LINKS:
            assert np.all(np.isfinite(glm.link_eval(glm.LinkFunction(kind), r)))
        np.testing.assert_allclose(glm.link_eval(SOFTPLUS, np.array([800.0])), [800.0])

    def test_bexp_bounded_positive(self):
        link = glm.LinkFunction("bexp", cap=50.0)
        g = glm.link_eval(link, np.linspace(-30, 30, 101))
        assert np.all(g > 0) and np.all(g < 50.0)
        assert link.lipschitz == pytest.approx(12.5)

    def test_unknown_link(self):
        with pytest.raises(ArgumentError):
            glm.LinkFunction("probit")

    def test_family_link_compatibility(self):
        with pytest.raises(ArgumentError):
            glm.make_spec("bernoulli", "softplus")
        with pytest.raises(ArgumentError):
            glm.make_spec("poisson", "identity")


class TestLikelihood:
    def test_fair_coin(self):
        spec = glm.make_spec("bernoulli", "logistic")
        assert glm.log_likelihood(spec, np.array([0.0]), np.array([1.0])) == pytest.approx(-math.log(2.0))

    def test_gaussian_zero_residual(self):
        spec = glm.make_spec("gaussian", "softplus", sigma2=1.0)
        val = glm.log_likelihood(spec, np.array([0.0]), np.array([math.log(2.0)]))
        assert val == pytest.approx(-0.5 * math.log(2 * math.pi))

    def test_poisson_pmf(self):
        # g(eta) = 1 with the identity-free softplus link needs eta = log(e - 1)
        spec = glm.make_spec("poisson", "softplus")
        eta = math.log(math.e - 1.0)
        val = glm.log_likelihood(spec, np.array([eta]), np.array([2.0]))
        assert val == pytest.approx(math.log(math.exp(-1.0) / math.factorial(2)), abs=1e-12)
        assert val == pytest.approx(-1.693147, abs=1e-6)

    def test_response_validation(self):
        with pytest.raises(DataError):
            glm.log_likelihood(glm.make_spec("bernoulli", "logistic"), np.zeros(2), np.array([0.0, 2.0]))
        with pytest.raises(DataError):
            glm.log_likelihood(glm.make_spec("poisson", "softplus"), np.zeros(1), np.array([1.5]))

    def test_extreme_eta_finite(self):
        spec = glm.make_spec("bernoulli", "logistic")
        val = glm.log_likelihood_terms(spec, np.array([-800.0, 800.0]), np.array([1.0, 0.0]))
        np.testing.assert_allclose(val, [-800.0, -800.0])


class TestScore:
    def test_hand_values(self):
        assert glm.score_eta(glm.make_spec("bernoulli", "logistic"), 0.0, 1.0) == 0.5
        assert glm.score_eta(glm.make_spec("gaussian", "identity"), 2.0, 2.0) == 0.0
        s = glm.score_eta(glm.make_spec("gaussian", "softplus", sigma2=4.0), 0.0, 1.0)
        assert s == pytest.approx((1 - math.log(2)) * 0.5 / 4, abs=1e-12)
        assert s == pytest.approx(0.038357, abs=1e-6)

    def test_sigma2_score_fd(self):
        spec = glm.make_spec("gaussian", "softplus", unknown_variance=True)
        eta, y, s2, h = np.array([0.3]), np.array([1.7]), 0.8, 1e-6
        fd = (glm.log_likelihood(spec, eta, y, s2 + h) - glm.log_likelihood(spec, eta, y, s2 - h)) / (2 * h)
        assert glm.score_sigma2(spec, eta, y, s2)[0] == pytest.approx(fd, rel=1e-7)

    def test_bernoulli_mle_is_frequency(self):
        spec = glm.make_spec("bernoulli", "logistic")
        y = np.array([1.0, 1.0, 1.0, 0.0])
        grid = np.linspace(-4, 4, 80001)
        best = grid[np.argmax([glm.log_likelihood(spec, np.full(4, e), y) for e in grid])]
        assert glm.link_eval(LOGISTIC, best) == pytest.approx(0.75, abs=1e-4)


FAMILY_LINKS = [
    ("bernoulli", "logistic"),
    ("poisson", "softplus"),
    ("poisson", "bexp"),
    ("poisson", "logistic"),
    ("gaussian", "identity"),
    ("gaussian", "softplus"),
    ("gaussian", "logistic"),
]


def _response(family, draw):
    if family == "bernoulli":
        return float(draw(st.integers(0, 1)))
    if family == "poisson":
        return float(draw(st.integers(0, 20)))
    return draw(st.floats(-5, 5))


@given(st.sampled_from(FAMILY_LINKS), st.floats(-6, 6), st.data())
def test_score_matches_finite_difference(fl, eta, data):
    family, link = fl
    spec = glm.make_spec(family, link, sigma2=1.3)
    y = np.array([_response(family, data.draw)])
    h = 1e-5
    f = lambda e: glm.log_likelihood(spec, np.array([e]), y)  # noqa: E731
    fd = (f(eta + h) - f(eta - h)) / (2 * h)
    a = glm.score_eta(spec, np.array([eta]), y)[0]
    assert abs(a - fd) <= 1e-6 * max(abs(fd), 1.0)


@given(st.sampled_from(["logistic", "softplus", "identity", "bexp"]), st.floats(-30, 30), st.floats(-30, 30))
def test_lipschitz_bound(kind, r, s):
    link = glm.LinkFunction(kind, cap=20.0)
    gap = abs(float(glm.link_eval(link, r)) - float(glm.link_eval(link, s)))
    assert gap <= link.lipschitz * abs(r - s) * (1 + 1e-12) + 1e-12


@given(st.sampled_from(FAMILY_LINKS))
def test_spec_round_trip(fl):
    spec = glm.make_spec(*fl, sigma2=2.0 if fl[0] == "gaussian" else None)
    assert glm.GlmSpec.from_dict(spec.to_dict()) == spec
