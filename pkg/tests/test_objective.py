import numpy as np
import pytest

from assignopt.errors import LogDomainError
from assignopt.objective import (
    check_omega1_convexity,
    f_eval,
    f_grad,
    g_coeff,
    g_eval,
    g_grad,
    make_objective,
)
from conftest import handmade, small_spec


def naive_f(model, spec, X):
    I, J = X.shape
    total = 0.0
    for j in range(J):
        z = sum(spec.omega[i, j] * X[i, j] for i in range(I))
        if model.kind == "quadratic":
            total += 0.5 * (z + model.params[j]) ** 2
        else:
            total -= np.log(z + model.params[j])
    return total


def central_diff(fun, X, h=1e-6):
    G = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        E = np.zeros_like(X)
        E[idx] = h
        G[idx] = (fun(X + E) - fun(X - E)) / (2 * h)
    return G


@pytest.fixture(params=["quadratic", "logarithmic"])
def spec(request):
    return small_spec(I=7, J=4, kind=request.param, seed=3)


def test_zero_primal():
    q = small_spec(kind="quadratic")
    X = np.zeros(q.omega.shape)
    assert f_eval(q.objective, q, X) == pytest.approx(0.5 * np.sum(q.objective.params**2))
    lg = small_spec(kind="logarithmic")
    assert f_eval(lg.objective, lg, X) == pytest.approx(-np.sum(np.log(lg.objective.params)))


def test_naive_sum(spec):
    X = np.random.default_rng(1).random(spec.omega.shape)
    assert f_eval(spec.objective, spec, X) == pytest.approx(naive_f(spec.objective, spec, X), rel=1e-12)


def test_grad_at_zero():
    q = small_spec(kind="quadratic")
    G = f_grad(q.objective, q, np.zeros(q.omega.shape))
    np.testing.assert_allclose(G, q.omega * q.objective.params)


def test_grad_finite_difference(spec):
    rng = np.random.default_rng(2)
    model = spec.objective
    worst = 0.0
    for _ in range(20):
        X = rng.random(spec.omega.shape)
        fd = central_diff(lambda Y: f_eval(model, spec, Y), X)
        G = f_grad(model, spec, X)
        worst = max(worst, np.max(np.abs(fd - G)) / max(np.max(np.abs(G)), 1e-12))
    assert worst < 1e-4


def test_linear_gradient_constant():
    p = np.arange(6.0).reshape(2, 3)
    spec = handmade(p, np.zeros((2, 0)), np.ones((2, 1)), np.zeros((0, 3)), np.ones((1, 3)))
    X = np.random.default_rng(0).random((2, 3))
    np.testing.assert_array_equal(f_grad(spec.objective, spec, X), p)
    np.testing.assert_array_equal(g_grad(spec.objective, spec, X), p)
    assert f_eval(spec.objective, spec, X) == pytest.approx(np.sum(p * X))


def test_log_domain():
    model = make_objective("logarithmic", np.array([-1.0]))
    spec = handmade([[1.0]], np.zeros((1, 0)), [[1.0]], np.zeros((0, 1)), [[0.5]], kind="logarithmic", params=[1.0])
    with pytest.raises(LogDomainError):
        model.f_eval(spec.omega, np.zeros((1, 1)))


class TestSurrogate:
    def test_quadratic_coefficient(self):
        spec = handmade(np.ones((4, 2)), np.zeros((4, 0)), np.ones((4, 1)), np.zeros((0, 2)), [[1.0, 1.0]],
                        kind="quadratic", params=[0.1, 0.1])
        assert g_coeff(spec.objective, spec, 0, 0) == pytest.approx(4 / 2)

    def test_zero_omega(self):
        spec = small_spec()
        omega = np.array(spec.omega)
        omega[1, 2] = 0.0
        spec = spec.replace(omega=omega)
        assert g_coeff(spec.objective, spec, 1, 2) == 0.0

    def test_log_coefficient(self):
        I = 100
        spec = handmade(np.ones((I, 1)), np.zeros((I, 0)), np.ones((I, 1)), np.zeros((0, 1)), [[1.0]],
                        kind="logarithmic", params=[10.0], rho=1e-5)
        assert g_coeff(spec.objective, spec, 0, 0) == pytest.approx(0.5)

    def test_g_grad(self, spec):
        model = spec.objective
        X = np.random.default_rng(4).random(spec.omega.shape)
        np.testing.assert_array_equal(g_grad(model, spec, np.zeros_like(X)), 0.0)
        np.testing.assert_allclose(g_grad(model, spec, 2 * X), 2 * g_grad(model, spec, X), rtol=1e-15)
        fd = central_diff(lambda Y: g_eval(model, spec, Y), X)
        G = g_grad(model, spec, X)
        assert np.max(np.abs(fd - G)) / np.max(np.abs(G)) < 1e-4

    def test_omega1_convex(self, spec):
        assert check_omega1_convexity(spec.objective, spec, samples=200, seed=0) <= 1e-9

    def test_f_convex(self, spec):
        rng = np.random.default_rng(5)
        model = spec.objective
        for _ in range(200):
            X, Y = rng.random((2, *spec.omega.shape))
            mid = f_eval(model, spec, 0.5 * (X + Y))
            assert mid <= 0.5 * (f_eval(model, spec, X) + f_eval(model, spec, Y)) + 1e-9

    def test_small_dominance_breaks_convexity(self):
        # D = 1 is far too small; the sampled test should notice
        spec = small_spec(I=8, J=2, seed=1)
        weak = make_objective("quadratic", spec.objective.params, dominance=1)
        assert check_omega1_convexity(weak, spec, samples=200, seed=0) > 1e-9
