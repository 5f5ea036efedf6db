"""Objective models and their separable surrogates.

Each model supplies the objective ``f``, its gradient, and a surrogate
``g(X) = sum_ij a_ij x_ij**2 + c_ij x_ij`` that is separable over items and
dominates ``f`` in curvature, so that ``g - f`` is convex.  Quadratic and
logarithmic objectives depend on ``X`` only through the owner sums
``z_j = omega_j^T x_j``; the engine reduces those as partial sums.
"""
from __future__ import annotations

import numpy as np

from .errors import LogDomainError

KINDS = ("quadratic", "logarithmic", "linear_separable")


class ObjectiveModel:
    """Base class for pluggable objectives.

    Subclasses implement the owner-level statistics used by the distributed
    path (``local_stats``/``value``/``grad_rows``) plus the surrogate
    coefficients.  ``params`` holds the per-owner scalars (``alpha_j`` for the
    quadratic model, ``a_j`` for the logarithmic one).  ``dominance`` is the
    surrogate dimension D; ``None`` means "use the item count".
    """

    kind = "base"

    def __init__(self, params=None, dominance=None):
        self.params = None if params is None else np.asarray(params, dtype=float)
        self.dominance = dominance

    def __repr__(self):
        return f"{type(self).__name__}(params={self.params!r}, dominance={self.dominance!r})"

    def __eq__(self, other):
        if type(self) is not type(other) or self.dominance != other.dominance:
            return False
        if self.params is None or other.params is None:
            return self.params is None and other.params is None
        return self.params.shape == other.params.shape and self.params.tobytes() == other.params.tobytes()

    def dominance_for(self, num_items):
        return num_items if self.dominance is None else self.dominance

    # distributed interface
    def local_stats(self, omega, X):
        """Additive partial statistics of a block of rows."""
        return np.einsum("ij,ij->j", omega, X)

    def value(self, stats):
        raise NotImplementedError

    def values(self, stats_batch):
        """Row-wise :meth:`value` over a batch of statistics."""
        return np.array([self.value(s) for s in stats_batch])

    def grad_rows(self, omega, X, stats):
        raise NotImplementedError

    def owner_curvature(self, stats):
        """Per-owner weight kappa_j of the Hessian sum_j kappa_j omega_j omega_j^T."""
        raise NotImplementedError

    def g_coeffs(self, omega, num_items):
        raise NotImplementedError

    def g_linear(self, omega):
        return np.zeros_like(omega)

    # whole-matrix conveniences
    def f_eval(self, omega, X):
        return self.value(self.local_stats(omega, X))

    def f_grad(self, omega, X):
        return self.grad_rows(omega, X, self.local_stats(omega, X))

    def g_eval(self, omega, X, num_items=None):
        n = omega.shape[0] if num_items is None else num_items
        return float(np.sum(self.g_coeffs(omega, n) * X * X) + np.sum(self.g_linear(omega) * X))

    def g_grad(self, omega, X, num_items=None):
        n = omega.shape[0] if num_items is None else num_items
        return 2.0 * self.g_coeffs(omega, n) * X + self.g_linear(omega)


class QuadraticObjective(ObjectiveModel):
    """``f(X) = 1/2 sum_j (omega_j^T x_j + alpha_j)^2``."""

    kind = "quadratic"

    def value(self, stats):
        return 0.5 * float(np.sum((stats + self.params) ** 2))

    def values(self, stats_batch):
        return 0.5 * np.sum((stats_batch + self.params) ** 2, axis=1)

    def grad_rows(self, omega, X, stats):
        return omega * (stats + self.params)[None, :]

    def owner_curvature(self, stats):
        return np.ones_like(stats)

    def g_coeffs(self, omega, num_items):
        # Cauchy-Schwarz: (w^T x)^2 <= D * sum_i w_i^2 x_i^2 with D the column length.
        return 0.5 * self.dominance_for(num_items) * omega * omega


class LogarithmicObjective(ObjectiveModel):
    """``f(X) = -sum_j ln(omega_j^T x_j + a_j)``."""

    kind = "logarithmic"

    def _arg(self, stats):
        arg = stats + self.params
        if np.any(arg <= 0):
            raise LogDomainError(f"log argument nonpositive for owners {np.flatnonzero(arg <= 0).tolist()}")
        return arg

    def value(self, stats):
        return -float(np.sum(np.log(self._arg(stats))))

    def values(self, stats_batch):
        return -np.sum(np.log(self._arg(stats_batch)), axis=-1)

    def grad_rows(self, omega, X, stats):
        return -omega / self._arg(stats)[None, :]

    def owner_curvature(self, stats):
        return 1.0 / self._arg(stats) ** 2

    def g_coeffs(self, omega, num_items):
        # Hessian omega omega^T / (z + a)^2 is dominated by omega omega^T / a^2 for z >= 0.
        D = self.dominance_for(num_items)
        return (0.5 * D / self.params**2)[None, :] * omega * omega


class LinearObjective(ObjectiveModel):
    """``f(X) = sum_ij p_ij x_ij`` with the cost matrix stored in omega.

    Already separable, so the surrogate is ``f`` itself: ``a_ij = 0`` and
    the linear part of ``g`` is ``p``.
    """

    kind = "linear_separable"

    def local_stats(self, omega, X):
        return np.array([np.sum(omega * X)])

    def value(self, stats):
        return float(stats[0])

    def values(self, stats_batch):
        return np.asarray(stats_batch, dtype=float)[:, 0]

    def grad_rows(self, omega, X, stats):
        return np.array(omega, dtype=float, copy=True)

    def owner_curvature(self, stats):
        return None

    def g_coeffs(self, omega, num_items):
        return np.zeros_like(omega)

    def g_linear(self, omega):
        return np.asarray(omega, dtype=float)


_BY_KIND = {cls.kind: cls for cls in (QuadraticObjective, LogarithmicObjective, LinearObjective)}
_ALIASES = {"quad": "quadratic", "log": "logarithmic", "linear": "linear_separable"}


def make_objective(kind, params=None, dominance=None):
    kind = _ALIASES.get(kind, kind)
    if kind not in _BY_KIND:
        raise ValueError(f"unknown objective kind {kind!r}; expected one of {KINDS}")
    return _BY_KIND[kind](params, dominance)


# Functional surface over a ProblemSpec.

def f_eval(model, spec, X):
    return model.f_eval(spec.omega, X)


def f_grad(model, spec, X):
    return model.f_grad(spec.omega, X)


def g_coeff(model, spec, i, j):
    return float(model.g_coeffs(spec.omega[i : i + 1], spec.num_items)[0, j])


def g_eval(model, spec, X):
    return model.g_eval(spec.omega, X, spec.num_items)


def g_grad(model, spec, X):
    return model.g_grad(spec.omega, X, spec.num_items)


def omega1_eval(model, spec, X):
    """Omega_1 = g - f; convex when the surrogate dominates."""
    return g_eval(model, spec, X) - f_eval(model, spec, X)


def check_omega1_convexity(model, spec, samples=200, seed=0, tol=1e-9):
    """Midpoint convexity test of ``g - f`` on random points of the unit box.

    Returns the largest violation found (<= ``tol`` means the test passed).
    """
    rng = np.random.default_rng(seed)
    shape = (spec.num_items, spec.num_owners)
    worst = -np.inf
    for _ in range(samples):
        X = rng.random(shape)
        Y = rng.random(shape)
        lhs = omega1_eval(model, spec, 0.5 * (X + Y))
        rhs = 0.5 * omega1_eval(model, spec, X) + 0.5 * omega1_eval(model, spec, Y)
        scale = max(1.0, abs(rhs))
        worst = max(worst, (lhs - rhs) / scale)
    return worst
