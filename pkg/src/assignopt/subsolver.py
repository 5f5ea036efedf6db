"""Per-item diagonal QP over the capped simplex.

Solves::

    min_x  sum_j gamma_j x_j**2 + eta_j x_j   s.t.  sum_j x_j <= 1,  x >= 0

through its one-dimensional concave dual in the multiplier ``pi >= 0``.  For
fixed ``pi`` the inner minimizer is ``x_j = max(0, -(eta_j + pi) / (2 gamma_j))``.
With breakpoints ``t_j = -eta_j`` sorted, the dual restricted to the
interval between two consecutive breakpoints is a concave quadratic whose
maximizer has a closed form; clamping it to the interval and keeping the
best candidate gives the global maximizer in O(J log J).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence, NonpositiveGamma

GAMMA_MIN = 1e-30
SMALL_J = 16  # below this a packed complex sort beats argsort + two gathers
CHUNK_ELEMENTS = 2**15  # batch rows per chunk x J; keeps temporaries in cache


@dataclass(frozen=True)
class SimplexQpInstance:
    gamma: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=float)
        eta = np.asarray(self.eta, dtype=float)
        if gamma.shape != eta.shape or gamma.ndim != 1:
            raise ValueError(f"gamma/eta must be equal-length vectors, got {gamma.shape} and {eta.shape}")
        _check_gamma(gamma)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "eta", eta)

    def objective(self, x):
        return float(np.sum(self.gamma * x * x + self.eta * x))

    def primal(self, pi):
        return np.maximum(0.0, -(self.eta + pi) / (2.0 * self.gamma))

    def dual(self, pi):
        """Concave dual value at ``pi``: ``min_{x>=0} L(x, pi)``."""
        neg = np.maximum(0.0, -(self.eta + pi))
        return float(-np.sum(neg * neg / (4.0 * self.gamma)) - pi)


def _check_gamma(gamma):
    if not np.all(gamma >= GAMMA_MIN):
        raise NonpositiveGamma(f"gamma must be >= {GAMMA_MIN:g}, min is {np.min(gamma)!r}")


def dual_search(inst):
    """Maximizer ``pi* >= 0`` of the dual of ``inst``.

    Breakpoints ``t = -eta`` are clipped at zero and coalesced; a binary
    search over them locates the interval where the primal sum crosses 1,
    then the closed-form stationary point of that interval's quadratic is
    clamped to the interval.  Neighbouring intervals are also evaluated and
    the candidate with the largest dual value is returned.
    """
    gamma, eta = inst.gamma, inst.eta
    t = -eta
    inv = 1.0 / (2.0 * gamma)
    if np.sum(np.maximum(0.0, t) * inv) <= 1.0:
        return 0.0
    order = np.argsort(-t, kind="stable")  # descending breakpoints
    ts, ws = t[order], inv[order]
    c0 = np.cumsum(ws)  # sum of 1/(2 gamma) over the k largest breakpoints
    c1 = np.cumsum(ts * ws)  # sum of t/(2 gamma)
    n = len(ts)

    def mass_at(k):
        # sum_j max(0, t_j - pi) / (2 gamma_j) evaluated at pi = ts[k]
        return c1[k - 1] - ts[k] * c0[k - 1] if k > 0 else 0.0

    # Breakpoints considered are the nonnegative ones, with 0 appended as a floor.
    npos = int(np.searchsorted(-ts, 0.0, side="right"))  # count of ts >= 0
    lo, hi = 0, npos  # find smallest k in [0, npos] with mass_at(k) > 1 (mass at pi=0 when k == npos)

    def mass_k(k):
        if k == npos:
            return c1[npos - 1] if npos else 0.0  # every positive breakpoint active at pi = 0
        return mass_at(k)

    while lo < hi:
        mid = (lo + hi) // 2
        if mass_k(mid) > 1.0:
            hi = mid
        else:
            lo = mid + 1
    k = lo  # active set = the k largest breakpoints
    best_pi, best_val = 0.0, -np.inf
    for kk in (k - 1, k, k + 1):
        if kk < 1 or kk > max(npos, 1):
            continue
        upper = ts[kk - 1]
        lower = ts[kk] if kk < n else -np.inf
        lower = max(lower, 0.0)
        pi = (c1[kk - 1] - 1.0) / c0[kk - 1]
        pi = min(max(pi, lower), upper)
        val = inst.dual(pi)
        if val > best_val:
            best_pi, best_val = pi, val
    return float(best_pi)


def solve_simplex_qp(inst):
    """Primal minimizer of ``inst``; see :func:`dual_search`."""
    return inst.primal(dual_search(inst))


def solve_simplex_qp_batch(gamma, eta, out=None):
    """Row-wise vectorized solve for ``gamma, eta`` of shape (n, J).

    Rows whose unconstrained clipped minimizer already fits the simplex
    take ``pi = 0``; the rest are sorted and ``pi`` is the root of the
    piecewise-linear primal sum on the interval that brackets it.  Rows are
    processed in cache-sized chunks; every row is independent, so the
    result does not depend on the chunking.
    """
    gamma = np.asarray(gamma, dtype=float)
    eta = np.asarray(eta, dtype=float)
    _check_gamma(gamma)
    if out is None:
        out = np.empty(np.broadcast_shapes(gamma.shape, eta.shape))
    n, J = out.shape
    rows = max(1, CHUNK_ELEMENTS // max(J, 1))
    for lo in range(0, n, rows):
        sl = slice(lo, lo + rows)
        _solve_rows(gamma[sl], eta[sl], out[sl])
    return out


def _solve_rows(gamma, eta, x):
    inv = 0.5 / gamma
    np.maximum(0.0, -eta * inv, out=x)
    mask = x.sum(axis=1) > 1.0
    if not mask.any():
        return
    if mask.all():
        # skip the gather/scatter copies when every row needs the search
        pi = _batch_pi(-eta, inv)
        np.maximum(0.0, (-eta - pi[:, None]) * inv, out=x)
        return
    over = np.flatnonzero(mask)
    pi = _batch_pi(-eta[over], inv[over])
    x[over] = np.maximum(0.0, (-eta[over] - pi[:, None]) * inv[over])


def _running_sum(a):
    """Cumulative sum down axis 0 of a (J, n) array, one vector add per row.

    Several times faster than ``np.cumsum(axis=0)`` for short, wide arrays.
    """
    out = np.empty_like(a)
    out[0] = a[0]
    for j in range(1, a.shape[0]):
        np.add(out[j - 1], a[j], out=out[j])
    return out


def _batch_pi(t, inv):
    """Optimal multipliers for rows known to have ``pi* > 0``.

    Works on the transposed (J, n) layout so every cumulative sum runs
    over contiguous rows; ties among breakpoints need no stable order since
    the intervals between equal breakpoints are empty.
    """
    n, J = t.shape
    # s = -t in ascending order, i.e. breakpoints in descending order
    if J <= SMALL_J:
        # one sort of (s, w) pairs packed as complex numbers (ordered by real part first)
        z = np.empty((n, J), dtype=complex)
        z.real = -t
        z.imag = inv
        z.sort(axis=1)
        ss = np.ascontiguousarray(z.real.T)
        ws = np.ascontiguousarray(z.imag.T)
    else:
        order = np.argsort(-t, axis=1)
        ss = np.ascontiguousarray(np.take_along_axis(-t, order, axis=1).T)
        ws = np.ascontiguousarray(np.take_along_axis(inv, order, axis=1).T)
    c0 = _running_sum(ws)
    c1 = _running_sum(ss * ws)  # minus the running sum of t w
    # phi(pi) = sum_j w_j max(0, t_j - pi) is decreasing in pi; at the k-th
    # breakpoint it equals s_k c0_k - c1_k, increasing in k.  The dual
    # maximizer is the root of phi = 1 on the last interval where phi < 1;
    # breakpoints at or below 0 never qualify because phi(0) > 1 here.
    k = np.count_nonzero(ss * c0 - c1 < 1.0, axis=0) - 1
    cols = np.arange(n)
    return -(c1[k, cols] + 1.0) / c0[k, cols]


# --- generic projected-gradient fallback ---------------------------------

def project_capped_simplex(y):
    """Euclidean projection onto ``{x >= 0, sum x <= 1}``."""
    x = np.maximum(y, 0.0)
    if x.sum() <= 1.0:
        return x
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, len(y) + 1)
    k = np.count_nonzero(u - css / idx > 0)
    theta = css[k - 1] / k
    return np.maximum(y - theta, 0.0)


def project_box(y):
    return np.clip(y, 0.0, 1.0)


_PROJECTIONS = {"simplex": project_capped_simplex, "box": project_box}


def solve_block_generic(objective, grad, x0, h="simplex", tol=1e-8, max_steps=10_000):
    """Projected gradient with backtracking for a single item block.

    ``objective``/``grad`` are callables of ``x``; ``h`` is ``"simplex"``
    (sum <= 1, x >= 0), ``"box"`` (0 <= x <= 1) or a projection callable.
    Stops when the projected-gradient step ``||x - P(x - g)||`` is below
    ``tol``.
    """
    project = _PROJECTIONS[h] if isinstance(h, str) else h
    x = project(np.asarray(x0, dtype=float))
    step = 1.0
    g = grad(x)
    fx = objective(x)
    for _ in range(max_steps):
        if np.linalg.norm(x - project(x - g)) <= tol:
            return x
        while True:
            cand = project(x - step * g)
            gc = grad(cand)
            d = cand - x
            fc = objective(cand)
            # Armijo, or the same descent lemma through the gradient's local
            # curvature, which survives cancellation in f near the optimum
            dd = float(np.dot(d, d))
            if fc <= fx + g @ d + dd / (2.0 * step) or np.dot(gc - g, d) <= dd / step or step < 1e-20:
                break
            step *= 0.5
        x, g, fx = cand, gc, fc
        step *= 2.0
    raise NoConvergence(f"projected gradient did not converge in {max_steps} steps")


def solve_qp_generic(inst, h="simplex", tol=1e-8, max_steps=10_000):
    """Generic solve of a :class:`SimplexQpInstance` (cross-check path)."""
    return solve_block_generic(
        inst.objective,
        lambda x: 2.0 * inst.gamma * x + inst.eta,
        np.zeros_like(inst.eta),
        h=h,
        tol=tol,
        max_steps=max_steps,
    )
