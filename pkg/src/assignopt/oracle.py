"""Reference solvers used to judge ADMM solutions.

``oracle_solve`` solves the continuous relaxation with a log-barrier
method.  Inequalities ``X^T u_m <= b_m`` get explicit slacks ``sigma > 0`` so
that every coupling constraint is a linear equality handled by
infeasible-start Newton steps; the item constraints ``x >= 0`` and
``sum_j x_ij <= 1`` enter through the barrier.  The Newton matrix is::

    t * sum_j kappa_j (e_j (x) omega_j)(e_j (x) omega_j)^T     (objective, rank J)
    + diag(1 / x^2) + blockdiag_i(11^T / s_i^2)                 (item barrier)

The item part is inverted per item by Sherman-Morrison; the objective's
low-rank part and the equality rows are eliminated together in one small
dense system of size J + J(M+N).

``kkt_residual`` is an independent certificate check and
``brute_force_integer`` enumerates binary assignments of tiny instances.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence, SizeGuard

log = logging.getLogger(__name__)

MAX_ORACLE_ITEMS = 5000
MAX_ENUMERATION = 10**7
MIN_MU_FACTOR = 1.2


@dataclass
class OracleSolution:
    X: np.ndarray
    objective: float
    lam: np.ndarray  # M x J, inequality multipliers (0 where inactive)
    mu: np.ndarray  # N x J
    tau: np.ndarray  # I, item simplex multipliers
    zeta: np.ndarray  # I x J, lower-bound multipliers
    kkt: float
    newton_steps: int


class _Columns:
    """Owner-column structured vectors ``e_j (x) y`` stored as (Y, owner)."""

    def __init__(self, Y, owner):
        self.Y = Y  # I x n
        self.owner = owner  # n
        J = int(owner.max()) + 1 if owner.size else 0
        self.by_owner = [np.flatnonzero(owner == j) for j in range(J)]

    def matvec(self, coef, J):
        """sum_c coef_c (e_{owner_c} (x) y_c) as an I x J matrix."""
        out = np.zeros((self.Y.shape[0], J))
        for j, cols in enumerate(self.by_owner):
            if cols.size:
                out[:, j] = self.Y[:, cols] @ coef[cols]
        return out

    def rmatvec(self, V):
        """Inner products of every column with the I x J matrix ``V``."""
        return np.einsum("ic,ic->c", self.Y, V[:, self.owner])


def _build_rows(spec):
    """Active equality rows of the slack formulation."""
    I, J, M, N = spec.shape
    ys, owners, rhs, ineq_idx = [], [], [], []
    for m in range(M):
        for j in range(J):
            if np.isfinite(spec.b[m, j]):
                ys.append(spec.U[:, m])
                owners.append(j)
                rhs.append(spec.b[m, j])
                ineq_idx.append((m, j))
    n_ineq = len(ys)
    eq_idx = []
    for n in range(N):
        for j in range(J):
            if np.isfinite(spec.c[n, j]):
                ys.append(spec.V[:, n])
                owners.append(j)
                rhs.append(spec.c[n, j])
                eq_idx.append((n, j))
    Y = np.column_stack(ys) if ys else np.zeros((I, 0))
    return Y, np.array(owners, dtype=int), np.array(rhs, dtype=float), n_ineq, ineq_idx, eq_idx


def oracle_solve(spec, gap_tol=1e-7, mu_factor=10.0, max_newton=200, kkt_tol=1e-6, x0=None):
    """Solve the continuous relaxation to high accuracy.

    Returns an :class:`OracleSolution` whose multipliers form a KKT
    certificate checked by :func:`kkt_residual`.
    """
    I, J, M, N = spec.shape
    if I > MAX_ORACLE_ITEMS:
        raise SizeGuard(f"oracle limited to I <= {MAX_ORACLE_ITEMS}, got {I}")
    model = spec.objective
    omega = spec.omega
    Yr, owner_r, rhs, n_ineq, ineq_idx, eq_idx = _build_rows(spec)
    R = len(rhs)
    linear = model.kind == "linear_separable"
    if linear:
        Yall, owner_all, nq = Yr, owner_r, 0
    else:
        Yall = np.hstack([omega, Yr])
        owner_all = np.concatenate([np.arange(J), owner_r])
        nq = J
    cols = _Columns(Yall, owner_all)
    rcols = _Columns(Yr, owner_r)

    X = np.full((I, J), 0.5 / J) if x0 is None else np.array(x0, dtype=float)
    slack0 = rhs[:n_ineq] - rcols.rmatvec(X)[:n_ineq]
    sigma = np.maximum(slack0, np.maximum(1.0, 0.1 * np.abs(rhs[:n_ineq])))
    w = np.zeros(R)

    m_total = I * J + I + n_ineq
    f0 = model.f_eval(omega, X)
    t = max(1.0, m_total / max(1.0, abs(f0)))

    def residual(X, sigma, w, t):
        stats = model.local_stats(omega, X)
        s = 1.0 - X.sum(axis=1)
        gx = t * model.grad_rows(omega, X, stats) - 1.0 / X + (1.0 / s)[:, None]
        gs = -1.0 / sigma
        rd_x = gx + rcols.matvec(w, J)
        rd_s = gs + w[:n_ineq]
        lhs = rcols.rmatvec(X)
        lhs[:n_ineq] += sigma
        rp = lhs - rhs
        return gx, gs, rd_x, rd_s, rp

    def in_domain(X, sigma):
        if np.any(X <= 0) or np.any(X.sum(axis=1) >= 1) or np.any(sigma <= 0):
            return False
        if model.kind == "logarithmic":
            return bool(np.all(model.local_stats(omega, X) + model.params > 0))
        return True

    def rnorm(parts):
        return np.sqrt(sum(float(np.sum(p * p)) for p in parts))

    def center(X, sigma, w, t):
        """Infeasible-start Newton on the barrier subproblem at parameter t."""
        nsteps = 0
        for _ in range(max_newton):
            gx, gs, rd_x, rd_s, rp = residual(X, sigma, w, t)
            gscale = max(1.0, t * float(np.max(np.abs(model.f_grad(omega, X)))))
            if (
                max(np.max(np.abs(rd_x)), np.max(np.abs(rd_s), initial=0.0)) <= 1e-10 * gscale
                and np.max(np.abs(rp), initial=0.0) <= 1e-11 * max(1.0, np.max(np.abs(rhs), initial=1.0))
            ):
                break
            s = 1.0 - X.sum(axis=1)
            x2 = X * X
            theta = (1.0 / s**2) / (1.0 + (1.0 / s**2) * x2.sum(axis=1))

            def pinv(V):
                return x2 * V - (theta * np.sum(x2 * V, axis=1))[:, None] * x2

            # G = C^T P^{-1} C via the per-owner diagonal part minus the item rank-one part
            n = Yall.shape[1]
            G = np.zeros((n, n))
            for j, cj in enumerate(cols.by_owner):
                if cj.size:
                    Yj = Yall[:, cj]
                    G[np.ix_(cj, cj)] += Yj.T @ (x2[:, j : j + 1] * Yj)
            Z = np.sqrt(theta)[:, None] * x2[:, owner_all] * Yall
            G -= Z.T @ Z
            sig2 = sigma * sigma
            idx_s = nq + np.arange(n_ineq)
            G[idx_s, idx_s] += sig2
            stats = model.local_stats(omega, X)
            if not linear:
                kappa = model.owner_curvature(stats)
                G[np.arange(J), np.arange(J)] += 1.0 / (t * kappa)
            rhs_vec = -cols.rmatvec(pinv(gx))
            rhs_vec[idx_s] += -sig2 * gs
            rhs_vec[nq:] += rp
            try:
                zeta = np.linalg.solve(G, rhs_vec)
            except np.linalg.LinAlgError:
                zeta = np.linalg.lstsq(G, rhs_vec, rcond=None)[0]
            dX = -pinv(gx + cols.matvec(zeta, J))
            w_new = zeta[nq:]
            dsig = -sig2 * (gs + w_new[:n_ineq])
            dw = w_new - w

            # backtracking on the residual norm, staying inside the barrier domain
            r0 = rnorm((rd_x, rd_s, rp))
            alpha = 1.0
            while not in_domain(X + alpha * dX, sigma + alpha * dsig):
                alpha *= 0.5
                if alpha < 1e-20:
                    raise NoConvergence("barrier line search could not stay in the domain")
            while True:
                _, _, a, b_, c_ = residual(X + alpha * dX, sigma + alpha * dsig, w + alpha * dw, t)
                if rnorm((a, b_, c_)) <= (1.0 - 0.01 * alpha) * r0:
                    break
                alpha *= 0.5
                if alpha < 1e-10:
                    break
            if alpha < 1e-10:
                # rounding floor: accept when the residual is already negligible
                if r0 <= 1e-8 * gscale * np.sqrt(X.size):
                    break
                raise NoConvergence(f"Newton line search stalled at t={t:g} (residual {r0:.3g}, scale {gscale:.3g})")
            X = X + alpha * dX
            sigma = sigma + alpha * dsig
            w = w + alpha * dw
            nsteps += 1
        else:
            raise NoConvergence(f"Newton centering did not converge at t={t:g}")
        return X, sigma, w, nsteps

    steps = 0
    centered = None
    factor = mu_factor
    while True:
        try:
            X, sigma, w, k = center(X, sigma, w, t)
        except NoConvergence:
            if centered is None:
                raise
            X, sigma, w, t = centered
            if factor > MIN_MU_FACTOR:
                # badly scaled instances: retry from the centered point with a shorter step in t
                factor = np.sqrt(factor)
                log.info("centering stalled; retrying from t=%g with factor %.3g", t, factor)
                t *= factor
                continue
            # precision floor reached; keep the last centered point and let
            # the KKT certificate decide
            log.info("centering stalled, keeping t=%g", t)
            break
        steps += k
        centered = (X, sigma, w, t)
        fval = model.f_eval(omega, X)
        if m_total / t <= gap_tol * max(1.0, abs(fval)):
            break
        t *= factor

    lam = np.zeros((M, J))
    mu = np.zeros((N, J))
    for k, (m, j) in enumerate(ineq_idx):
        lam[m, j] = w[k] / t
    for k, (n, j) in enumerate(eq_idx):
        mu[n, j] = w[n_ineq + k] / t
    fval = model.f_eval(omega, X)
    s = 1.0 - X.sum(axis=1)
    tau = 1.0 / (t * s)
    zeta = 1.0 / (t * X)
    kkt = kkt_residual(spec, X, lam, mu, tau, zeta)
    if kkt > kkt_tol:
        raise NoConvergence(f"oracle KKT residual {kkt:.3g} exceeds {kkt_tol:g}")
    return OracleSolution(X, fval, lam, mu, tau, zeta, kkt, steps)


def kkt_residual(spec, X, lam, mu, tau, zeta, components=False):
    """Scaled KKT residual of ``X`` with candidate multipliers.

    Stationarity is measured relative to the objective gradient,
    feasibility relative to the constraint right-hand sides and
    complementarity relative to the objective value.  Computed directly
    from the raw instance data.
    """
    I, J, M, N = spec.shape
    grad = spec.objective.f_grad(spec.omega, X)
    lam = np.where(np.isfinite(spec.b), lam, 0.0)
    mu = np.where(np.isfinite(spec.c), mu, 0.0)
    lagr = grad + spec.U @ lam + spec.V @ mu + tau[:, None] - zeta
    gscale = max(1.0, float(np.max(np.abs(grad))))
    stationarity = float(np.max(np.abs(lagr))) / gscale

    ux, vx = spec.U.T @ X, spec.V.T @ X
    bact, cact = np.isfinite(spec.b), np.isfinite(spec.c)
    viol = [0.0]
    if bact.any():
        viol.append(float(np.max(np.maximum(0.0, ux[bact] - spec.b[bact]) / np.maximum(1.0, np.abs(spec.b[bact])))))
    if cact.any():
        viol.append(float(np.max(np.abs(vx[cact] - spec.c[cact]) / np.maximum(1.0, np.abs(spec.c[cact])))))
    s = 1.0 - X.sum(axis=1)
    viol += [float(np.max(np.maximum(0.0, -s))), float(np.max(np.maximum(0.0, -X)))]
    primal = max(viol)

    dual = max(0.0, float(-np.min(lam, initial=0.0)), float(-np.min(tau)), float(-np.min(zeta)))
    dual /= gscale

    fscale = max(1.0, abs(spec.objective.f_eval(spec.omega, X)))
    comp = [float(np.max(np.abs(tau * s))), float(np.max(np.abs(zeta * X)))]
    if bact.any():
        comp.append(float(np.max(np.abs(lam[bact] * (spec.b[bact] - ux[bact])))))
    complementarity = max(comp) / fscale
    parts = {
        "stationarity": stationarity,
        "primal": primal,
        "dual": dual,
        "complementarity": complementarity,
    }
    return parts if components else max(parts.values())


# --- integer enumeration --------------------------------------------------

@dataclass
class IntegerSolution:
    assignment: np.ndarray | None  # owner per item, -1 for none
    objective: float | None
    enumerated: int

    @property
    def feasible(self):
        return self.assignment is not None


def assignment_matrix(assignment, J):
    """One-hot I x J matrix of an owner vector (-1 = unassigned)."""
    assignment = np.asarray(assignment)
    X = np.zeros((assignment.size, J))
    on = assignment >= 0
    X[np.flatnonzero(on), assignment[on]] = 1.0
    return X


def is_feasible(spec, X, tol=1e-9):
    ux, vx = spec.U.T @ X, spec.V.T @ X
    b, c = spec.b, spec.c
    ok_b = np.all(~np.isfinite(b) | (ux <= b + tol * np.maximum(1.0, np.abs(b))))
    ok_c = np.all(~np.isfinite(c) | (np.abs(vx - c) <= tol * np.maximum(1.0, np.abs(c))))
    return bool(ok_b and ok_c)


def brute_force_integer(spec, tol=1e-9, chunk=50_000):
    """Exhaustive search over all ``(J+1)^I`` binary assignments."""
    I, J, M, N = spec.shape
    total = (J + 1) ** I
    if total > MAX_ENUMERATION:
        raise SizeGuard(f"(J+1)^I = {total} exceeds {MAX_ENUMERATION}")
    model = spec.objective
    best_val, best = np.inf, None
    # owner index J encodes "none"; its one-hot column is dropped
    bact, cact = np.isfinite(spec.b), np.isfinite(spec.c)
    bt = np.where(bact, spec.b, 0.0) + tol * np.maximum(1.0, np.abs(np.where(bact, spec.b, 0.0)))
    ctol = tol * np.maximum(1.0, np.abs(np.where(cact, spec.c, 0.0)))
    items = np.arange(I)
    combos = itertools.product(range(J + 1), repeat=I)
    seen = 0
    while True:
        batch = np.array(list(itertools.islice(combos, chunk)), dtype=int).reshape(-1, I)
        if batch.size == 0:
            break
        n = batch.shape[0]
        seen += n
        onehot = np.zeros((n, I, J + 1))
        onehot[np.arange(n)[:, None], items[None, :], batch] = 1.0
        Xb = onehot[:, :, :J]
        ok = np.ones(n, dtype=bool)
        if M:
            ux = np.einsum("im,nij->nmj", spec.U, Xb)
            ok &= np.all(~bact[None] | (ux <= bt[None]), axis=(1, 2))
        if N:
            vx = np.einsum("ik,nij->nkj", spec.V, Xb)
            ok &= np.all(~cact[None] | (np.abs(vx - spec.c[None]) <= ctol[None]), axis=(1, 2))
        if not ok.any():
            continue
        Xf = Xb[ok]
        if model.kind == "linear_separable":
            stats = np.einsum("ij,nij->n", spec.omega, Xf)[:, None]
        else:
            stats = np.einsum("ij,nij->nj", spec.omega, Xf)
        vals = model.values(stats)
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val = float(vals[k])
            row = batch[ok][k]
            best = np.where(row == J, -1, row)
    if best is None:
        return IntegerSolution(None, None, seen)
    return IntegerSolution(best, best_val, seen)
