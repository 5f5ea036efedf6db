"""Bregman ADMM driver.

Each iteration:

1. primal step -- every item solves a diagonal QP over the capped simplex
   against the same snapshot ``X^t`` (Jacobi), with linear term
   ``B = f'(X^t) - g'(X^t) + rho * sum_s w_s r_s^T`` where
   ``r_s = X^{tT} w_s - d_s + nu_s / rho``;
2. slack step -- ``xi = max(0, b - X^T u - lambda / rho)``;
3. dual steps for the inequality and equality multipliers.

Inequality and equality rows are handled together as "combined"
constraints ``s``: ``w_s`` is a feature column, ``d_s`` the right-hand
side (``b_m - xi_m`` or ``c_n``) and ``nu_s`` the multiplier.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .engine import COORDINATOR_ID, SerialEngine
from .objective import check_omega1_convexity
from .problem import partition as make_partitions
from .subsolver import solve_simplex_qp_batch

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("iter", "objective", "ineq_mapd", "eq_mapd", "dual_residual", "wall_ms")


@dataclass(frozen=True)
class IterationState:
    t: int
    X: np.ndarray  # I x J
    xi: np.ndarray  # M x J, +inf where the inequality is inactive
    lam: np.ndarray  # M x J
    mu: np.ndarray  # N x J
    # reductions of X, carried so no iteration recomputes them from scratch
    ux: np.ndarray  # X^T U, M x J
    vx: np.ndarray  # X^T V, N x J
    fstats: np.ndarray  # objective statistics of X

    @classmethod
    def initial(cls, spec):
        I, J, M, N = spec.shape
        X = np.zeros((I, J))
        xi = np.where(spec.ineq_active, 0.0, np.inf)
        return cls(
            0,
            X,
            xi,
            np.zeros((M, J)),
            np.zeros((N, J)),
            np.zeros((M, J)),
            np.zeros((N, J)),
            spec.objective.local_stats(spec.omega[:0], X[:0]),
        )


@dataclass(frozen=True)
class CombinedConstraint:
    s: int
    kind: str  # "ineq" or "eq"
    w: np.ndarray  # I-vector
    d: np.ndarray  # J-vector
    nu: np.ndarray  # J-vector
    active: np.ndarray  # J-vector of bools


@dataclass
class SolverConfig:
    max_iters: int = 1000
    tol_ineq: float = 1e-3
    tol_eq: float = 1e-3
    tol_dual: float = 1e-6
    rho: float | None = None
    beta: float | None = None
    trace_every: int | None = None  # None: every iteration up to 1e5 items, else every 10th
    checkpoint_every: int | None = None
    checkpoint_dir: str | None = None
    debug: bool = False

    def __post_init__(self):
        for name in ("tol_ineq", "tol_eq", "tol_dual"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")


@dataclass
class ConvergenceTrace:
    rows: list = field(default_factory=list)
    final_state: IterationState | None = None

    def append(self, row):
        if self.rows and row[0] <= self.rows[-1][0]:
            raise ValueError("trace rows must be strictly increasing in iteration")
        self.rows.append(tuple(row))

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        k = TRACE_COLUMNS.index(name)
        return np.array([r[k] for r in self.rows])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for r in self.rows:
                w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])

    @classmethod
    def read_csv(cls, path):
        trace = cls()
        with open(path) as fh:
            reader = csv.reader(fh)
            next(reader)
            for r in reader:
                trace.append((int(r[0]), *map(float, r[1:])))
        return trace


# --- steps ----------------------------------------------------------------

def _combined_arrays(spec, state, rho):
    """Stacked (d, nu, active) for all S = M + N combined constraints."""
    ineq_on, eq_on = spec.ineq_active, spec.eq_active
    d_ineq = np.where(ineq_on, spec.b - state.xi, state.ux)
    d_eq = np.where(eq_on, spec.c, state.vx)
    d = np.vstack([d_ineq, d_eq])
    nu = np.vstack([state.lam, state.mu])
    active = np.vstack([ineq_on, eq_on])
    return d, nu, active


def combine_constraints(spec, state):
    """Merge inequality and equality rows into one list of combined constraints.

    Inactive entries get ``d_s = X^T w_s`` so their residual is exactly zero.
    """
    d, nu, active = _combined_arrays(spec, state, spec.rho)
    W = spec.W
    M = spec.num_ineq
    return [
        CombinedConstraint(s, "ineq" if s < M else "eq", W[:, s], d[s], nu[s], active[s])
        for s in range(W.shape[1])
    ]


def owner_residuals(xw, combined_or_arrays, rho):
    """``r_s = X^T w_s - d_s + nu_s / rho`` for every s (S x J), zero where inactive."""
    if isinstance(combined_or_arrays, tuple):
        d, nu, active = combined_or_arrays
    else:
        d = np.array([c.d for c in combined_or_arrays])
        nu = np.array([c.nu for c in combined_or_arrays])
        active = np.array([c.active for c in combined_or_arrays])
    if d.size == 0:
        return np.zeros_like(d)
    return np.where(active, xw - d + nu / rho, 0.0)


def compute_B(spec, objective, X_t, combined, rho=None):
    """Linear coefficient of the decomposed primal problem (I x J)."""
    rho = spec.rho if rho is None else rho
    W = spec.W
    r = owner_residuals(W.T @ X_t, combined, rho) if W.shape[1] else np.zeros((0, spec.num_owners))
    return _B_rows(objective, spec.omega, W, X_t, objective.local_stats(spec.omega, X_t), r, rho, spec.num_items)


def _B_rows(objective, omega, W, X, fstats, r, rho, num_items, a=None):
    if a is None:
        a = objective.g_coeffs(omega, num_items)
    g_prime = 2.0 * a * X + objective.g_linear(omega)
    B = objective.grad_rows(omega, X, fstats) - g_prime
    if W.shape[1]:
        B += rho * (W @ r)
    return B


def surrogate_objective(spec, objective, X, X_t, B, beta=None):
    """Decomposed primal objective ``g(X) + <B, X> + beta ||X - X^t||^2``."""
    beta = spec.beta if beta is None else beta
    g = objective.g_eval(spec.omega, X, spec.num_items)
    return g + float(np.sum(B * X)) + beta * float(np.sum((X - X_t) ** 2))


def primal_update(spec, objective, state, engine=None):
    """``X^{t+1}`` from the snapshot ``state`` (all items against ``X^t``)."""
    kernel = _Kernel(spec, objective, spec.rho, spec.beta)
    parts = engine.partitions if engine is not None else make_partitions(spec, 1)
    engine = engine or SerialEngine(parts)
    r = owner_residuals(np.vstack([state.ux, state.vx]), _combined_arrays(spec, state, spec.rho), spec.rho)
    result = engine.run_iteration(state.t, kernel.bind(state.X), (r, state.fstats), spec.beta, spec.rho)
    return _assemble(spec, parts, result.blocks)


def _assemble(spec, parts, blocks):
    X = np.empty((spec.num_items, spec.num_owners))
    for p in parts:
        X[p.rows] = blocks[p.partition_id]
    return X


def xi_update(spec, X_next, lam, rho, ux=None):
    """Slack step: ``xi = max(0, b - X^T u - lambda / rho)`` (+inf where inactive)."""
    if ux is None:
        ux = spec.U.T @ X_next
    with np.errstate(invalid="ignore"):
        l = -ux + spec.b - lam / rho
    return np.maximum(0.0, l)


def dual_update(spec, X_next, xi_next, state, rho=None, ux=None, vx=None):
    """Multiplier steps; inactive entries keep a zero multiplier."""
    rho = spec.rho if rho is None else rho
    if ux is None:
        ux = spec.U.T @ X_next
    if vx is None:
        vx = spec.V.T @ X_next
    with np.errstate(invalid="ignore"):
        lam = np.where(spec.ineq_active, state.lam + rho * (ux + xi_next - spec.b), state.lam)
    mu = np.where(spec.eq_active, state.mu + rho * (vx - spec.c), state.mu)
    return lam, mu


class _Kernel:
    """Per-partition work of the primal step (runs on workers)."""

    def __init__(self, spec, objective, rho, beta):
        self.spec, self.objective, self.rho, self.beta = spec, objective, rho, beta
        self._cache = {}

    def _prep(self, part):
        got = self._cache.get(part.partition_id)
        if got is None:
            omega, U, V = part.item_rows(self.spec)
            W = np.ascontiguousarray(np.hstack([U, V]))
            a = self.objective.g_coeffs(omega, self.spec.num_items)
            got = (omega, W, a, a + self.beta)
            self._cache[part.partition_id] = got
        return got

    def bind(self, X_snapshot):
        def work(part, broadcast):
            r, fstats = broadcast.payload
            omega, W, a, gamma = self._prep(part)
            Xk = X_snapshot[part.rows]
            B = _B_rows(self.objective, omega, W, Xk, fstats, r, self.rho, None, a=a)
            eta = B + self.objective.g_linear(omega) - 2.0 * self.beta * Xk
            Xn = solve_simplex_qp_batch(gamma, eta)
            diff = Xn - Xk
            sums = (W.T @ Xn, self.objective.local_stats(omega, Xn), np.array([np.sum(diff * diff)]))
            return Xn, sums

        return work


def _trace_every(config, I):
    if config.trace_every is not None:
        return config.trace_every
    return 1 if I <= 100_000 else 10


def _check_complementarity(xi, lam):
    on = np.isfinite(xi) & (xi > 1e-12)
    if np.any(np.abs(lam[on]) >= 1e-9):
        raise AssertionError("slack/multiplier complementarity violated")


def save_state(store, spec, parts, state):
    for p in parts:
        store.write(state.t, p.partition_id, state.X[p.rows])
    J = spec.num_owners
    fs = np.zeros((1, J))
    fs[0, : state.fstats.size] = state.fstats
    rows = np.vstack([state.xi, state.lam, state.mu, state.ux, state.vx, fs])
    store.write(state.t, COORDINATOR_ID, rows)


def load_state(store, spec, parts, t):
    I, J, M, N = spec.shape
    X = np.empty((I, J))
    for p in parts:
        rows = store.read(t, p.partition_id)
        if rows.shape != (len(p), J):
            raise ValueError(f"checkpoint block {p.partition_id} has shape {rows.shape}")
        X[p.rows] = rows
    coord = store.read(t, COORDINATOR_ID)
    k = np.cumsum([M, M, N, M, N])
    xi, lam, mu, ux, vx, fs = np.split(coord, k)
    nstats = spec.objective.local_stats(spec.omega[:0], X[:0]).size
    return IterationState(t, X, xi, lam, mu, ux, vx, fs[0, :nstats].copy())


def penalty_curvature(spec):
    """``rho/2 * lambda_max(sum_s w_s w_s^T)``, the smallest beta keeping Omega_2 convex.

    Equals the closed-form bound ``rho/2 * I * (M+N)`` only when every
    constraint coefficient lies in [-1, 1]; larger coefficients need more.
    """
    W = spec.W
    if W.shape[1] == 0:
        return 0.0
    return 0.5 * spec.rho * float(np.linalg.eigvalsh(W.T @ W)[-1])


def solve(spec, config=None, engine=None, resume_from=None, check_complementarity=True, callback=None):
    """Run the ADMM loop; returns ``(X, trace)``.

    Starts from all-zero primal, slack and multipliers (or from the
    checkpoint of iteration ``resume_from``) and stops once both MAPDs and
    the dual residual are within tolerance, or after ``max_iters``
    iterations in total.
    """
    config = config or SolverConfig()
    if config.rho is not None or config.beta is not None:
        spec = spec.replace(
            rho=spec.rho if config.rho is None else config.rho,
            beta=spec.beta if config.beta is None else config.beta,
        )
    objective = spec.objective
    need = penalty_curvature(spec)
    if spec.beta < need:
        log.warning(
            "beta=%.3g is below the penalty curvature rho/2*lambda_max=%.3g; Jacobi steps may oscillate",
            spec.beta, need,
        )
    if config.debug:
        worst = check_omega1_convexity(objective, spec, samples=20) if spec.num_items <= 2000 else None
        if worst is not None and worst > 1e-9:
            log.warning("Omega_1 = g - f failed the sampled convexity test (violation %.3g)", worst)

    own_engine = engine is None
    if engine is None:
        engine = SerialEngine(make_partitions(spec, spec.partitions))
    parts = engine.partitions
    store = engine.store
    if store is None and config.checkpoint_dir:
        from .engine import CheckpointStore

        store = CheckpointStore(config.checkpoint_dir)

    rho, beta = spec.rho, spec.beta
    I, J, M, N = spec.shape
    state = IterationState.initial(spec) if resume_from is None else load_state(store, spec, parts, resume_from)
    kernel = _Kernel(spec, objective, rho, beta)
    trace = ConvergenceTrace()
    every = _trace_every(config, I)
    scale = np.sqrt(I * J)
    t0 = time.perf_counter()
    try:
        while state.t < config.max_iters:
            comb = _combined_arrays(spec, state, rho)
            r = owner_residuals(np.vstack([state.ux, state.vx]), comb, rho)
            result = engine.run_iteration(state.t, kernel.bind(state.X), (r, state.fstats), beta, rho)
            X = _assemble(spec, parts, result.blocks)
            sums, fstats, dx2 = result.reduced
            ux, vx = sums[:M], sums[M:]
            xi = xi_update(spec, X, state.lam, rho, ux=ux)
            lam, mu = dual_update(spec, X, xi, state, rho, ux=ux, vx=vx)
            if check_complementarity:
                _check_complementarity(xi, lam)
            state = IterationState(state.t + 1, X, xi, lam, mu, ux, vx, fstats)

            ineq_m, eq_m = metrics.constraint_mapds(spec, ux=ux, vx=vx)
            dual_res = float(np.sqrt(dx2[0])) / scale
            done = ineq_m <= config.tol_ineq and eq_m <= config.tol_eq and dual_res <= config.tol_dual
            if state.t % every == 0 or done or state.t == config.max_iters:
                wall = (time.perf_counter() - t0) * 1e3
                trace.append((state.t, objective.value(fstats), ineq_m, eq_m, dual_res, wall))
            if store is not None and config.checkpoint_every and state.t % config.checkpoint_every == 0:
                save_state(store, spec, parts, state)
            if callback is not None:
                callback(state, trace)
            if done:
                break
    finally:
        if own_engine:
            engine.close()
    trace.final_state = state
    return state.X, trace
