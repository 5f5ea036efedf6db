"""Correctness metrics: absolute percentage differences and their means."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ZeroDenominator, ZeroReference


def objective_apd(sol, reference):
    """``|(sol - reference) / reference|``; ``reference`` may be a lower bound."""
    if reference == 0:
        raise ZeroReference("reference objective is zero")
    return abs((sol - reference) / reference)


def ineq_apd(x_j, u_m, b_mj):
    """Relative one-sided violation of ``x_j^T u_m <= b_mj``."""
    if b_mj == 0:
        raise ZeroDenominator("inequality bound is zero")
    return abs(max(float(np.dot(x_j, u_m)) - b_mj, 0.0) / b_mj)


def eq_apd(x_j, v_n, c_nj):
    """Relative deviation of ``x_j^T v_n`` from ``c_nj``."""
    if c_nj == 0:
        raise ZeroDenominator("equality target is zero")
    return abs((float(np.dot(x_j, v_n)) - c_nj) / c_nj)


def ineq_apd_matrix(lhs, b):
    """Elementwise APDs for ``lhs = X^T U`` (M x J); NaN where ``b`` is inactive."""
    lhs = np.asarray(lhs, dtype=float)
    active = np.isfinite(b)
    if np.any(b[active] == 0):
        raise ZeroDenominator("inequality bound is zero")
    out = np.full(b.shape, np.nan)
    out[active] = np.abs(np.maximum(lhs[active] - b[active], 0.0) / b[active])
    return out


def eq_apd_matrix(lhs, c):
    lhs = np.asarray(lhs, dtype=float)
    active = np.isfinite(c)
    if np.any(c[active] == 0):
        raise ZeroDenominator("equality target is zero")
    out = np.full(c.shape, np.nan)
    out[active] = np.abs((lhs[active] - c[active]) / c[active])
    return out


def mapd(apds):
    """Mean over active entries (NaN marks inactive); 0 when nothing is active."""
    vals = np.asarray(apds, dtype=float)
    vals = vals[~np.isnan(vals)]
    return float(vals.mean()) if vals.size else 0.0


def constraint_mapds(spec, X=None, ux=None, vx=None):
    """(ineq MAPD, eq MAPD) of a solution, from ``X`` or precomputed products."""
    if ux is None:
        ux = spec.U.T @ X
    if vx is None:
        vx = spec.V.T @ X
    return mapd(ineq_apd_matrix(ux, spec.b)), mapd(eq_apd_matrix(vx, spec.c))


@dataclass
class SolutionReport:
    objective: float
    objective_apd: float | None
    ineq_mapd: float
    eq_mapd: float
    ineq_apd: list
    eq_apd: list
    reference: float | None = None

    def to_json(self):
        def clean(v):
            if isinstance(v, float) and np.isnan(v):
                return None
            if isinstance(v, list):
                return [clean(x) for x in v]
            return v

        return json.dumps({k: clean(v) for k, v in asdict(self).items()}, indent=2)


def report(spec, X, reference=None):
    """Metrics for a continuous or binary solution ``X`` (I x J)."""
    ux, vx = spec.U.T @ X, spec.V.T @ X
    ia, ea = ineq_apd_matrix(ux, spec.b), eq_apd_matrix(vx, spec.c)
    value = spec.objective.f_eval(spec.omega, X)
    return SolutionReport(
        objective=value,
        objective_apd=None if reference is None else objective_apd(value, reference),
        ineq_mapd=mapd(ia),
        eq_mapd=mapd(ea),
        ineq_apd=ia.tolist(),
        eq_apd=ea.tolist(),
        reference=reference,
    )
