"""Evaluation surface: metrics plus the reference oracles.

Collects the APD/MAPD metrics and the two reference solvers in one place
for scripts and the ``eval`` subcommand.
"""
from .metrics import (  # noqa: F401
    SolutionReport,
    constraint_mapds,
    eq_apd,
    eq_apd_matrix,
    ineq_apd,
    ineq_apd_matrix,
    mapd,
    objective_apd,
    report,
)
from .oracle import (  # noqa: F401
    IntegerSolution,
    OracleSolution,
    assignment_matrix,
    brute_force_integer,
    is_feasible,
    kkt_residual,
    oracle_solve,
)
