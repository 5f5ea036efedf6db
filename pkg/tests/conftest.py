import numpy as np
import pytest
from hypothesis import settings

from assignopt.objective import make_objective
from assignopt.problem import ProblemSpec, generate_synthetic, validate

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def small_spec(I=6, J=3, M=2, N=1, kind="quadratic", seed=0, partitions=3, **kw):
    return generate_synthetic(I, J, M, N, kind, seed, partitions=partitions, **kw)


def handmade(omega, U, V, b, c, kind="linear", params=None, rho=1.0, beta=None, **kw):
    """Validated spec from explicit arrays; beta defaults to the sufficient bound."""
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    I, J = omega.shape
    U, V = (np.asarray(a, dtype=float) for a in (U, V))
    M = U.size // I if U.ndim < 2 else U.shape[1]
    N = V.size // I if V.ndim < 2 else V.shape[1]
    U, V = U.reshape(I, M), V.reshape(I, N)
    if beta is None:
        beta = max(0.5 * rho * I * (M + N), 1e-12)
    return validate(
        ProblemSpec(
            omega=omega, U=U, V=V, b=np.asarray(b, float).reshape(M, J), c=np.asarray(c, float).reshape(N, J),
            objective=make_objective(kind, params), rho=rho, beta=beta, partitions=kw.pop("partitions", 1), **kw,
        )
    )


@pytest.fixture
def tiny_quad():
    return small_spec()


@pytest.fixture
def tiny_log():
    return small_spec(kind="logarithmic")


def planted(I, J, M, N, kind="quadratic", seed=0, slack=0.05):
    """Tiny instance built around a random binary assignment that satisfies it.

    Equality targets are that assignment's totals and the inequality bounds
    leave a small slack, so brute force always finds a feasible point.
    """
    from assignopt.oracle import assignment_matrix
    from assignopt.problem import philox_generator

    base = generate_synthetic(I, J, M, N, kind, seed, partitions=1)
    rng = philox_generator(seed, stream=1)
    owner = rng.integers(-1, J, size=I)
    while np.any(np.bincount(owner[owner >= 0], minlength=J) == 0):
        owner = rng.integers(-1, J, size=I)
    X = assignment_matrix(owner, J)
    c = base.V.T @ X
    b = base.U.T @ X + slack * np.abs(base.U.T @ X) + slack
    b = np.where(b == 0, slack, b)
    return validate(base.replace(b=b, c=c)), owner


# acceptance results, filled by test_acceptance.py and echoed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=int):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
