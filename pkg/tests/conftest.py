import math
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from threadpoolctl import threadpool_limits

settings.register_profile(
    "default", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(autouse=True, scope="session")
def _single_thread():
    with threadpool_limits(limits=1):
        yield


def spread_complement_matrix(n, rng, extra_rows=0):
    """Rows spanning the orthogonal complement of random flat vectors.

    With one removed direction ``v`` (entries ``+-1/sqrt(n)``), every column
    submatrix satisfies ``Phi_S' Phi_S = I - v_S v_S'``, so the RIP constant
    is small and known in closed form.
    """
    k = 1 + extra_rows
    flat = rng.choice([-1.0, 1.0], size=(n, k)) / math.sqrt(n)
    q, _ = np.linalg.qr(np.column_stack([flat, rng.standard_normal((n, n - k))]))
    return q[:, k:].T


def quiet_matrix(a):
    from wbpdq.model import SensingMatrix

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return SensingMatrix(a)


def cvx_solve(problem):
    """Solve a cvxpy problem tightly with Clarabel."""
    import cvxpy as cp

    with warnings.catch_warnings():
        # 'optimal_inaccurate' is accepted; callers compare at their own tolerance
        warnings.simplefilter("ignore")
        problem.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10,
                      tol_feas=1e-10, max_iter=500)
    assert problem.status in ("optimal", "optimal_inaccurate"), problem.status
    return problem
