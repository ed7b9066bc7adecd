import math

import numpy as np
import pytest

from wpmec.barrier import (AffineFn, CallableFn, QuadObjective,
                           barrier_solve, phase1)
from wpmec.errors import Infeasible, NoStrictlyFeasibleStart


def test_scalar_quadratic():
    # maximize -x^2 subject to x >= -1
    obj = CallableFn(lambda x: -x[0] ** 2,
                     lambda x: np.array([-2 * x[0]]),
                     lambda x: np.array([[-2.0]]))
    res = barrier_solve(obj, [AffineFn(np.array([-1.0]), -1.0)],
                        np.array([-0.5]))
    assert res.x[0] == pytest.approx(0.0, abs=1e-8)


def test_disc_constrained_linear():
    # maximize x + y subject to x^2 + y^2 <= 1
    obj = QuadObjective(np.array([1.0, 1.0]), reg=0.0)
    ball = CallableFn(lambda x: float(x @ x) - 1.0,
                      lambda x: 2.0 * x,
                      lambda x: 2.0 * np.eye(2))
    res = barrier_solve(obj, [ball], np.zeros(2))
    root_half = math.sqrt(2.0) / 2.0
    assert res.x == pytest.approx([root_half, root_half], abs=1e-8)


def test_known_multiplier():
    # maximize -(x - 2)^2 subject to x <= 1: optimum x = 1, multiplier 2
    obj = CallableFn(lambda x: -(x[0] - 2.0) ** 2,
                     lambda x: np.array([-2.0 * (x[0] - 2.0)]),
                     lambda x: np.array([[-2.0]]))
    res = barrier_solve(obj, [AffineFn(np.array([1.0]), -1.0)],
                        np.array([0.0]))
    assert res.x[0] == pytest.approx(1.0, abs=1e-8)
    assert res.duals[0] == pytest.approx(2.0, rel=1e-6)
    assert res.kkt_residual <= 1e-8


@pytest.mark.parametrize("seed", range(6))
def test_random_lp_against_reference(seed):
    """Random bounded LPs cross-checked against an independent solver."""
    from scipy.optimize import linprog

    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    m = 2 * n + int(rng.integers(1, 4))
    A = rng.normal(size=(m, n))
    b = rng.uniform(0.5, 2.0, size=m)   # feasible at the origin
    c = rng.normal(size=n)
    ref = linprog(-c, A_ub=A, b_ub=b, bounds=[(-20, 20)] * n,
                  method="highs")
    assert ref.success
    box_lo = [AffineFn(-np.eye(n)[i], -20.0) for i in range(n)]
    box_hi = [AffineFn(np.eye(n)[i], -20.0) for i in range(n)]
    cons = [AffineFn(A[i], -b[i]) for i in range(m)] + box_lo + box_hi
    res = barrier_solve(QuadObjective(c, reg=0.0), cons, np.zeros(n))
    assert res.obj == pytest.approx(-ref.fun, rel=1e-6, abs=1e-6)


def test_feasible_start_required():
    obj = QuadObjective(np.array([1.0]), reg=0.0)
    with pytest.raises(NoStrictlyFeasibleStart):
        barrier_solve(obj, [AffineFn(np.array([1.0]), 0.0)],
                      np.array([1.0]))


class TestPhase1:
    def test_finds_interior_point(self):
        # region: 0.5 <= x <= 1, start outside at x = 0
        cons = [AffineFn(np.array([-1.0]), 0.5),
                AffineFn(np.array([1.0]), -1.0)]
        x = phase1(cons, np.array([0.0]))
        assert cons[0].value(x) < -1e-10
        assert cons[1].value(x) < -1e-10

    def test_detects_empty_region(self):
        # x >= 1 and x <= -1 simultaneously
        cons = [AffineFn(np.array([-1.0]), 1.0),
                AffineFn(np.array([1.0]), 1.0)]
        with pytest.raises(Infeasible) as exc:
            phase1(cons, np.array([0.0]))
        assert exc.value.certificate >= 1.0 - 1e-6

    def test_already_feasible_passthrough(self):
        cons = [AffineFn(np.array([1.0]), -1.0)]
        x = phase1(cons, np.array([0.0]))
        assert x[0] == pytest.approx(0.0)
