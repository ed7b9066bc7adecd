"""Dense log-barrier interior-point solver for small smooth convex programs.

Solves  maximize f0(x)  s.t.  c_i(x) <= 0  by following the central path
min_x  -t*f0(x) - sum_i log(-c_i(x))  with t increased by a fixed factor
each centering round. Problems here have a few dozen variables at most,
so Newton systems are solved densely via Cholesky.

Callers are expected to pre-scale variables and constraints to O(1);
tolerances below are interpreted in those scaled units.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import (Infeasible, LineSearchStall, MaxNewtonIters,
                     NoStrictlyFeasibleStart)

GAP_TOL = 1e-9        # m / t_final: suboptimality surrogate at exit
NEWTON_TOL = 1e-10    # half squared Newton decrement per centering
POLISH_TOL = 1e-9     # stationarity residual target after the last round
T_GROWTH = 10.0
MAX_NEWTON_PER_CENTER = 100
ARMIJO = 0.01
BACKTRACK = 0.5
QUAD_PHASE = 1e-5     # decrement below which full Newton steps are taken


class SmoothFn:
    """Twice-differentiable scalar function of a point x.

    value() may return +inf outside the function's domain; grad/hess are
    then never called there.
    """

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess(self, x: np.ndarray) -> np.ndarray | None:
        """Return None for affine functions (zero Hessian)."""
        raise NotImplementedError


class AffineFn(SmoothFn):
    """a . x + b"""

    def __init__(self, a: np.ndarray, b: float):
        self.a = np.asarray(a, dtype=float)
        self.b = float(b)

    def value(self, x):
        return float(self.a @ x + self.b)

    def grad(self, x):
        return self.a

    def hess(self, x):
        return None


class QuadObjective(SmoothFn):
    """c . x - reg * |x|^2, a linear objective with a proximal term.

    The tiny quadratic makes symmetric instances return their symmetric
    optimum deterministically instead of an arbitrary face point.
    """

    def __init__(self, c: np.ndarray, reg: float = 1e-12):
        self.c = np.asarray(c, dtype=float)
        self.reg = float(reg)
        n = self.c.shape[0]
        self._h = None if reg == 0.0 else -2.0 * self.reg * np.eye(n)

    def value(self, x):
        return float(self.c @ x - self.reg * (x @ x))

    def grad(self, x):
        if self.reg == 0.0:
            return self.c
        return self.c - 2.0 * self.reg * x

    def hess(self, x):
        return self._h


class CallableFn(SmoothFn):
    """Adapter wrapping plain (value, grad, hess) callables."""

    def __init__(self, value: Callable, grad: Callable,
                 hess: Callable | None = None):
        self._v, self._g, self._h = value, grad, hess

    def value(self, x):
        return float(self._v(x))

    def grad(self, x):
        return np.asarray(self._g(x), dtype=float)

    def hess(self, x):
        if self._h is None:
            return None
        return np.asarray(self._h(x), dtype=float)


@dataclass
class BarrierResult:
    x: np.ndarray
    obj: float
    duals: np.ndarray          # one multiplier per constraint, same order
    kkt_residual: float        # inf-norm of stationarity at (x, duals)
    newton_iters: int
    t_final: float


def _values(constraints, x) -> np.ndarray:
    return np.array([c.value(x) for c in constraints])


def _in_domain(constraints, x) -> bool:
    for c in constraints:
        v = c.value(x)
        if not np.isfinite(v) or v >= 0.0:
            return False
    return True


def _phi(objective, constraints, x, t) -> float:
    vals = _values(constraints, x)
    if np.any(vals >= 0.0) or not np.all(np.isfinite(vals)):
        return np.inf
    return -t * objective.value(x) - float(np.sum(np.log(-vals)))


def _grad_hess(objective, constraints, x, t):
    g = -t * objective.grad(x)
    oh = objective.hess(x)
    n = x.shape[0]
    H = np.zeros((n, n)) if oh is None else -t * oh.copy()
    for c in constraints:
        cv = c.value(x)
        cg = c.grad(x)
        inv = 1.0 / (-cv)
        g += cg * inv
        H += np.outer(cg, cg) * (inv * inv)
        ch = c.hess(x)
        if ch is not None:
            H += ch * inv
    return g, H


def _solve_newton(H, g):
    """Newton direction with Jacobi equilibration and one refinement pass.

    Barrier Hessians near the path end are diagonally dominated by the
    active constraints (condition numbers beyond 1e16); symmetric diagonal
    scaling keeps the factorization meaningful there.
    """
    dscale = np.sqrt(np.maximum(np.diag(H), 1e-300))
    Hs = H / np.outer(dscale, dscale)
    gs = g / dscale
    jitter = 0.0
    for attempt in range(10):
        try:
            L = np.linalg.cholesky(Hs + jitter * np.eye(H.shape[0]))
            break
        except np.linalg.LinAlgError:
            jitter = 1e-14 if attempt == 0 else jitter * 1e3
    else:
        raise MaxNewtonIters("Hessian factorization failed")

    def solve_scaled(rhs):
        return np.linalg.solve(L.T, np.linalg.solve(L, rhs))

    ds = -solve_scaled(gs)
    r = gs + Hs @ ds
    ds -= solve_scaled(r)
    return ds / dscale


def _center(objective, constraints, x, t, max_newton):
    """Newton minimization of -t*f0 - sum log(-c) from a feasible x.

    Near the path end the Newton system is solved at the edge of double
    precision; a stagnating decrement there means the point is centered
    as well as the arithmetic allows, so we accept it instead of failing.
    """
    iters = 0
    best_lam2 = np.inf
    stall = 0
    for _ in range(max_newton):
        g, H = _grad_hess(objective, constraints, x, t)
        d = _solve_newton(H, g)
        lam2 = float(-g @ d)
        iters += 1
        if lam2 / 2.0 <= NEWTON_TOL:
            return x, iters
        if lam2 < best_lam2 * (1.0 - 1e-3):
            best_lam2 = lam2
            stall = 0
        else:
            stall += 1
            if stall >= 12 and lam2 / 2.0 <= 1e-3:
                return x, iters
            if stall >= 25 and lam2 / 2.0 <= 1e-1:
                return x, iters
        if lam2 / 2.0 <= QUAD_PHASE:
            # quadratic-convergence region: plain damped Newton, domain only
            step = 1.0
            while step > 1e-14 and not _in_domain(constraints, x + step * d):
                step *= BACKTRACK
            if step <= 1e-14:
                return x, iters
            x = x + step * d
            continue
        phi0 = _phi(objective, constraints, x, t)
        step = 1.0
        while step > 1e-14:
            xn = x + step * d
            if _phi(objective, constraints, xn, t) \
                    <= phi0 - ARMIJO * step * lam2:
                break
            step *= BACKTRACK
        else:
            if lam2 / 2.0 <= 1e-3:
                return x, iters
            raise LineSearchStall(
                f"no progress at decrement {lam2 / 2.0:.3e}")
        x = xn
    raise MaxNewtonIters(f"centering exceeded {max_newton} Newton steps")


def _polish(objective, constraints, x, t, max_steps=60):
    """Full Newton steps at fixed t until the stationarity residual of
    the multiplier estimates bottoms out."""
    best_x, best_res = x, np.inf
    for _ in range(max_steps):
        g, H = _grad_hess(objective, constraints, x, t)
        res = float(np.max(np.abs(g))) / t
        if res < best_res:
            best_x, best_res = x, res
        if res <= POLISH_TOL or res > 10.0 * best_res:
            break
        d = _solve_newton(H, g)
        step = 1.0
        while step > 1e-14 and not _in_domain(constraints, x + step * d):
            step *= BACKTRACK
        if step <= 1e-14:
            break
        x = x + step * d
    return best_x, best_res


def _refine_duals(objective, constraints, x, duals):
    """Least-squares fit of the multipliers at the returned point.

    The path-following estimates 1/(t*(-c)) inherit the centering error;
    projecting the objective gradient onto the active constraint gradients
    (nonnegatively) usually gains a few orders of stationarity accuracy.
    """
    from scipy.optimize import nnls

    grad0 = objective.grad(x).copy()
    scale = max(float(np.max(duals)), 1.0)
    active = [i for i, nu in enumerate(duals) if nu > 1e-12 * scale]
    if not active:
        return duals, float(np.max(np.abs(grad0)))
    for i, nu in enumerate(duals):
        if i not in active:
            grad0 -= nu * constraints[i].grad(x)
    A = np.column_stack([constraints[i].grad(x) for i in active])
    col_scale = np.maximum(np.linalg.norm(A, axis=0), 1e-300)
    nu0 = np.array([duals[i] for i in active]) * col_scale
    # proximal fit: active gradients can be linearly dependent, so anchor
    # the solution at the path estimates to keep complementary slackness
    damp = 1e-4
    A_aug = np.vstack([A / col_scale, damp * np.eye(len(active))])
    b_aug = np.concatenate([grad0, damp * nu0])
    try:
        w_scaled, _ = nnls(A_aug, b_aug)
        w = w_scaled / col_scale
    except RuntimeError:
        w = np.maximum(np.linalg.lstsq(A, grad0, rcond=None)[0], 0.0)
    res = grad0 - A @ w
    new = duals.copy()
    for a, wi in zip(active, w):
        new[a] = wi
    # report whichever multiplier set is more stationary
    old_res = objective.grad(x).copy()
    for c, nu in zip(constraints, duals):
        old_res -= nu * c.grad(x)
    if float(np.max(np.abs(res))) <= float(np.max(np.abs(old_res))):
        return new, float(np.max(np.abs(res)))
    return duals, float(np.max(np.abs(old_res)))


def barrier_solve(objective: SmoothFn, constraints: Sequence[SmoothFn],
                  x0: np.ndarray, *, gap_tol: float = GAP_TOL,
                  t0: float = 1.0,
                  max_newton: int = MAX_NEWTON_PER_CENTER,
                  early_stop: Callable[[np.ndarray], bool] | None = None,
                  polish: bool = True) -> BarrierResult:
    """Maximize `objective` over {x : c_i(x) <= 0} from strictly feasible x0.

    Returns the path endpoint with per-constraint multiplier estimates
    1 / (t * (-c_i)). Raises NoStrictlyFeasibleStart if x0 is infeasible,
    LineSearchStall / MaxNewtonIters on Newton breakdown.
    """
    x = np.asarray(x0, dtype=float).copy()
    if not _in_domain(constraints, x):
        raise NoStrictlyFeasibleStart(
            "barrier start violates a constraint or its domain")
    m = max(len(constraints), 1)
    t = t0
    total = 0
    stopped_early = False
    while True:
        x, it = _center(objective, constraints, x, t, max_newton)
        total += it
        if early_stop is not None and early_stop(x):
            stopped_early = True
            break
        if m / t <= gap_tol:
            break
        t *= T_GROWTH
    if polish and not stopped_early:
        x, _ = _polish(objective, constraints, x, t)
    cvals = _values(constraints, x)
    duals = 1.0 / (t * (-cvals))
    duals, kkt = _refine_duals(objective, constraints, x, duals)
    return BarrierResult(x=x, obj=objective.value(x), duals=duals,
                         kkt_residual=kkt, newton_iters=total, t_final=t)


class _ExtendFn(SmoothFn):
    """A constraint of x viewed on the extended point (x, s)."""

    def __init__(self, inner: SmoothFn, n: int, shift: bool):
        self.inner = inner
        self.n = n
        self.shift = shift   # subtract the slack variable s

    def value(self, z):
        v = self.inner.value(z[:self.n])
        return v - z[self.n] if self.shift else v

    def grad(self, z):
        g = np.zeros(self.n + 1)
        g[:self.n] = self.inner.grad(z[:self.n])
        if self.shift:
            g[self.n] = -1.0
        return g

    def hess(self, z):
        ih = self.inner.hess(z[:self.n])
        if ih is None:
            return None
        H = np.zeros((self.n + 1, self.n + 1))
        H[:self.n, :self.n] = ih
        return H


def phase1(constraints: Sequence[SmoothFn], x0: np.ndarray, *,
           n_guards: int = 0, target_margin: float = 1e-10) -> np.ndarray:
    """Find a strictly feasible point, or prove there is none.

    The first `n_guards` constraints are treated as domain guards (variable
    bounds protecting log/cubic domains): x0 must satisfy them strictly and
    they are never relaxed. The rest are relaxed by a shared slack s which
    is then minimized; the search stops as soon as s < -target_margin.
    Raises Infeasible with the optimal worst residual as certificate when
    the minimum stays nonnegative.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.shape[0]
    guards, soft = constraints[:n_guards], constraints[n_guards:]
    gvals = _values(guards, x0) if guards else np.array([-1.0])
    if np.any(gvals >= 0.0) or not np.all(np.isfinite(gvals)):
        raise NoStrictlyFeasibleStart("phase-I start violates a domain guard")
    svals = _values(soft, x0) if soft else np.array([-1.0])
    if not np.all(np.isfinite(svals)):
        raise NoStrictlyFeasibleStart("phase-I start outside constraint domain")
    if np.max(svals) < -target_margin:
        return x0.copy()
    spread = max(float(np.max(svals) - np.min(svals)), 1.0)
    s0 = float(np.max(svals)) + 0.1 * spread
    z0 = np.concatenate([x0, [s0]])
    ext = [_ExtendFn(c, n, shift=False) for c in guards] \
        + [_ExtendFn(c, n, shift=True) for c in soft]
    floor = AffineFn(np.concatenate([np.zeros(n), [-1.0]]),
                     -(abs(s0) + 10.0) * 10.0)
    obj = QuadObjective(np.concatenate([np.zeros(n), [-1.0]]), reg=1e-12)

    def deep_enough(z):
        return z[n] < -10.0 * target_margin and \
            float(np.max(_values(constraints, z[:n]))) < -target_margin

    res = barrier_solve(obj, ext + [floor], z0, gap_tol=1e-11,
                        early_stop=deep_enough, polish=False)
    x = res.x[:n]
    worst = float(np.max(_values(constraints, x)))
    if worst < -target_margin:
        return x
    raise Infeasible("no strictly feasible point", certificate=worst)
