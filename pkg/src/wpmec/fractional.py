"""Generalized fractional programming engine shared by all four regimes.

The outer loop solves max-min bits/energy by repeatedly solving the
parametric problem max-min (bits - eta * energy) and moving eta to the
worst attained ratio. Starting from eta = 0 the ratio sequence is
nondecreasing and the iteration is Newton-like on the parametric value,
so convergence is fast; the loop stops once eta is a fixed point to
within tol_outer (relative at the efficiency scale).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InnerSolverFailure
from .model import Allocation, Regime, SystemParams, UserParams, evaluate
from .model import feasibility_residuals as _residuals
from .solution import InnerSolution


@dataclass
class InnerOutcome:
    """What the engine needs from one inner solve."""

    upsilon: float
    alloc: Allocation
    bits: np.ndarray
    energy: np.ndarray
    iterations: int = 1
    solution: InnerSolution | None = None
    trace: list = field(default_factory=list)


@dataclass
class ParametricProblem:
    """A regime bound to its inner solver.

    `solve_inner(eta)` must return a feasible allocation together with its
    per-user bits and energy; the engine owns the eta iteration.
    """

    regime: Regime
    solve_inner: Callable[[float], InnerOutcome]
    eta0: float = 0.0
    users: Sequence[UserParams] | None = None
    sys: SystemParams | None = None


@dataclass
class SolveReport:
    """Outer-loop result: the max-min efficiency and how we got there."""

    eta_star: float
    alloc: Allocation | None
    eta_trace: list[float]
    inner_traces: list
    residuals: np.ndarray | None
    iterations: int
    converged: bool
    regime: Regime | None = None
    bits: np.ndarray | None = None
    energy: np.ndarray | None = None
    solution: InnerSolution | None = None
    eta_relaxed: float | None = None
    alpha: np.ndarray | None = None
    status: str = "ok"


def worst_ratio(bits: np.ndarray, energy: np.ndarray) -> float:
    """min_k bits/energy with the idle convention 0/0 = 0."""
    ratios = []
    for b, e in zip(np.atleast_1d(bits), np.atleast_1d(energy)):
        if b <= 0.0:
            ratios.append(0.0)
        elif e <= 0.0:
            ratios.append(np.inf)
        else:
            ratios.append(b / e)
    return float(min(ratios))


def _finalize(problem: ParametricProblem, outcome: InnerOutcome,
              eta: float, trace, inner_traces, n, converged,
              status="ok") -> SolveReport:
    res = None
    if problem.users is not None and problem.sys is not None \
            and outcome.alloc is not None:
        res = _residuals(outcome.alloc, problem.regime, problem.users,
                         problem.sys)
    return SolveReport(eta_star=eta, alloc=outcome.alloc, eta_trace=trace,
                       inner_traces=inner_traces, residuals=res,
                       iterations=n, converged=converged,
                       regime=problem.regime, bits=outcome.bits,
                       energy=outcome.energy, solution=outcome.solution,
                       status=status)


def dinkelbach(problem: ParametricProblem, sys: SystemParams) -> SolveReport:
    """Iterate the parametric problem until eta reaches its fixed point.

    Stops when |ratio - eta| <= tol_outer * max(1, eta) or after
    sys.max_iters inner solves. A failing inner solve after at least one
    success returns the best iterate flagged non-converged; a failure on
    the very first solve propagates as InnerSolverFailure.
    """
    if problem.eta0 < 0:
        raise ValueError("eta0 must be nonnegative")
    eta = float(problem.eta0)
    trace = [eta]
    inner_traces = []
    best: tuple[float, InnerOutcome] | None = None
    for n in range(1, sys.max_iters + 1):
        try:
            outcome = problem.solve_inner(eta)
        except InnerSolverFailure:
            raise
        except Exception as exc:
            if best is None:
                raise InnerSolverFailure(
                    f"inner solver failed on first iteration: {exc}",
                    iteration=n) from exc
            eta_b, out_b = best
            return _finalize(problem, out_b, eta_b, trace, inner_traces, n,
                             converged=False,
                             status=f"inner-failure@{n}: {exc}")
        inner_traces.append(outcome.trace or [outcome.upsilon])
        ratio = worst_ratio(outcome.bits, outcome.energy)
        if best is None or ratio >= best[0]:
            best = (ratio, outcome)
        if ratio <= eta + sys.tol_outer * max(1.0, abs(eta)):
            # fixed point: the attained efficiency no longer climbs (an
            # approximate inner oracle may even dip below eta; report the
            # best iterate, which brackets the optimum from below)
            eta_b, out_b = best
            trace.append(eta_b)
            return _finalize(problem, out_b, eta_b, trace, inner_traces,
                             n, converged=True)
        eta = ratio
        trace.append(eta)
    eta_b, out_b = best
    return _finalize(problem, out_b, eta_b, trace, inner_traces,
                     sys.max_iters, converged=False, status="max-iters")


def max_min_bits(problem: ParametricProblem,
                 sys: SystemParams) -> SolveReport:
    """Single inner solve at eta = 0: maximize the worst user's bits.

    eta_star then reports bits, not bits per joule.
    """
    outcome = problem.solve_inner(0.0)
    report = _finalize(problem, outcome, float(outcome.upsilon), [0.0],
                       [outcome.trace or [outcome.upsilon]], 1,
                       converged=True)
    report.eta_star = float(np.min(outcome.bits)) if outcome.bits is not None \
        else float(outcome.upsilon)
    return report


def make_tdma_partial(users: Sequence[UserParams], sys: SystemParams,
                      Ps: float | None = None) -> ParametricProblem:
    """TDMA partial-offloading regime wired to its convex inner solver."""
    from .convex import solve_p3

    def inner(eta: float) -> InnerOutcome:
        sol = solve_p3(eta, users, sys, Ps=Ps)
        metrics = evaluate(sol.alloc, Regime.TDMA_PARTIAL, users, sys)
        return InnerOutcome(upsilon=sol.upsilon, alloc=sol.alloc,
                            bits=np.array([m.bits for m in metrics]),
                            energy=np.array([m.energy for m in metrics]),
                            iterations=sol.newton_iters, solution=sol)

    return ParametricProblem(regime=Regime.TDMA_PARTIAL, solve_inner=inner,
                             users=users, sys=sys)


def make_noma_partial(users: Sequence[UserParams], sys: SystemParams,
                      Ps: float | None = None) -> ParametricProblem:
    """NOMA partial-offloading regime wired to its SCA inner solver."""
    from .nomasca import sca_loop, solve_p9

    def inner(eta: float) -> InnerOutcome:
        sol, trace = sca_loop(solve_p9, eta, users, sys, Ps=Ps)
        metrics = evaluate(sol.alloc, Regime.NOMA_PARTIAL, users, sys)
        return InnerOutcome(upsilon=sol.upsilon, alloc=sol.alloc,
                            bits=np.array([m.bits for m in metrics]),
                            energy=np.array([m.energy for m in metrics]),
                            iterations=len(trace), solution=sol, trace=trace)

    return ParametricProblem(regime=Regime.NOMA_PARTIAL, solve_inner=inner,
                             users=users, sys=sys)
