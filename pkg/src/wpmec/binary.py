"""Binary offloading: relaxed mode weights, closed-form mode selection,
and the alternating outer loop that couples them to the inner solvers.

Each user either computes its whole task locally (alpha = 0) or offloads
it entirely (alpha = 1). The relaxation lets alpha move in [0, 1]; the
selection rule compares the multiplier-weighted net benefit of the two
branches at the current inner solution, and the final weights are rounded
with one more inner solve at the rounded point.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import (Infeasible, LineSearchStall, MaxNewtonIters,
                     NoStrictlyFeasibleStart)
from .fractional import (InnerOutcome, ParametricProblem, SolveReport,
                         dinkelbach, worst_ratio)
from .model import (Regime, SystemParams, UserParams, evaluate,
                    feasibility_residuals, zero_allocation)
from .solution import DualVars, InnerSolution

LN2 = math.log(2.0)

ALT_MAX_ROUNDS = 30

_SKIPPABLE = (Infeasible, MaxNewtonIters, LineSearchStall,
              NoStrictlyFeasibleStart)


def round_alpha(relaxed) -> np.ndarray:
    """Threshold the relaxed mode weights at one half, ties to offload."""
    a = np.asarray(relaxed, dtype=float)
    if np.any(a < 0) or np.any(a > 1):
        raise ValueError("alpha must lie in [0, 1]")
    return np.where(a >= 0.5, 1.0, 0.0)


def mode_select_tdma(d: DualVars, candidate: InnerSolution, eta: float,
                     users: Sequence[UserParams],
                     sys: SystemParams) -> np.ndarray:
    """Offload-vs-local indicator from the relaxed solution's multipliers.

    Per user, F1 prices the offload branch (bits earned minus amplifier
    and slot costs) and F2 the local branch; local wins only when its
    price is strictly higher.
    """
    K = len(users)
    alloc = candidate.alloc
    y = candidate.y if candidate.y is not None \
        else alloc.tau * alloc.P
    out = np.empty(K)
    ups = 0.0 if d.upsilon is None else float(d.upsilon)
    for k, u in enumerate(users):
        lam = float(d.lam[k])
        mu = float(d.mu[k]) if d.mu is not None else float(d.rho[k])
        chi = float(d.chi[k]) if d.chi is not None else float(d.theta[k])
        tau_k = float(alloc.tau[k])
        y_k = float(y[k])
        if tau_k > 0.0 and y_k > 0.0:
            log_term = tau_k * math.log2(1.0 + u.g * y_k
                                         / (tau_k * sys.sigma2))
        else:
            log_term = 0.0
        F1 = (lam + chi) * sys.B / u.v * log_term \
            - sys.zeta * (mu + chi * eta) * (y_k + tau_k * u.P_c) \
            - ups * tau_k
        f_k = float(alloc.f[k])
        F2 = (lam + chi) * sys.T * f_k / sys.C \
            - (mu + chi * eta) * sys.T * sys.gamma_c * f_k ** 3
        out[k] = 0.0 if F1 < F2 else 1.0
    return out


def mode_select_noma(d: DualVars, candidate: InnerSolution, eta: float,
                     users: Sequence[UserParams],
                     sys: SystemParams) -> np.ndarray:
    """NOMA variant: the last (strongest) user prices its offload branch
    interference-free, everyone else against the stronger users' powers."""
    K = len(users)
    lv = candidate.log_vars
    d1 = lv.get("d1", math.log(max(candidate.alloc.tau1 or 1e-300,
                                   1e-300)))
    xv = lv.get("x")
    if xv is None:
        a = candidate.alloc.alpha if candidate.alloc.alpha is not None \
            else np.ones(K)
        xv = np.log(np.maximum(a * candidate.alloc.P, 1e-300))
    e_d1 = math.exp(d1)
    out = np.empty(K)
    for k, u in enumerate(users):
        lam = float(d.lam[k])
        mu = float(d.mu[k]) if d.mu is not None else float(d.rho[k])
        om = float(d.omega[k]) if d.omega is not None \
            else float(d.theta[k])
        varpi = float(d.varpi[k]) if d.varpi is not None else 0.0
        e_x = math.exp(float(xv[k]))
        interf = sys.sigma2 + sum(users[i].g * math.exp(float(xv[i]))
                                  for i in range(k + 1, K))
        rate = (sys.B / u.v) * math.log2(1.0 + u.g * e_x / interf)
        F1 = e_d1 * (lam * rate
                     - sys.zeta * (mu + om * eta) * (e_x + u.P_c))
        f_k = float(candidate.alloc.f[k])
        F2 = (varpi + om) * sys.T * f_k / sys.C \
            - (mu + om * eta) * sys.T * sys.gamma_c * f_k ** 3
        out[k] = 0.0 if F1 < F2 else 1.0
    return out


def _inner_binary(regime: Regime, eta: float, alpha: np.ndarray,
                  users, sys, Ps):
    if regime is Regime.TDMA_BINARY:
        from .convex import solve_p6
        sol = solve_p6(eta, alpha, users, sys, Ps=Ps)
        return sol, [sol.upsilon]
    from .nomasca import sca_loop, solve_p11
    sol, trace = sca_loop(solve_p11, eta, users, sys, Ps=Ps, alpha=alpha)
    return sol, trace


def _alternate_once(regime: Regime, eta: float, users, sys, Ps,
                    alpha0: np.ndarray, tol: float):
    """Alternate inner solves with mode reselection at fixed eta.

    The objective trace is kept nondecreasing: a reselection that would
    lower it is rolled back and the loop stops at the previous weights.
    """
    select = mode_select_tdma if regime is Regime.TDMA_BINARY \
        else mode_select_noma
    alpha = alpha0.copy()
    best = None
    trace = []
    for _ in range(ALT_MAX_ROUNDS):
        try:
            sol, inner_trace = _inner_binary(regime, eta, alpha, users,
                                             sys, Ps)
        except _SKIPPABLE:
            if best is not None:
                break
            if np.all(alpha == 0.0):
                raise
            alpha = np.zeros_like(alpha)
            continue
        if best is not None and sol.upsilon \
                < best[0].upsilon - 1e-9 * max(1.0, abs(best[0].upsilon)):
            break
        best = (sol, alpha.copy())
        trace.append(sol.upsilon)
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) \
                <= tol * max(1.0, abs(trace[-1])):
            break
        alpha_next = select(sol.duals, sol, eta, users, sys)
        if np.array_equal(alpha_next, alpha):
            break
        alpha = alpha_next
    # the selection rule can lock onto offloading when the local branch's
    # variables are inactive in the candidate; anchor with the all-local
    # pattern so the relaxation value never falls below it
    zeros = np.zeros_like(alpha0)
    if best is None or not np.array_equal(best[1], zeros):
        try:
            sol0, _ = _inner_binary(regime, eta, zeros, users, sys, Ps)
            if best is None or sol0.upsilon > best[0].upsilon:
                best = (sol0, zeros)
                trace.append(sol0.upsilon)
        except _SKIPPABLE:
            if best is None:
                raise
    return best[0], best[1], trace


def _round_and_resolve(regime: Regime, eta: float, alpha_relaxed,
                       users, sys, Ps):
    """Final inner solve at the rounded weights; flips the most ambiguous
    users one at a time if the rounding lands infeasible."""
    alpha_r = round_alpha(alpha_relaxed)
    order = np.argsort(np.abs(np.asarray(alpha_relaxed) - 0.5))
    tried = []
    for attempt in range(len(order) + 1):
        try:
            sol, _ = _inner_binary(regime, eta, alpha_r, users, sys, Ps)
            return sol, alpha_r
        except _SKIPPABLE:
            tried.append(alpha_r.copy())
            if attempt >= len(order):
                raise
            k = int(order[attempt])
            alpha_r = alpha_r.copy()
            alpha_r[k] = 1.0 - alpha_r[k]
    raise Infeasible("no feasible rounding found")


def alternate_solve(regime: Regime, users: Sequence[UserParams],
                    sys: SystemParams, Ps: float | None = None, *,
                    objective: str = "ce",
                    alpha_init: np.ndarray | None = None) -> SolveReport:
    """Max-min efficiency (or bits) under binary offloading.

    Runs the ratio iteration with an inner alternation between the fixed-
    mode convex solve and the closed-form mode reselection, then rounds
    the relaxed weights and re-solves once. The report carries the rounded
    allocation and its evaluated worst-user efficiency; the relaxed bound
    stays available as `eta_relaxed`.
    """
    if regime not in (Regime.TDMA_BINARY, Regime.NOMA_BINARY):
        raise ValueError("alternate_solve handles binary regimes only")
    if objective not in ("ce", "bits"):
        raise ValueError("objective must be 'ce' or 'bits'")
    Ps = sys.P_th if Ps is None else Ps
    K = len(users)
    alpha0 = np.ones(K) if alpha_init is None \
        else np.asarray(alpha_init, float)
    state = {"alpha": alpha0.copy()}

    def inner(eta: float) -> InnerOutcome:
        sol, alpha, trace = _alternate_once(regime, eta, users, sys, Ps,
                                            alpha0, sys.tol_sca)
        state["alpha"] = alpha
        alloc = sol.alloc.with_alpha(alpha)
        metrics = evaluate(alloc, regime, users, sys)
        return InnerOutcome(upsilon=sol.upsilon, alloc=alloc,
                            bits=np.array([m.bits for m in metrics]),
                            energy=np.array([m.energy for m in metrics]),
                            iterations=len(trace), solution=sol,
                            trace=trace)

    problem = ParametricProblem(regime=regime, solve_inner=inner,
                                users=users, sys=sys)
    if objective == "bits":
        outcome = inner(0.0)
        report = SolveReport(eta_star=float(np.min(outcome.bits)),
                             alloc=outcome.alloc, eta_trace=[0.0],
                             inner_traces=[outcome.trace],
                             residuals=None, iterations=1, converged=True,
                             regime=regime, bits=outcome.bits,
                             energy=outcome.energy,
                             solution=outcome.solution)
        eta_round = 0.0
    else:
        report = dinkelbach(problem, sys)
        eta_round = report.eta_star

    patterns = [round_alpha(state["alpha"]), np.zeros(K), np.ones(K)]
    seen = set()
    best_pack = None
    for pat in patterns:
        key = tuple(pat.tolist())
        if key in seen:
            continue
        seen.add(key)
        try:
            if np.array_equal(pat, patterns[0]):
                sol_r, alpha_r = _round_and_resolve(
                    regime, eta_round, state["alpha"], users, sys, Ps)
            else:
                sol_r, _ = _inner_binary(regime, eta_round, pat, users,
                                         sys, Ps)
                alpha_r = pat
        except _SKIPPABLE:
            continue
        alloc_r = sol_r.alloc.with_alpha(alpha_r)
        metrics = evaluate(alloc_r, regime, users, sys)
        bits = np.array([m.bits for m in metrics])
        energy = np.array([m.energy for m in metrics])
        value = float(np.min(bits)) if objective == "bits" \
            else worst_ratio(bits, energy)
        if best_pack is None or value > best_pack[0]:
            best_pack = (value, sol_r, alpha_r, alloc_r, bits, energy)
    if best_pack is None:
        raise Infeasible("no feasible binary mode pattern")
    value, sol_r, alpha_r, alloc_r, bits, energy = best_pack

    # any feasible binary point is feasible for the relaxation, so it
    # tightens the reported relaxed bound from below
    report.eta_relaxed = max(report.eta_star, value)
    report.eta_star = value
    report.alpha = alpha_r
    report.alloc = alloc_r
    report.bits = bits
    report.energy = energy
    report.solution = sol_r
    report.residuals = feasibility_residuals(alloc_r, regime, users, sys)
    return report


def make_binary_problem(regime: Regime, users, sys,
                        Ps: float | None = None) -> ParametricProblem:
    """Binary regime exposed in the same shape as the partial ones
    (used by sweeps that drive the ratio loop themselves)."""
    def inner(eta: float) -> InnerOutcome:
        alpha0 = np.ones(len(users))
        sol, alpha, trace = _alternate_once(regime, eta, users, sys,
                                            Ps or sys.P_th, alpha0,
                                            sys.tol_sca)
        alloc = sol.alloc.with_alpha(alpha)
        metrics = evaluate(alloc, regime, users, sys)
        return InnerOutcome(upsilon=sol.upsilon, alloc=alloc,
                            bits=np.array([m.bits for m in metrics]),
                            energy=np.array([m.energy for m in metrics]),
                            iterations=len(trace), solution=sol,
                            trace=trace)
    return ParametricProblem(regime=regime, solve_inner=inner,
                             users=users, sys=sys)
