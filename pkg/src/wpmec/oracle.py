"""Brute-force verification: dense grid search with coordinate refinement
for tiny user counts, and exhaustive mode enumeration for binary regimes.

These paths share nothing with the barrier/SCA solvers except the metric
evaluators, so agreement between the two is meaningful evidence. Grids
are deliberately coarse (the refinement pass sharpens the winner), which
keeps the oracle a lower bound the solvers must beat.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace as dc_replace
from typing import Callable, Sequence

import numpy as np

from .errors import Infeasible, NoFeasiblePoint
from .model import (Allocation, Regime, SystemParams, UserParams, evaluate,
                    feasibility_residuals, harvested_power, residual_scales)

LN2 = math.log(2.0)


@dataclass(frozen=True)
class GridSpec:
    n_tau: int = 16
    n_p: int = 24
    n_f: int = 24

    def __post_init__(self):
        if max(self.n_tau, self.n_p, self.n_f) > 64:
            raise ValueError("grid sizes are capped at 64 per axis")


def _objective_value(alloc, regime, users, sys, objective):
    metrics = evaluate(alloc, regime, users, sys)
    if objective == "bits":
        return min(m.bits for m in metrics)
    return min(m.ce for m in metrics)


def _feasible(alloc, regime, users, sys, slack=1e-9):
    res = feasibility_residuals(alloc, regime, users, sys)
    return bool(np.all(res <= slack * residual_scales(regime, users, sys)))


def _axis_grids(users, sys, Ps, grid: GridSpec):
    """Log-spaced power/frequency axes bounded by harvest causality."""
    P_E = np.array([harvested_power(Ps, u, sys) for u in users])
    net = np.maximum(P_E - np.array([u.P_r for u in users]), 0.0)
    phi_max = sys.T * np.maximum(P_E, 1e-30)
    f_cap = (np.maximum(net, 1e-30) / sys.gamma_c) ** (1.0 / 3.0)
    # efficiency optima sit at very short harvest times when the bits
    # floor is low, so pad the linear axis with log-spaced short slots
    tau_axis = np.unique(np.concatenate([
        np.linspace(0.0, sys.T, grid.n_tau),
        np.geomspace(1e-6 * sys.T, 0.2 * sys.T,
                     min(grid.n_tau, 10))]))
    tau_min = tau_axis[1] if tau_axis.size > 1 else sys.T
    p_cap = phi_max / (sys.zeta * tau_min)
    f_axes = [np.concatenate([[0.0], np.geomspace(max(f_cap[k] * 1e-6, 1e-3),
                                                  f_cap[k], grid.n_f - 1)])
              for k in range(len(users))]
    p_axes = [np.concatenate([[0.0], np.geomspace(max(p_cap[k] * 1e-9, 1e-12),
                                                  p_cap[k], grid.n_p - 1)])
              for k in range(len(users))]
    return tau_axis, p_axes, f_axes, P_E, net


def _best_local_offload(u, sys, tau0, slot, budget, p_axis, f_axis,
                        eta_objective, alpha=None):
    """Best (value, P, f) for one user at fixed times under its budget.

    eta_objective maps (bits, energy) arrays to the per-user score; the
    blend weight alpha switches the binary-mode bookkeeping.
    """
    P, F = np.meshgrid(p_axis, f_axis, indexing="ij")
    if slot > 0.0:
        off_bits = (sys.B * slot / u.v) * np.log2(1.0 + u.g * P / sys.sigma2)
        off_e = sys.zeta * slot * (P + u.P_c) * (P > 0)
    else:
        off_bits = np.zeros_like(P)
        off_e = np.zeros_like(P)
    loc_bits = sys.T * F / sys.C
    loc_e = sys.T * sys.gamma_c * F ** 3
    if alpha is None:
        bits = loc_bits + off_bits
        spend = off_e + loc_e
        energy = tau0 * u.P_r + spend
    else:
        bits = (1.0 - alpha) * loc_bits + alpha * off_bits
        spend = alpha * off_e + (1.0 - alpha) * loc_e
        energy = tau0 * u.P_r + spend
    feas = (spend <= budget + 1e-18) & (bits >= u.R_min)
    score = np.where(feas, eta_objective(bits, energy), -np.inf)
    i = int(np.argmax(score))
    v = float(score.flat[i])
    if not np.isfinite(v):
        return None
    return v, float(P.flat[i]), float(F.flat[i])


def _score_fn(objective):
    if objective == "bits":
        return lambda bits, energy: bits

    def ce(bits, energy):
        out = np.zeros_like(bits)
        pos = bits > 0
        out[pos] = bits[pos] / energy[pos]
        return out
    return ce


def refine(alloc: Allocation, regime: Regime, users: Sequence[UserParams],
           sys: SystemParams, objective: str = "ce", rounds: int = 16,
           first_step: float = 0.1) -> tuple[Allocation, float]:
    """Coordinate-descent ascent from a feasible allocation.

    Perturbs one decision at a time, keeps improvements that stay
    feasible, and halves the step whenever a full sweep stalls. Purely
    evaluation-driven, hence usable on any regime.
    """
    if not _feasible(alloc, regime, users, sys):
        return alloc, -np.inf
    K = len(users)
    noma = regime.is_noma

    def fields(a):
        base = [("tau0", None)]
        base += [("tau1", None)] if noma else [("tau", k) for k in range(K)]
        base += [("P", k) for k in range(K)]
        base += [("f", k) for k in range(K)]
        return base

    def read(a, name, k):
        v = getattr(a, name)
        return float(v) if k is None else float(v[k])

    def write(a, name, k, val):
        if k is None:
            return dc_replace(a, **{name: val})
        arr = getattr(a, name).copy()
        arr[k] = val
        return dc_replace(a, **{name: arr})

    scales = {}
    for name, k in fields(alloc):
        cur = read(alloc, name, k)
        if name in ("tau0", "tau", "tau1"):
            scales[(name, k)] = sys.T
        elif name == "P":
            scales[(name, k)] = max(cur, 1e-3)
        else:
            scales[(name, k)] = max(cur, 1e6)

    best = alloc
    best_val = _objective_value(alloc, regime, users, sys, objective)
    step = first_step

    def try_move(cur, cur_val, name, k, new_val):
        if new_val < 0.0:
            return None
        cand = write(cur, name, k, new_val)
        if not _feasible(cand, regime, users, sys):
            return None
        v = _objective_value(cand, regime, users, sys, objective)
        if v > cur_val:
            return cand, v
        return None

    def opening_moves(cur):
        """Joint slot+power candidates: products stuck at (0, 0) cannot
        be opened one coordinate at a time."""
        cands = []
        res = feasibility_residuals(cur, regime, users, sys)
        headroom = -res[K:2 * K]
        if noma:
            slots = [("tau1", None)] if (cur.tau1 or 0.0) <= 0.0 else []
        else:
            slots = [("tau", k) for k in range(K) if cur.tau[k] <= 0.0]
        for name, k in slots:
            used = cur.tau0 + (cur.tau1 or 0.0) if noma \
                else cur.tau0 + float(np.sum(cur.tau))
            delta = 0.25 * (sys.T - used)
            if delta <= 1e-12:
                continue
            for c in (0.1, 0.4, 0.8):
                kk = range(K) if k is None else [k]
                cand = write(cur, name, k, delta)
                P = cand.P.copy()
                for i in kk:
                    P[i] = max(c * headroom[i] / (sys.zeta * delta)
                               - users[i].P_c, 0.0)
                cand = dc_replace(cand, P=P)
                cands.append(cand)
        return cands

    for _ in range(rounds):
        improved = False
        for cand in opening_moves(best):
            if not _feasible(cand, regime, users, sys):
                continue
            v = _objective_value(cand, regime, users, sys, objective)
            if v > best_val:
                best, best_val = cand, v
                improved = True
        for name, k in fields(best):
            cur = read(best, name, k)
            moves = [cur + step * scales[(name, k)],
                     cur - step * scales[(name, k)]]
            if cur > 0.0:
                moves += [cur * (1.0 + step), cur / (1.0 + step), 0.0]
            for new_val in moves:
                hit = try_move(best, best_val, name, k, new_val)
                if hit is None:
                    continue
                best, best_val = hit
                improved = True
                # greedy ray: repeat a winning multiplicative move
                if cur > 0.0 and new_val > 0.0:
                    ratio = new_val / cur
                    if abs(math.log(ratio)) > 1e-12:
                        for _ in range(60):
                            nxt = read(best, name, k) * ratio
                            hit = try_move(best, best_val, name, k, nxt)
                            if hit is None:
                                break
                            best, best_val = hit
                break
        if not improved:
            step *= 0.5
    return best, best_val


def grid_maxmin(regime: Regime, users: Sequence[UserParams],
                sys: SystemParams, grid: GridSpec = GridSpec(),
                objective: str = "ce", Ps: float | None = None,
                refine_rounds: int = 56
                ) -> tuple[Allocation, float]:
    """Best worst-user efficiency (or bits) on a dense grid, then refined.

    Supports up to two users; binary regimes go through enumerate_modes.
    Raises NoFeasiblePoint when nothing on the grid satisfies the
    constraints.
    """
    K = len(users)
    if K > 2:
        raise ValueError("the grid oracle supports K <= 2")
    if regime.is_binary:
        def inner(alpha):
            return _grid_fixed_modes(regime, users, sys, grid, objective,
                                     Ps, alpha, refine_rounds=refine_rounds)
        alpha, (alloc, val) = enumerate_modes(users, sys, inner)
        return alloc, val
    return _grid_fixed_modes(regime, users, sys, grid, objective, Ps, None,
                             refine_rounds=refine_rounds)


def _grid_fixed_modes(regime, users, sys, grid, objective, Ps, alpha,
                      refine_rounds: int = 56):
    Ps = sys.P_th if Ps is None else Ps
    K = len(users)
    tau_axis, p_axes, f_axes, P_E, net = _axis_grids(users, sys, Ps, grid)
    score = _score_fn(objective)
    noma = regime.is_noma

    slices = []   # best candidate per harvest-time slice
    w = np.ones(K) if alpha is None else np.asarray(alpha, float)

    for tau0 in tau_axis:
        budget = tau0 * net
        if np.any(tau0 * np.array([u.P_r for u in users])
                  > tau0 * P_E + 1e-18):
            continue
        slice_best = None
        if noma:
            slot_axis = tau_axis[tau_axis <= sys.T - tau0 + 1e-15]
            for tau1 in slot_axis:
                cand = _noma_point(users, sys, tau0, float(tau1), budget,
                                   p_axes, f_axes, score, w,
                                   regime, Ps)
                if cand is not None and (slice_best is None
                                         or cand[1] > slice_best[1]):
                    slice_best = cand
        else:
            per_user = []
            ok = True
            for k, u in enumerate(users):
                marks = []
                slots = tau_axis[tau_axis <= sys.T - tau0 + 1e-15]
                for slot in slots:
                    a_k = None if alpha is None else float(w[k])
                    r = _best_local_offload(u, sys, tau0, float(slot),
                                            float(budget[k]), p_axes[k],
                                            f_axes[k], score, alpha=a_k)
                    if r is not None:
                        marks.append((float(slot), r))
                if not marks:
                    ok = False
                    break
                per_user.append(marks)
            if ok:
                slice_best = _combine_tdma(users, sys, tau0, per_user, w,
                                           alpha, regime, Ps)
        if slice_best is not None:
            slices.append(slice_best)
    if not slices:
        raise NoFeasiblePoint("no feasible grid point")
    # refining only the global winner can strand the search in the wrong
    # harvest-time basin; polish the best few slices instead
    slices.sort(key=lambda c: -c[1])
    best_alloc, best_val = slices[0]
    if refine_rounds > 0:
        for alloc0, _ in slices[:8]:
            a, v = refine(alloc0, regime, users, sys, objective,
                          rounds=refine_rounds)
            if v > best_val:
                best_alloc, best_val = a, v
    return best_alloc, best_val


def _combine_tdma(users, sys, tau0, per_user, w, alpha, regime, Ps):
    """Pick each user's slot subject to the shared frame budget."""
    K = len(users)
    best = None
    for choice in itertools.product(*[range(len(m)) for m in per_user]):
        slots = [per_user[k][choice[k]][0] for k in range(K)]
        used = tau0 + sum((w[k] if alpha is not None else 1.0) * slots[k]
                          for k in range(K))
        if used > sys.T + 1e-15:
            continue
        worst = min(per_user[k][choice[k]][1][0] for k in range(K))
        if best is None or worst > best[0]:
            best = (worst, slots, choice)
    if best is None:
        return None
    _, slots, choice = best
    P = np.array([per_user[k][choice[k]][1][1] for k in range(K)])
    f = np.array([per_user[k][choice[k]][1][2] for k in range(K)])
    alloc = Allocation(tau0=float(tau0), tau=np.array(slots, float), P=P,
                       f=f, Ps=Ps,
                       alpha=None if alpha is None else np.asarray(w))
    return alloc, best[0]


def _noma_point(users, sys, tau0, tau1, budget, p_axes, f_axes, score, w,
                regime, Ps):
    """Exhaustive joint power choice, per-user frequency, K <= 2."""
    K = len(users)
    combos = itertools.product(*[range(len(p_axes[k])) for k in range(K)])
    best = None
    alpha = w if regime is Regime.NOMA_BINARY else None
    for combo in combos:
        P = np.array([p_axes[k][combo[k]] for k in range(K)])
        off_e = np.array([sys.zeta * tau1 * (P[k] + users[k].P_c)
                          * (P[k] > 0) for k in range(K)])
        wo = w if alpha is not None else np.ones(K)
        vals = np.empty(K)
        fs = np.empty(K)
        ok = True
        for k, u in enumerate(users):
            interf = sys.sigma2 + sum(
                (wo[i] if alpha is not None else 1.0) * users[i].g * P[i]
                for i in range(k + 1, K))
            if tau1 > 0.0 and P[k] > 0.0:
                off_bits = (sys.B * tau1 / u.v) \
                    * math.log2(1.0 + u.g * P[k] / interf)
            else:
                off_bits = 0.0
            f_ax = f_axes[k]
            loc_bits = sys.T * f_ax / sys.C
            loc_e = sys.T * sys.gamma_c * f_ax ** 3
            if alpha is not None:
                bits = (1.0 - wo[k]) * loc_bits + wo[k] * off_bits
                spend = wo[k] * off_e[k] + (1.0 - wo[k]) * loc_e
            else:
                bits = loc_bits + off_bits
                spend = loc_e + off_e[k]
            energy = tau0 * u.P_r + spend
            feas = (spend <= budget[k] + 1e-18) & (bits >= u.R_min)
            s = np.where(feas, score(bits, energy), -np.inf)
            i = int(np.argmax(s))
            if not np.isfinite(s[i]):
                ok = False
                break
            vals[k] = s[i]
            fs[k] = f_ax[i]
        if not ok:
            continue
        worst = float(np.min(vals))
        if best is None or worst > best[1]:
            alloc = Allocation(tau0=float(tau0), tau1=float(tau1), P=P,
                               f=fs.copy(), Ps=Ps,
                               alpha=None if alpha is None
                               else np.asarray(w, float))
            best = (alloc, worst)
    return best


def enumerate_modes(users: Sequence[UserParams], sys: SystemParams,
                    inner: Callable[[np.ndarray], tuple[Allocation, float]],
                    ) -> tuple[np.ndarray, tuple[Allocation, float]]:
    """Exact best mode vector by trying all 2^K patterns with the supplied
    fixed-mode solver; deterministic lexicographic tie-break."""
    K = len(users)
    if K > 8:
        raise ValueError("mode enumeration supports K <= 8")
    best = None
    for bits_pattern in itertools.product((0.0, 1.0), repeat=K):
        alpha = np.array(bits_pattern)
        try:
            alloc, val = inner(alpha)
        except (NoFeasiblePoint, Infeasible):
            continue
        if best is None or val > best[1][1]:
            best = (alpha, (alloc, val))
    if best is None:
        raise NoFeasiblePoint("no mode pattern is feasible")
    return best
