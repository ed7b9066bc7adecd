"""Inner convex subproblems for the TDMA regimes.

Both problems maximize the worst-user margin Upsilon over the lifted
variables (tau0, tau_k, y_k = tau_k * P_k, f_k, Upsilon). The slot-power
product makes the offload-bits term a perspective of log(1 + snr), hence
concave, and the harvest constraint linear in (tau0, tau, y). The
binary-mode variant weights the offload and local branches by a fixed
mode vector alpha.

Everything is solved in scaled variables (slots in frame units,
frequencies in units of the harvest-implied cap, and so on) so the
barrier tolerances mean the same thing across power sweeps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import barrier
from .errors import Infeasible
from .model import (Allocation, Regime, SystemParams, UserParams,
                    harvested_power)
from .solution import DualVars, InnerSolution

LN2 = math.log(2.0)

# slots shorter than this (seconds) are treated as exactly zero on recovery
TAU_CLAMP = 1e-10
START_FRACTIONS = (0.1, 0.3, 0.6, 0.85, 0.01, 1e-3)


@dataclass(frozen=True)
class InnerProblem:
    """Argument bundle for one parametric TDMA inner solve."""

    eta: float
    users: tuple[UserParams, ...]
    sys: SystemParams
    Ps: float | None = None
    alpha: np.ndarray | None = None   # fixed mode weights; None = partial

    def solve(self) -> InnerSolution:
        if self.alpha is None:
            return solve_p3(self.eta, self.users, self.sys, Ps=self.Ps)
        return solve_p6(self.eta, self.alpha, self.users, self.sys,
                        Ps=self.Ps)


class _PolyPersp(barrier.SmoothFn):
    """const + lin.x + sum c_i x_i^3 + sum w * tau * ln(1 + a*y/tau).

    Covers every TDMA constraint: boxes and the time budget are affine,
    the harvest constraint adds a cubic, bits constraints add perspective
    terms. Perspective terms are +inf outside tau > 0, y >= 0.
    """

    def __init__(self, n: int, const: float = 0.0, lin=None,
                 cubic: tuple = (), persp: tuple = ()):
        self.n = n
        self.const = float(const)
        self.lin = np.zeros(n) if lin is None else np.asarray(lin, float)
        self.cubic = tuple(cubic)    # (index, coef)
        self.persp = tuple(persp)    # (i_tau, i_y, a, coef)

    def value(self, x):
        v = self.const + float(self.lin @ x)
        for i, c in self.cubic:
            v += c * x[i] ** 3
        for it, iy, a, w in self.persp:
            tau, y = x[it], x[iy]
            if tau <= 0.0 or y < 0.0:
                return math.inf
            s = a * y / tau
            if not math.isfinite(s):
                return math.inf
            v += w * tau * math.log1p(s)
        return v

    def grad(self, x):
        g = self.lin.copy()
        for i, c in self.cubic:
            g[i] += 3.0 * c * x[i] ** 2
        for it, iy, a, w in self.persp:
            tau, y = x[it], x[iy]
            s = a * y / tau
            g[it] += w * (math.log1p(s) - s / (1.0 + s))
            g[iy] += w * a / (1.0 + s)
        return g

    def hess(self, x):
        if not self.cubic and not self.persp:
            return None
        H = np.zeros((self.n, self.n))
        for i, c in self.cubic:
            H[i, i] += 6.0 * c * x[i]
        for it, iy, a, w in self.persp:
            tau, y = x[it], x[iy]
            s = a * y / tau
            q = w / (tau * (1.0 + s) ** 2)
            H[it, it] += -q * s * s
            H[it, iy] += q * a * s
            H[iy, it] += q * a * s
            H[iy, iy] += -q * a * a
        return H


class _Scaling:
    """Per-instance constants: harvest rates, caps and variable scales."""

    def __init__(self, users: Sequence[UserParams], sys: SystemParams,
                 Ps: float):
        self.users = list(users)
        self.sys = sys
        self.Ps = Ps
        self.K = len(self.users)
        self.P_E = np.array([harvested_power(Ps, u, sys) for u in self.users])
        self.P_r = np.array([u.P_r for u in self.users])
        self.net = self.P_E - self.P_r
        self.dead = bool(np.any(self.net <= 0.0))
        net_pos = np.maximum(self.net, 1e-30)
        self.f_scale = (net_pos / sys.gamma_c) ** (1.0 / 3.0)
        self.y_scale = sys.T * net_pos / sys.zeta
        self.E_scale = np.maximum(sys.T * self.P_E, 1e-30)
        self.c1 = np.array([sys.B * sys.T / (u.v * LN2) for u in self.users])
        self.c2 = sys.T * self.f_scale / sys.C
        self.a = np.array([u.g for u in self.users]) * self.y_scale \
            / (sys.T * sys.sigma2)
        tau_ref = 1.0 / max(2 * self.K, 2)
        bits_ref = self.c2 + self.c1 * tau_ref * np.log1p(self.a / tau_ref)
        self.obj_scale = max(1.0, float(np.max(bits_ref)))


def _zero_solution(K: int, regime: Regime, Ps: float, eta: float,
                   alpha: np.ndarray | None) -> InnerSolution:
    from .model import zero_allocation
    alloc = zero_allocation(K, regime, Ps)
    if alpha is not None:
        alloc = alloc.with_alpha(alpha)
    duals = DualVars(lam=np.zeros(K), rho=np.zeros(K), theta=np.zeros(K),
                     beta=0.0, mu=np.zeros(K), upsilon=0.0, chi=np.zeros(K))
    return InnerSolution(upsilon=0.0, alloc=alloc, duals=duals,
                         y=np.zeros(K))


def _build(eta: float, users: Sequence[UserParams], sys: SystemParams,
           Ps: float, alpha: np.ndarray | None):
    """Assemble the scaled program. Returns (scaling, layout, constraints,
    index map of named constraint rows)."""
    sc = _Scaling(users, sys, Ps)
    K = sc.K
    w_o = np.ones(K) if alpha is None else np.asarray(alpha, float)
    w_f = np.ones(K) if alpha is None else 1.0 - w_o
    off = [k for k in range(K) if w_o[k] > 1e-9]
    loc = [k for k in range(K) if w_f[k] > 1e-9]

    idx_tau = {}
    idx_y = {}
    idx_f = {}
    pos = 1
    for k in off:
        idx_tau[k] = pos
        pos += 1
    for k in off:
        idx_y[k] = pos
        pos += 1
    for k in loc:
        idx_f[k] = pos
        pos += 1
    i_U = pos
    n = pos + 1
    layout = dict(n=n, i_U=i_U, idx_tau=idx_tau, idx_y=idx_y, idx_f=idx_f,
                  w_o=w_o, w_f=w_f, off=off, loc=loc)

    # a lower box on Upsilon keeps the region bounded; it must sit below
    # any epigraph bound reachable at this eta, so widen it with eta
    ups_lb = 10.0 + 2.0 * (sc.obj_scale
                           + eta * sys.T * float(np.max(sc.P_E))) \
        / sc.obj_scale
    layout["ups_lb"] = ups_lb

    cons: list[barrier.SmoothFn] = []
    tag: dict[str, dict] = {"minbits": {}, "eh": {}, "epi": {}}

    def box_lower(i):
        lin = np.zeros(n)
        lin[i] = -1.0
        cons.append(_PolyPersp(n, lin=lin))

    box_lower(0)
    for k in off:
        box_lower(idx_tau[k])
        box_lower(idx_y[k])
    for k in loc:
        box_lower(idx_f[k])
    tag["n_guards"] = len(cons)
    lin = np.zeros(n)
    lin[i_U] = -1.0
    cons.append(_PolyPersp(n, const=-ups_lb, lin=lin))

    # frame-time budget: tau0 + sum w_o_k tau_k <= T (frame units)
    lin = np.zeros(n)
    lin[0] = 1.0
    for k in off:
        lin[idx_tau[k]] = w_o[k]
    tag["time"] = len(cons)
    cons.append(_PolyPersp(n, const=-1.0, lin=lin))

    T, zeta, gam = sys.T, sys.zeta, sys.gamma_c
    for k, u in enumerate(users):
        # R_k and E_k pieces in original units as functions of scaled vars
        def bits_parts(k=k, u=u):
            lin_b = np.zeros(n)
            persp = []
            if k in idx_f:
                lin_b[idx_f[k]] = w_f[k] * sc.c2[k]
            if k in idx_tau:
                persp.append((idx_tau[k], idx_y[k], sc.a[k],
                              w_o[k] * sc.c1[k]))
            return lin_b, persp

        def energy_parts(k=k, u=u):
            lin_e = np.zeros(n)
            cubic = []
            lin_e[0] = T * u.P_r
            if k in idx_tau:
                lin_e[idx_tau[k]] = w_o[k] * zeta * T * u.P_c
                lin_e[idx_y[k]] = w_o[k] * zeta * sc.y_scale[k]
            if k in idx_f:
                cubic.append((idx_f[k], w_f[k] * T * gam * sc.f_scale[k] ** 3))
            return lin_e, cubic

        lin_b, persp_b = bits_parts()
        lin_e, cubic_e = energy_parts()

        if u.R_min > 0.0:
            tag["minbits"][k] = len(cons)
            cons.append(_PolyPersp(
                n, const=u.R_min / sc.obj_scale, lin=-lin_b / sc.obj_scale,
                persp=[(it, iy, a, -w / sc.obj_scale)
                       for it, iy, a, w in persp_b]))

        tag["eh"][k] = len(cons)
        lin_c2 = lin_e.copy()
        lin_c2[0] -= T * sc.P_E[k]
        cons.append(_PolyPersp(
            n, lin=lin_c2 / sc.E_scale[k],
            cubic=[(i, c / sc.E_scale[k]) for i, c in cubic_e]))

        tag["epi"][k] = len(cons)
        lin_g = (eta * lin_e - lin_b) / sc.obj_scale
        lin_g[i_U] += 1.0
        cons.append(_PolyPersp(
            n, lin=lin_g,
            cubic=[(i, eta * c / sc.obj_scale) for i, c in cubic_e],
            persp=[(it, iy, a, -w / sc.obj_scale)
                   for it, iy, a, w in persp_b]))
    return sc, layout, cons, tag


def _upsilon_margin(cons, tag, x, i_U, ups_lb):
    """Push Upsilon strictly below every epigraph bound."""
    x = x.copy()
    x[i_U] = 0.0
    worst = min(-cons[i].value(x) for i in tag["epi"].values())
    x[i_U] = max(-ups_lb + 1.0, worst - max(0.5, 0.1 * abs(worst)))
    return x


def _start_point(sc: _Scaling, layout, cons, tag):
    """Heuristic strictly feasible start, escalating the spend fraction;
    falls back to phase I."""
    n, i_U = layout["n"], layout["i_U"]
    K = sc.K
    sys = sc.sys
    tau0_hat = 0.5
    budget = tau0_hat * sys.T * sc.net   # J available per user
    x = None
    for frac in START_FRACTIONS:
        x = np.zeros(n)
        x[0] = tau0_hat
        for k in layout["off"]:
            x[layout["idx_tau"][k]] = 0.4 / K
            tau_k = 0.4 * sys.T / K
            spend = 0.5 * frac * budget[k] / max(layout["w_o"][k], 1e-9)
            y = max(spend / sys.zeta - tau_k * sc.users[k].P_c, 0.0)
            x[layout["idx_y"][k]] = max(y / sc.y_scale[k], 1e-8)
        for k in layout["loc"]:
            spend = 0.5 * frac * budget[k] / max(layout["w_f"][k], 1e-9)
            f = (spend / (sys.T * sys.gamma_c)) ** (1.0 / 3.0)
            if sc.users[k].R_min > 0 and layout["w_f"][k] > 0.5:
                # make the local branch alone cover the bits floor
                f = max(f, 1.3 * sc.users[k].R_min * sys.C / sys.T)
            x[layout["idx_f"][k]] = max(f / sc.f_scale[k], 1e-8)
        x = _upsilon_margin(cons, tag, x, i_U, layout["ups_lb"])
        vals = [c.value(x) for c in cons]
        if all(math.isfinite(v) and v < -1e-10 for v in vals):
            return x
    x = barrier.phase1(cons, x, n_guards=tag["n_guards"])
    return _upsilon_margin(cons, tag, x, i_U, layout["ups_lb"])


def _recover(res: barrier.BarrierResult, sc: _Scaling, layout, tag,
             eta: float, alpha: np.ndarray | None) -> InnerSolution:
    sys, K = sc.sys, sc.K
    x = res.x
    tau0 = max(float(x[0]) * sys.T, 0.0)
    tau = np.zeros(K)
    y = np.zeros(K)
    f = np.zeros(K)
    P = np.zeros(K)
    for k, i in layout["idx_tau"].items():
        tau[k] = x[i] * sys.T
    for k, i in layout["idx_y"].items():
        y[k] = x[i] * sc.y_scale[k]
    for k, i in layout["idx_f"].items():
        f[k] = max(x[i], 0.0) * sc.f_scale[k]
    for k in range(K):
        if tau[k] < TAU_CLAMP:
            tau[k] = 0.0
            y[k] = 0.0
        else:
            P[k] = max(y[k], 0.0) / tau[k]
        if f[k] < 1e-12 * sc.f_scale[k]:
            f[k] = 0.0
    alloc = Allocation(tau0=tau0, tau=tau, P=P, f=f, Ps=sc.Ps,
                       alpha=None if alpha is None
                       else np.asarray(alpha, float))

    lam = np.zeros(K)
    rho = np.zeros(K)
    theta = np.zeros(K)
    for k, i in tag["minbits"].items():
        lam[k] = res.duals[i]                       # both sides /obj_scale
    for k, i in tag["eh"].items():
        rho[k] = res.duals[i] * sc.obj_scale / sc.E_scale[k]
    for k, i in tag["epi"].items():
        theta[k] = res.duals[i]
    beta = res.duals[tag["time"]] * sc.obj_scale / sys.T
    if alpha is None:
        duals = DualVars(lam=lam, rho=rho, theta=theta, beta=beta)
    else:
        duals = DualVars(lam=lam, mu=rho, chi=theta, upsilon=beta,
                         rho=rho, theta=theta, beta=beta)
    return InnerSolution(upsilon=float(x[layout["i_U"]]) * sc.obj_scale,
                         alloc=alloc, duals=duals,
                         kkt_residual=res.kkt_residual,
                         newton_iters=res.newton_iters, y=y)


def _solve(eta: float, users, sys: SystemParams, Ps: float | None,
           alpha: np.ndarray | None) -> InnerSolution:
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    Ps = sys.P_th if Ps is None else Ps
    sc_probe = _Scaling(users, sys, Ps)
    regime = Regime.TDMA_PARTIAL if alpha is None else Regime.TDMA_BINARY
    if sc_probe.dead:
        if any(u.R_min > 0 for u in users):
            worst = max(u.R_min for u in users)
            raise Infeasible("no user-positive harvest but R_min > 0",
                             certificate=worst)
        return _zero_solution(len(users), regime, Ps, eta, alpha)
    sc, layout, cons, tag = _build(eta, users, sys, Ps, alpha)
    x0 = _start_point(sc, layout, cons, tag)
    obj_lin = np.zeros(layout["n"])
    obj_lin[layout["i_U"]] = 1.0
    objective = barrier.QuadObjective(obj_lin, reg=1e-12)
    res = barrier.barrier_solve(objective, cons, x0)
    return _recover(res, sc, layout, tag, eta, alpha)


def solve_p3(eta: float, users: Sequence[UserParams], sys: SystemParams,
             Ps: float | None = None) -> InnerSolution:
    """Max-min inner problem for TDMA partial offloading at parameter eta.

    Station power is pinned to its cap (that is always optimal for this
    family) unless `Ps` overrides it. Raises Infeasible when the min-bits
    targets are unreachable under the harvest budget.
    """
    return _solve(eta, users, sys, Ps, None)


def solve_p6(eta: float, alpha, users: Sequence[UserParams],
             sys: SystemParams, Ps: float | None = None) -> InnerSolution:
    """Binary-mode variant of solve_p3 with fixed mode weights alpha.

    alpha_k = 1 keeps only user k's offload branch, alpha_k = 0 only its
    local branch; fractional values blend both (relaxation steps).
    """
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0) or np.any(alpha > 1):
        raise ValueError("alpha must lie in [0, 1]")
    return _solve(eta, users, sys, Ps, alpha)


barrier_solve = barrier.barrier_solve
