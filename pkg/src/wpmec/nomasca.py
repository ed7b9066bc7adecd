"""NOMA inner solvers: exponential-domain subproblems sharpened by
successive convex approximation.

Powers and the shared slot live in log domain (P_k = exp(x_k),
tau1 = exp(d1)), turning the harvest and energy terms into sums of
exponentials of affine functions. The offload-bits surrogate keeps two
under-estimators, both tight at the expansion point:

  * the signal log-sum-exp is replaced by its tangent in x;
  * the subtracted interference log is replaced by its tangent in the
    powers, which upper-bounds a concave-in-power term.

Their difference is a concave, positive rate surrogate, so the
bits-link constraint exp(z) <= c * exp(d1) * rate becomes the convex
constraint z <= d1 + log(c * rate_surrogate(x)). Surrogate bits never
exceed the true bits, hence every iterate is feasible for the original
problem and the objective trace climbs monotonically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import barrier
from .convex import _Scaling
from .errors import Infeasible
from .model import (Allocation, Regime, SystemParams, UserParams,
                    zero_allocation)
from .solution import DualVars, InnerSolution

LN2 = math.log(2.0)

X_FLOOR = math.log(1e-12)    # powers below a picowatt count as off
X_CEIL = math.log(1e6)
Z_SPAN = 40.0                # z ranges over [ln(scale) - span, ln(scale) + 4]
D1_SPAN = math.log(1e-12)
SCA_MAX_ROUNDS = 50
TAU_CLAMP = 1e-10


@dataclass(frozen=True)
class ScaState:
    """Linearization points and progress of one SCA run."""

    z_bar: np.ndarray
    x_bar: np.ndarray
    j: int = 1
    trace: tuple = ()

    def advanced(self, z_new, x_new, upsilon) -> "ScaState":
        return ScaState(z_bar=np.asarray(z_new, float),
                        x_bar=np.asarray(x_new, float), j=self.j + 1,
                        trace=self.trace + (float(upsilon),))


def linearize_exp(z_bar: float, z: float) -> float:
    """First-order expansion of exp at z_bar: a global under-estimator."""
    e = math.exp(z_bar)
    return e + e * (z - z_bar)


class _ExpPoly(barrier.SmoothFn):
    """const + lin.x + sum c_i x_i^3 + sum w_j exp(a_j . x + b_j)."""

    def __init__(self, n, const=0.0, lin=None, cubic=(), exps=()):
        self.n = n
        self.const = float(const)
        self.lin = np.zeros(n) if lin is None else np.asarray(lin, float)
        self.cubic = tuple(cubic)            # (index, coef)
        self.exps = tuple(exps)              # (coef, {idx: slope}, offset)

    def value(self, x):
        v = self.const + float(self.lin @ x)
        for i, c in self.cubic:
            v += c * x[i] ** 3
        for w, slopes, off in self.exps:
            arg = off + sum(s * x[i] for i, s in slopes.items())
            if arg > 700.0:
                return math.inf
            v += w * math.exp(arg)
        return v

    def grad(self, x):
        g = self.lin.copy()
        for i, c in self.cubic:
            g[i] += 3.0 * c * x[i] ** 2
        for w, slopes, off in self.exps:
            e = w * math.exp(off + sum(s * x[i]
                                       for i, s in slopes.items()))
            for i, s in slopes.items():
                g[i] += e * s
        return g

    def hess(self, x):
        if not self.cubic and not self.exps:
            return None
        H = np.zeros((self.n, self.n))
        for i, c in self.cubic:
            H[i, i] += 6.0 * c * x[i]
        for w, slopes, off in self.exps:
            e = w * math.exp(off + sum(s * x[i]
                                       for i, s in slopes.items()))
            items = list(slopes.items())
            for i, si in items:
                for j, sj in items:
                    H[i, j] += e * si * sj
        return H


class _RateLink(barrier.SmoothFn):
    """z - d1 - log(c * (f1_lin(x) - f2_sur(x))) <= 0.

    f1_lin is affine, f2_sur is an affine-plus-exponentials convex upper
    bound of the interference log, so the bracket is concave and the
    constraint convex on {bracket > 0}.
    """

    def __init__(self, n, i_z, i_d1, log_c, aff0, aff, exp_terms):
        self.n = n
        self.i_z = i_z
        self.i_d1 = i_d1
        self.log_c = float(log_c)
        self.aff0 = float(aff0)                  # constant of f1_lin - f2 const part
        self.aff = np.asarray(aff, float)        # affine slopes (over x block)
        self.exp_terms = tuple(exp_terms)        # (coef>0, idx): subtract coef*e^{x_idx}

    def _bracket(self, x):
        r = self.aff0 + float(self.aff @ x)
        for c, i in self.exp_terms:
            r -= c * math.exp(x[i])
        return r

    def value(self, x):
        r = self._bracket(x)
        if r <= 0.0 or not math.isfinite(r):
            return math.inf
        return x[self.i_z] - x[self.i_d1] - self.log_c - math.log(r)

    def grad(self, x):
        r = self._bracket(x)
        dr = self.aff.copy()
        for c, i in self.exp_terms:
            dr[i] -= c * math.exp(x[i])
        g = -dr / r
        g[self.i_z] += 1.0
        g[self.i_d1] -= 1.0
        return g

    def hess(self, x):
        r = self._bracket(x)
        dr = self.aff.copy()
        H = np.zeros((self.n, self.n))
        for c, i in self.exp_terms:
            e = c * math.exp(x[i])
            dr[i] -= e
            H[i, i] += e / r          # -d2r/r with d2r = -e
        H += np.outer(dr, dr) / (r * r)
        return H


def init_sca_state(users: Sequence[UserParams], sys: SystemParams,
                   Ps: float, alpha: np.ndarray | None = None) -> ScaState:
    """Expansion point: half the harvest spent on an equal-power shared
    slot of 0.4 T, true rates evaluated there."""
    K = len(users)
    w_o = np.ones(K) if alpha is None else np.asarray(alpha, float)
    sc = _Scaling(users, sys, Ps)
    tau0 = 0.5 * sys.T
    # keep the slot's circuit cost well inside every offloader's budget
    tau1 = 0.4 * sys.T
    for k, u in enumerate(users):
        if w_o[k] > 1e-9 and u.P_c > 0.0:
            budget = tau0 * max(sc.net[k], 0.0)
            tau1 = min(tau1, 0.3 * budget / (sys.zeta * u.P_c))
    tau1 = max(tau1, 1e-9 * sys.T)
    x_bar = np.empty(K)
    for k, u in enumerate(users):
        spend = 0.5 * tau0 * max(sc.net[k], 0.0)
        P = max(spend / (sys.zeta * tau1) - u.P_c, 1e-9)
        x_bar[k] = math.log(max(w_o[k] * P, 1e-12))
    z_bar = np.empty(K)
    for k, u in enumerate(users):
        interf = sys.sigma2 + sum(u2.g * math.exp(x_bar[i])
                                  for i, u2 in enumerate(users) if i > k)
        rate_nats = math.log1p(u.g * math.exp(x_bar[k]) / interf)
        bits = (sys.B * tau1 / (u.v * LN2)) * rate_nats
        z_bar[k] = math.log(max(bits, 1e-9))
    return ScaState(z_bar=z_bar, x_bar=x_bar)


def _build_noma(eta, users, sys, Ps, state: ScaState,
                alpha: np.ndarray | None):
    sc = _Scaling(users, sys, Ps)
    K = sc.K
    w_o = np.ones(K) if alpha is None else np.asarray(alpha, float)
    w_f = np.ones(K) if alpha is None else 1.0 - w_o
    off = [k for k in range(K) if w_o[k] > 1e-9]
    loc = [k for k in range(K) if w_f[k] > 1e-9]

    # layout: tau0_hat, d1, x (off users), z (off users), f_hat (loc), U
    idx_x, idx_z, idx_f = {}, {}, {}
    pos = 2
    for k in off:
        idx_x[k] = pos
        pos += 1
    for k in off:
        idx_z[k] = pos
        pos += 1
    for k in loc:
        idx_f[k] = pos
        pos += 1
    i_U = pos
    n = pos + 1
    ups_lb = 10.0 + 2.0 * (sc.obj_scale
                           + eta * sys.T * float(np.max(sc.P_E))) \
        / sc.obj_scale
    z_hi = math.log(10.0 * sc.obj_scale)
    layout = dict(n=n, i_U=i_U, idx_x=idx_x, idx_z=idx_z, idx_f=idx_f,
                  off=off, loc=loc, w_o=w_o, w_f=w_f, ups_lb=ups_lb,
                  z_hi=z_hi)

    cons: list[barrier.SmoothFn] = []
    tag = {"minbits": {}, "link": {}, "eh": {}, "epi": {}}

    def aff_con(i, sign, bound):
        lin = np.zeros(n)
        lin[i] = sign
        cons.append(_ExpPoly(n, const=-sign * bound, lin=lin))

    aff_con(0, -1.0, 0.0)                       # tau0 >= 0
    aff_con(1, 1.0, math.log(sys.T))            # d1 <= ln T
    aff_con(1, -1.0, math.log(sys.T) + D1_SPAN)  # d1 floor
    for k in off:
        aff_con(idx_x[k], -1.0, X_FLOOR)
        aff_con(idx_x[k], 1.0, X_CEIL)
        aff_con(idx_z[k], -1.0, z_hi - Z_SPAN)
        aff_con(idx_z[k], 1.0, z_hi)
    for k in loc:
        aff_con(idx_f[k], -1.0, 0.0)
    aff_con(i_U, -1.0, -ups_lb)
    tag["n_guards"] = len(cons)

    # frame time: tau0_hat + exp(d1)/T <= 1
    lin = np.zeros(n)
    lin[0] = 1.0
    tag["time"] = len(cons)
    cons.append(_ExpPoly(n, const=-1.0, lin=lin,
                         exps=[(1.0 / sys.T, {1: 1.0}, 0.0)]))

    T, zeta, gam = sys.T, sys.zeta, sys.gamma_c
    for k, u in enumerate(users):
        ebar = math.exp(state.z_bar[k])

        def bits_lin(k=k, u=u, ebar=ebar):
            lin_b = np.zeros(n)
            const_b = 0.0
            if k in idx_f:
                lin_b[idx_f[k]] += w_f[k] * sc.c2[k]
            if k in idx_z:
                lin_b[idx_z[k]] += ebar
                const_b += ebar * (1.0 - state.z_bar[k])
            return const_b, lin_b

        def energy_terms(k=k, u=u):
            lin_e = np.zeros(n)
            cubic = []
            exps = []
            lin_e[0] = T * u.P_r
            if k in idx_x:
                exps.append((w_o[k] * zeta, {1: 1.0, idx_x[k]: 1.0}, 0.0))
                exps.append((w_o[k] * zeta * u.P_c, {1: 1.0}, 0.0))
            if k in idx_f:
                cubic.append((idx_f[k], w_f[k] * T * gam
                              * sc.f_scale[k] ** 3))
            return lin_e, cubic, exps

        cb, lb = bits_lin()
        le, ce, ee = energy_terms()

        if u.R_min > 0.0:
            tag["minbits"][k] = len(cons)
            cons.append(_ExpPoly(n, const=(u.R_min - cb) / sc.obj_scale,
                                 lin=-lb / sc.obj_scale))

        if k in idx_x:
            Sbar = sys.sigma2 + sum(users[i].g * math.exp(state.x_bar[i])
                                    for i in off if i >= k)
            Ibar = sys.sigma2 + sum(users[i].g * math.exp(state.x_bar[i])
                                    for i in off if i > k)
            aff = np.zeros(n)
            aff0 = math.log(Sbar) - math.log(Ibar)
            exp_terms = []
            for i in off:
                gi_ebar = users[i].g * math.exp(state.x_bar[i])
                if i >= k:
                    aff[idx_x[i]] += gi_ebar / Sbar
                    aff0 -= gi_ebar / Sbar * state.x_bar[i]
                if i > k:
                    aff0 += gi_ebar / Ibar
                    exp_terms.append((users[i].g / Ibar, idx_x[i]))
            c_k = w_o[k] * sys.B / (u.v * LN2)
            tag["link"][k] = len(cons)
            cons.append(_RateLink(n, idx_z[k], 1, math.log(c_k), aff0,
                                  aff, exp_terms))

        tag["eh"][k] = len(cons)
        lin_c2 = le.copy()
        lin_c2[0] -= T * sc.P_E[k]
        cons.append(_ExpPoly(n, lin=lin_c2 / sc.E_scale[k],
                             cubic=[(i, c / sc.E_scale[k]) for i, c in ce],
                             exps=[(w / sc.E_scale[k], sl, ofs)
                                   for w, sl, ofs in ee]))

        tag["epi"][k] = len(cons)
        lin_g = (eta * le - lb) / sc.obj_scale
        lin_g[i_U] += 1.0
        cons.append(_ExpPoly(n, const=-cb / sc.obj_scale, lin=lin_g,
                             cubic=[(i, eta * c / sc.obj_scale)
                                    for i, c in ce],
                             exps=[(eta * w / sc.obj_scale, sl, ofs)
                                   for w, sl, ofs in ee]))
    return sc, layout, cons, tag


def _noma_start(sc: _Scaling, layout, cons, tag, state: ScaState,
                warm: np.ndarray | None):
    n, i_U = layout["n"], layout["i_U"]
    sys = sc.sys

    def with_margin(x):
        x = x.copy()
        x[i_U] = 0.0
        worst = min(-cons[i].value(x) for i in tag["epi"].values())
        x[i_U] = max(-layout["ups_lb"] + 1.0,
                     worst - max(0.5, 0.1 * abs(worst)))
        return x

    candidates = []
    if warm is not None and warm.shape[0] == n:
        # pull the previous optimum strictly inside the new surrogate
        w = warm.copy()
        for k in layout["off"]:
            w[layout["idx_z"][k]] -= 1e-7 * max(
                1.0, abs(w[layout["idx_z"][k]]))
        candidates.append(w)
    # fresh candidates sit at the expansion powers (where the rate
    # surrogate is exactly the true rate, hence positive) with the slot
    # and frequencies laddered down
    for tau0_hat, dshift, ffrac in ((0.5, 0.0, 0.1), (0.6, -1.0, 0.02),
                                    (0.7, -3.0, 1e-3)):
        x = np.zeros(n)
        x[0] = tau0_hat
        x[1] = min(math.log(0.4 * sys.T) + dshift,
                   math.log((1.0 - tau0_hat) * sys.T * 0.9))
        for k in layout["off"]:
            x[layout["idx_x"][k]] = np.clip(state.x_bar[k],
                                            X_FLOOR + 1e-6, X_CEIL - 1e-6)
        for k in layout["off"]:
            iz = layout["idx_z"][k]
            link = tag["link"].get(k)
            x[iz] = layout["z_hi"] - Z_SPAN + 1e-6
            if link is not None:
                x[iz] = 0.0
                bound = -cons[link].value(x)   # z - bound form, at z=0
                if math.isfinite(bound):
                    x[iz] = np.clip(bound - 1.0,
                                    layout["z_hi"] - Z_SPAN + 1e-6,
                                    layout["z_hi"] - 1.0)
        for k in layout["loc"]:
            budget = ffrac * tau0_hat * sys.T * max(sc.net[k], 0.0) \
                / max(layout["w_f"][k], 1e-9)
            f = (budget / (sys.T * sys.gamma_c)) ** (1.0 / 3.0)
            if sc.users[k].R_min > 0 and layout["w_f"][k] > 0.5:
                f = max(f, 1.3 * sc.users[k].R_min * sys.C / sys.T)
            x[layout["idx_f"][k]] = max(f / sc.f_scale[k], 1e-8)
        candidates.append(x)
    in_domain = None
    for x in candidates:
        x = with_margin(x)
        vals = [c.value(x) for c in cons]
        if all(math.isfinite(v) and v < -1e-10 for v in vals):
            return x
        if in_domain is None and all(math.isfinite(v) for v in vals):
            in_domain = x
    if in_domain is None:
        raise Infeasible("no start inside the surrogate domain",
                         certificate=math.nan)
    x = barrier.phase1(cons, in_domain, n_guards=tag["n_guards"])
    return with_margin(x)


def _noma_recover(res, sc: _Scaling, layout, tag, eta,
                  alpha: np.ndarray | None) -> InnerSolution:
    sys, K = sc.sys, sc.K
    x = res.x
    w_o = layout["w_o"]
    tau0 = max(float(x[0]) * sys.T, 0.0)
    tau1 = math.exp(float(x[1]))
    if tau1 < TAU_CLAMP:
        tau1 = 0.0
    P = np.zeros(K)
    f = np.zeros(K)
    xv = np.full(K, X_FLOOR)
    zv = np.full(K, -np.inf)
    for k, i in layout["idx_x"].items():
        xv[k] = float(x[i])
        pw = math.exp(xv[k])
        if pw > 2e-12 and tau1 > 0.0:
            P[k] = pw / w_o[k]
    for k, i in layout["idx_z"].items():
        zv[k] = float(x[i])
    for k, i in layout["idx_f"].items():
        fv = max(float(x[i]), 0.0) * sc.f_scale[k]
        f[k] = 0.0 if fv < 1e-12 * sc.f_scale[k] else fv
    alloc = Allocation(tau0=tau0, tau1=tau1, P=P, f=f, Ps=sc.Ps,
                       alpha=None if alpha is None
                       else np.asarray(alpha, float))

    lam = np.zeros(K)
    varpi = np.zeros(K)
    omega = np.zeros(K)
    mu = np.zeros(K)
    for k, i in tag["minbits"].items():
        varpi[k] = res.duals[i]
    for k, i in tag["link"].items():
        # link constraint is in log units; convert to a bits-level price
        lam[k] = res.duals[i] * sc.obj_scale \
            / max(math.exp(zv[k]), 1e-30)
    for k, i in tag["eh"].items():
        mu[k] = res.duals[i] * sc.obj_scale / sc.E_scale[k]
    for k, i in tag["epi"].items():
        omega[k] = res.duals[i]
    beta = res.duals[tag["time"]] * sc.obj_scale / sys.T
    duals = DualVars(lam=lam, varpi=varpi, omega=omega, mu=mu, beta=beta,
                     rho=mu, theta=omega)
    return InnerSolution(upsilon=float(x[layout["i_U"]]) * sc.obj_scale,
                         alloc=alloc, duals=duals,
                         kkt_residual=res.kkt_residual,
                         newton_iters=res.newton_iters,
                         log_vars={"d1": float(x[1]), "x": xv, "z": zv})


def _solve_noma(eta, state, users, sys, Ps, alpha,
                warm: np.ndarray | None = None):
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    Ps = sys.P_th if Ps is None else Ps
    regime = Regime.NOMA_PARTIAL if alpha is None else Regime.NOMA_BINARY
    probe = _Scaling(users, sys, Ps)
    if probe.dead:
        if any(u.R_min > 0 for u in users):
            raise Infeasible("no user-positive harvest but R_min > 0",
                             certificate=max(u.R_min for u in users))
        alloc = zero_allocation(len(users), regime, Ps)
        if alpha is not None:
            alloc = alloc.with_alpha(alpha)
        duals = DualVars(lam=np.zeros(len(users)),
                         varpi=np.zeros(len(users)),
                         omega=np.zeros(len(users)),
                         mu=np.zeros(len(users)), beta=0.0,
                         rho=np.zeros(len(users)),
                         theta=np.zeros(len(users)))
        sol = InnerSolution(upsilon=0.0, alloc=alloc, duals=duals)
        return sol, state.advanced(state.z_bar, state.x_bar, 0.0)
    if state is None:
        state = init_sca_state(users, sys, Ps, alpha)
    sc, layout, cons, tag = _build_noma(eta, users, sys, Ps, state, alpha)
    x0 = _noma_start(sc, layout, cons, tag, state, warm)
    obj_lin = np.zeros(layout["n"])
    obj_lin[layout["i_U"]] = 1.0
    res = barrier.barrier_solve(barrier.QuadObjective(obj_lin, reg=1e-12),
                                cons, x0)
    sol = _noma_recover(res, sc, layout, tag, eta, alpha)
    z_new = state.z_bar.copy()
    x_new = state.x_bar.copy()
    for k, i in layout["idx_z"].items():
        z_new[k] = float(res.x[i])
    for k, i in layout["idx_x"].items():
        x_new[k] = float(res.x[i])
    sol.log_vars["raw_x"] = res.x
    return sol, state.advanced(z_new, x_new, sol.upsilon)


def solve_p9(eta: float, state: ScaState | None,
             users: Sequence[UserParams], sys: SystemParams,
             Ps: float | None = None,
             warm: np.ndarray | None = None
             ) -> tuple[InnerSolution, ScaState]:
    """One SCA step of the NOMA partial-offloading inner problem."""
    return _solve_noma(eta, state, users, sys, Ps, None, warm)


def solve_p11(eta: float, alpha, state: ScaState | None,
              users: Sequence[UserParams], sys: SystemParams,
              Ps: float | None = None,
              warm: np.ndarray | None = None
              ) -> tuple[InnerSolution, ScaState]:
    """One SCA step of the NOMA binary-mode inner problem at fixed alpha.

    The log-power variables carry the mode-weighted powers, so interference
    sums match the relaxed objective; at alpha in {0, 1} the subproblem
    coincides with the pure formulations.
    """
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0) or np.any(alpha > 1):
        raise ValueError("alpha must lie in [0, 1]")
    return _solve_noma(eta, state, users, sys, Ps, alpha, warm)


def sca_loop(step: Callable, eta: float, users: Sequence[UserParams],
             sys: SystemParams, Ps: float | None = None,
             alpha=None, state: ScaState | None = None,
             max_rounds: int = SCA_MAX_ROUNDS
             ) -> tuple[InnerSolution, list[float]]:
    """Iterate one-step SCA solves until the objective settles.

    Stops when consecutive objectives differ by at most tol_sca (relative
    at the objective scale) or after max_rounds; returns the last solution
    and the objective trace. The trace is nondecreasing up to solver
    tolerance because each surrogate is tight at its expansion point.
    """
    sol = None
    trace: list[float] = []
    warm = None
    prev = 0.0
    for _ in range(max_rounds):
        if alpha is None:
            sol, state = step(eta, state, users, sys, Ps, warm)
        else:
            sol, state = step(eta, alpha, state, users, sys, Ps, warm)
        warm = sol.log_vars.get("raw_x")
        trace.append(sol.upsilon)
        if abs(trace[-1] - prev) <= sys.tol_sca * max(1.0, abs(trace[-1])):
            break
        prev = trace[-1]
    return sol, trace
