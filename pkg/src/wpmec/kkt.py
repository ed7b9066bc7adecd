"""Closed-form optimality conditions for the TDMA partial-offloading
problem and a projected-subgradient dual solver built on them.

This is a second, independent route to the same optimum as the barrier
solver: the Lagrangian of the lifted problem decomposes per user, the
inner maximizers have closed forms (frequency and power below), and the
dual function is minimized by a projected subgradient. Cross-checking the
two paths is the main correctness test of both.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (DegenerateCoefficients, DegenerateDuals, GapNotClosed,
                     NegativeZ, PositiveZ)
from .model import (Allocation, Regime, SystemParams, UserParams,
                    harvested_power, offload_bits_tdma)
from .solution import DualVars, InnerSolution

LN2 = math.log(2.0)


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

def optimal_frequency(d: DualVars, k: int, eta: float,
                      sys: SystemParams) -> float:
    """Stationary CPU frequency sqrt((lam+theta)/(3*C*gamma*(rho+theta*eta))).

    Zero when the bits-side multipliers vanish; DegenerateDuals when the
    energy-side multiplier vanishes while the bits side does not (the
    Lagrangian is then unbounded in f).
    """
    num = float(d.lam[k] + d.theta[k])
    if num <= 0.0:
        return 0.0
    den = 3.0 * sys.C * sys.gamma_c * float(d.rho[k] + d.theta[k] * eta)
    if den <= 0.0:
        raise DegenerateDuals("rho + theta*eta must be positive for f*")
    return math.sqrt(num / den)


def optimal_power(d: DualVars, k: int, eta: float, u: UserParams,
                  sys: SystemParams, tau_k: float) -> float:
    """Water-filling-style offload power; zero on an idle slot or when the
    uplink is below the multiplier-determined threshold."""
    if tau_k == 0.0:
        return 0.0
    num = float(d.lam[k] + d.theta[k])
    if num <= 0.0:
        return 0.0
    if u.g <= 0.0:
        return 0.0
    den = sys.zeta * u.v * LN2 * float(d.rho[k] + d.theta[k] * eta)
    if den <= 0.0:
        raise DegenerateDuals("rho + theta*eta must be positive for P*")
    return max(num * sys.B / den - sys.sigma2 / u.g, 0.0)


class Tau0Kind(enum.Enum):
    ZERO = "zero"
    INTERIOR = "interior"


@dataclass(frozen=True)
class Tau0Rule:
    kind: Tau0Kind
    z: float


def tau0_rule(d: DualVars, eta: float, users: Sequence[UserParams],
              sys: SystemParams, Ps: float | None = None) -> Tau0Rule:
    """Sign test on the Lagrangian's slope in the harvest time.

    Negative slope pins tau0 at zero; zero slope leaves it interior (its
    value is then set by complementary slackness elsewhere); a positive
    slope certifies dual infeasibility and raises PositiveZ.
    """
    Ps = sys.P_th if Ps is None else Ps
    P_E = np.array([harvested_power(Ps, u, sys) for u in users])
    P_r = np.array([u.P_r for u in users])
    z = float(np.dot(d.rho, P_E - P_r) - d.beta
              - eta * np.dot(d.theta, P_r))
    scale = max(1.0, float(np.dot(d.rho, P_E + P_r) + abs(d.beta)
                           + eta * np.dot(d.theta, P_r)))
    if z < -1e-10 * scale:
        return Tau0Rule(Tau0Kind.ZERO, z)
    if z <= 1e-10 * scale:
        return Tau0Rule(Tau0Kind.INTERIOR, z)
    raise PositiveZ(f"harvest-time slope {z:.3e} > 0")


def omega_threshold_equation(w: float, d: DualVars, k: int, eta: float,
                             u: UserParams, sys: SystemParams) -> float:
    """Slot-slope of the Lagrangian at the envelope with a slack harvest
    multiplier, as a function of the uplink gain w."""
    lt = float(d.lam[k] + d.theta[k])
    te = float(d.theta[k]) * eta
    A = sys.B * lt / u.v
    arg = lt * sys.B * w / (sys.zeta * u.v * te * sys.sigma2 * LN2)
    return (A * math.log2(arg) - A / LN2
            + sys.zeta * te * sys.sigma2 / w
            - sys.zeta * te * u.P_c - float(d.beta))


def omega_root(d: DualVars, k: int, eta: float, u: UserParams,
               sys: SystemParams, *, rel_tol: float = 1e-12,
               max_doublings: int = 200) -> float:
    """Uplink-gain threshold above which a user's slot leaves zero.

    Bisection on the slot-slope equation, bracketed from the gain at which
    the offload power just turns on (the slope is negative there) and
    grown geometrically until the slope goes positive.
    """
    lt = float(d.lam[k] + d.theta[k])
    te = float(d.theta[k]) * eta
    if te <= 0.0 or lt <= 0.0:
        raise DegenerateCoefficients(
            "theta*eta and lam+theta must be positive for the threshold")
    w_lo = sys.sigma2 * sys.zeta * u.v * te * LN2 / (lt * sys.B)
    w_hi = w_lo
    for _ in range(max_doublings):
        w_hi *= 2.0
        if omega_threshold_equation(w_hi, d, k, eta, u, sys) > 0.0:
            break
    else:
        raise DegenerateCoefficients("threshold bracket did not close")
    lo, hi = w_lo, w_hi
    while (hi - lo) > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if omega_threshold_equation(mid, d, k, eta, u, sys) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


class TauKKind(enum.Enum):
    ZERO = "zero"
    AT_CAP = "at_cap"
    INTERIOR = "interior"


@dataclass(frozen=True)
class TauKRule:
    kind: TauKKind
    Z: float
    omega: float


@dataclass(frozen=True)
class PrimalContext:
    """Already-determined pieces the slot rule needs."""

    tau0: float
    f_k: float
    P_k: float
    Ps: float | None = None


def tau_k_rule(d: DualVars, k: int, eta: float, u: UserParams,
               sys: SystemParams, ctx: PrimalContext,
               *, rel_tol: float = 1e-9) -> TauKRule:
    """Classify the offload slot: zero below the gain threshold, pinned at
    the harvest-budget cap above it, interior on the threshold.

    The cap Z spends the remaining harvest on the slot (amplifier losses
    included) and is clamped into the leftover frame time.
    """
    omega = omega_root(d, k, eta, u, sys)
    Ps = sys.P_th if ctx.Ps is None else ctx.Ps
    harv = ctx.tau0 * harvested_power(Ps, u, sys)
    num = harv - ctx.tau0 * u.P_r - sys.T * sys.gamma_c * ctx.f_k ** 3
    scale = max(harv, 1e-30)
    if num < -1e-9 * scale:
        raise NegativeZ(f"context already over budget by {-num:.3e} J")
    Z = max(num, 0.0) / (sys.zeta * (u.P_c + ctx.P_k))
    Z = min(max(Z, 0.0), max(sys.T - ctx.tau0, 0.0))
    if u.g > omega * (1.0 + rel_tol):
        return TauKRule(TauKKind.AT_CAP, Z, omega)
    if u.g < omega * (1.0 - rel_tol):
        return TauKRule(TauKKind.ZERO, 0.0, omega)
    return TauKRule(TauKKind.INTERIOR, Z, omega)


def upsilon_rule(d: DualVars, alloc: Allocation, eta: float,
                 users: Sequence[UserParams], sys: SystemParams,
                 regime: Regime = Regime.TDMA_PARTIAL) -> float:
    """Objective value consistent with the epigraph multipliers: zero when
    they over-saturate, else the worst parametric margin of the primal."""
    from .model import evaluate
    if float(np.sum(d.theta)) > 1.0 + 1e-12:
        return 0.0
    metrics = evaluate(alloc, regime, users, sys)
    return min(m.bits - eta * m.energy for m in metrics)


# ---------------------------------------------------------------------------
# stationarity residuals (independent finite-difference-checkable forms)
# ---------------------------------------------------------------------------

def lagrangian_df(d: DualVars, k: int, eta: float, f_k: float,
                  sys: SystemParams) -> float:
    """Partial derivative of the Lagrangian in the CPU frequency."""
    return (sys.T * float(d.lam[k]) / sys.C
            - 3.0 * float(d.rho[k]) * sys.T * sys.gamma_c * f_k ** 2
            + float(d.theta[k]) * (sys.T / sys.C
                                   - eta * 3.0 * sys.T * sys.gamma_c
                                   * f_k ** 2))


def lagrangian_dy(d: DualVars, k: int, eta: float, tau_k: float, y_k: float,
                  u: UserParams, sys: SystemParams) -> float:
    """Partial derivative of the Lagrangian in the slot-power lift."""
    lt = float(d.theta[k] + d.lam[k])
    return (lt * sys.B * tau_k * u.g
            / (u.v * LN2 * (tau_k * sys.sigma2 + u.g * y_k))
            - sys.zeta * (float(d.theta[k]) * eta + float(d.rho[k])))


def stationary_lift(d: DualVars, k: int, eta: float, tau_k: float,
                    u: UserParams, sys: SystemParams) -> float:
    """Slot-power lift solving the stationarity condition at given tau_k."""
    if tau_k <= 0.0:
        return 0.0
    return tau_k * optimal_power(d, k, eta, u, sys, tau_k)




# ---------------------------------------------------------------------------
# dual solver: Lagrangian responses, smoothed dual, alternating minimization
# ---------------------------------------------------------------------------

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum x = 1}."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, len(v) + 1)
    cond = u - (css - 1.0) / idx > 0
    r = int(np.max(np.nonzero(cond))) + 1
    shift = (css[r - 1] - 1.0) / r
    return np.maximum(v - shift, 0.0)


@dataclass
class _Caps:
    """Box bounds implied by harvest causality; they keep the per-user
    Lagrangian maximizations finite without moving the optimum."""

    f_cap: np.ndarray
    P_cap: np.ndarray
    P_E: np.ndarray
    net: np.ndarray


def _make_caps(users, sys, Ps) -> _Caps:
    P_E = np.array([harvested_power(Ps, u, sys) for u in users])
    net = P_E - np.array([u.P_r for u in users])
    net_pos = np.maximum(net, 1e-30)
    f_cap = (net_pos / sys.gamma_c) ** (1.0 / 3.0)
    P_cap = np.maximum(1.0, 100.0 * net_pos / sys.zeta)
    return _Caps(f_cap=f_cap, P_cap=P_cap, P_E=P_E, net=net)


def dual_response(lam, rho, theta, beta, eta, users, sys, caps: _Caps):
    """Maximize the decomposed Lagrangian over the box-capped primal.

    Returns (dual value, primal responses, subgradient blocks); any
    maximizer selection yields a valid subgradient.
    """
    K = len(users)
    T = sys.T
    f = np.zeros(K)
    P = np.zeros(K)
    tau = np.zeros(K)
    q = float(beta) * T
    for k, u in enumerate(users):
        lt = lam[k] + theta[k]
        en = rho[k] + theta[k] * eta
        a1 = lt * T / sys.C
        a2 = en * T * sys.gamma_c
        if a1 > 0.0:
            f[k] = caps.f_cap[k] if a2 <= 0.0 \
                else min(math.sqrt(a1 / (3.0 * a2)), caps.f_cap[k])
        q += a1 * f[k] - a2 * f[k] ** 3
        if lt > 0.0 and u.g > 0.0:
            if en > 0.0:
                P_unc = lt * sys.B / (sys.zeta * u.v * LN2 * en) \
                    - sys.sigma2 / u.g
                P[k] = min(max(P_unc, 0.0), caps.P_cap[k])
            else:
                P[k] = caps.P_cap[k]
        gamma_k = (lt * sys.B / u.v) * math.log2(1.0 + u.g * P[k] / sys.sigma2) \
            - sys.zeta * en * (P[k] + u.P_c) - beta
        if gamma_k > 0.0:
            tau[k] = T
            q += T * gamma_k
        q -= lam[k] * u.R_min
    z = float(np.dot(rho, caps.net) - beta
              - eta * np.dot(theta, [u.P_r for u in users]))
    tau0 = T if z > 0.0 else 0.0
    q += T * max(z, 0.0)

    bits = np.array([T * f[k] / sys.C
                     + offload_bits_tdma(tau[k], P[k], users[k], sys)
                     for k in range(K)])
    energy = np.array([tau0 * users[k].P_r
                       + sys.zeta * tau[k] * (P[k] + users[k].P_c)
                       + T * sys.gamma_c * f[k] ** 3 for k in range(K)])
    g_lam = bits - np.array([u.R_min for u in users])
    g_rho = tau0 * caps.P_E - energy
    g_theta = bits - eta * energy
    g_beta = T - tau0 - float(np.sum(tau))
    primal = dict(tau0=tau0, tau=tau, P=P, f=f)
    return q, primal, (g_lam, g_rho, g_theta, g_beta)


def _softplus(x: float, mu: float) -> float:
    if x <= 0.0:
        return mu * math.log1p(math.exp(x / mu))
    return x + mu * math.log1p(math.exp(-x / mu))


def _sigmoid(x: float, mu: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x / mu))
    e = math.exp(x / mu)
    return e / (1.0 + e)


def _q_smooth(lam, rho, theta, beta, eta, users, sys, caps, mu, W):
    """Softplus-smoothed dual with analytic gradient blocks.

    Upper-bounds the exact dual for every temperature mu, so minimizing it
    and re-evaluating exactly always yields a valid bound. W penalizes
    drift of the epigraph weights off the simplex.
    """
    K = len(users)
    T = sys.T
    q = beta * T
    g_lam = np.empty(K)
    g_rho = np.empty(K)
    g_theta = np.empty(K)
    g_beta = T
    P_r = np.array([u.P_r for u in users])
    for k, u in enumerate(users):
        lt = lam[k] + theta[k]
        en = rho[k] + theta[k] * eta
        a1 = lt * T / sys.C
        a2 = en * T * sys.gamma_c
        if a1 > 0.0:
            f = caps.f_cap[k] if a2 <= 0.0 \
                else min(math.sqrt(a1 / (3.0 * a2)), caps.f_cap[k])
        else:
            f = 0.0
        q += a1 * f - a2 * f ** 3
        if lt > 0.0 and u.g > 0.0:
            if en > 0.0:
                P = min(max(lt * sys.B / (sys.zeta * u.v * LN2 * en)
                            - sys.sigma2 / u.g, 0.0), caps.P_cap[k])
            else:
                P = caps.P_cap[k]
        else:
            P = 0.0
        rate = (sys.B / u.v) * math.log2(1.0 + u.g * P / sys.sigma2)
        gam = lt * rate - sys.zeta * en * (P + u.P_c) - beta
        sg = _sigmoid(gam, mu)
        q += T * _softplus(gam, mu) - lam[k] * u.R_min
        g_lam[k] = T * f / sys.C + T * sg * rate - u.R_min
        g_rho[k] = -T * sys.gamma_c * f ** 3 \
            - T * sg * sys.zeta * (P + u.P_c)
        g_theta[k] = (T * f / sys.C - eta * T * sys.gamma_c * f ** 3
                      + T * sg * (rate - sys.zeta * eta * (P + u.P_c)))
        g_beta += -T * sg
    z = float(np.dot(rho, caps.net) - beta - eta * np.dot(theta, P_r))
    sz = _sigmoid(z, mu)
    q += T * _softplus(z, mu)
    g_rho += T * sz * caps.net
    g_theta += -T * sz * eta * P_r
    g_beta += -T * sz
    dev = float(np.sum(theta)) - 1.0
    q += W * dev * dev
    g_theta += 2.0 * W * dev
    return q, g_lam, g_rho, g_theta, g_beta


def _golden_min(fun, lo, hi, iters=44):
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def _line_min(fun, x0, unit, iters=44):
    """Exact-ish 1-D minimization over [0, inf) with bracket expansion."""
    hi = max(4.0 * x0, 4.0 * unit, 1e-12)
    f_hi = fun(hi)
    for _ in range(40):
        f2 = fun(2.0 * hi)
        if f2 >= f_hi:
            break
        hi *= 2.0
        f_hi = f2
    return _golden_min(fun, 0.0, 2.0 * hi, iters)


class _DualState:
    """Bookkeeping for the alternating dual minimization.

    Per-user multipliers are swept in a normalized parameterization
    (divided by the user's epigraph weight), which nearly decouples the
    users and lets cyclic one-dimensional minimization make progress.
    """

    def __init__(self, eta, users, sys, caps):
        self.eta, self.users, self.sys, self.caps = eta, users, sys, caps
        self.K = len(users)
        self.evals = 0
        self.best_q = np.inf
        self.best_pt = None
        bits = [sys.T * caps.f_cap[k] / sys.C for k in range(self.K)]
        self.bits_scale = max(1.0, float(np.max(bits)))
        e_scale = max(float(np.max(sys.T * caps.P_E)), 1e-30)
        self.s_rho = self.bits_scale / e_scale \
            * (1.0 + eta * e_scale / self.bits_scale)
        self.s_beta = self.bits_scale / sys.T

    def q_raw(self, lam, rho, theta, beta):
        self.evals += 1
        q = dual_response(lam, rho, theta, beta, self.eta, self.users,
                          self.sys, self.caps)[0]
        if q < self.best_q:
            self.best_q = q
            self.best_pt = (lam.copy(), rho.copy(), theta.copy(),
                            float(beta))
        return q

    def q_tilde(self, lt, rt, theta, beta):
        return self.q_raw(theta * lt, theta * rt, theta, beta)

    def seed(self):
        """Stationarity-informed start: per-user energy prices that zero
        the harvest-time slope, frequencies pinned by the bits floor."""
        eta, sys, caps = self.eta, self.sys, self.caps
        lt = np.zeros(self.K)
        rt = np.zeros(self.K)
        for k, u in enumerate(self.users):
            rt[k] = eta * u.P_r / max(caps.net[k], 1e-30)
            f_pin = u.R_min * sys.C / sys.T if u.R_min > 0 \
                else 0.5 * caps.f_cap[k]
            lt[k] = max(3.0 * sys.C * sys.gamma_c * (rt[k] + eta)
                        * f_pin ** 2 - 1.0, 0.0)
        return lt, rt, np.full(self.K, 1.0 / self.K), 0.0

    def sweep(self, lt, rt, theta, beta):
        K = self.K
        for k in range(K):
            def f_l(v, k=k):
                l2 = lt.copy()
                l2[k] = v
                return self.q_tilde(l2, rt, theta, beta)
            lt[k] = _line_min(f_l, lt[k], 1.0)

            def f_r(v, k=k):
                r2 = rt.copy()
                r2[k] = v
                return self.q_tilde(lt, r2, theta, beta)
            rt[k] = _line_min(f_r, rt[k], max(self.eta, 1e2))
        beta = _line_min(lambda v: self.q_tilde(lt, rt, theta, v),
                         beta, self.s_beta)
        # joint rescalings step across kinks that pin single coordinates
        sc = _golden_min(lambda c: self.q_tilde(lt, rt * c, theta, beta),
                         0.25, 4.0, 40)
        rt = rt * sc
        sc = _golden_min(lambda c: self.q_tilde(lt, rt * c, theta,
                                                beta * c), 0.25, 4.0, 40)
        rt = rt * sc
        beta = beta * sc
        if K > 1:
            for i in range(K):
                for j in range(i + 1, K):
                    def f_x(dlt, i=i, j=j):
                        th = theta.copy()
                        th[i] += dlt
                        th[j] -= dlt
                        return self.q_tilde(lt, rt, th, beta)
                    d = _golden_min(f_x, -theta[i] + 1e-12,
                                    theta[j] - 1e-12, 40)
                    theta = theta.copy()
                    theta[i] += d
                    theta[j] -= d
        self.q_tilde(lt, rt, theta, beta)
        return lt, rt, theta, beta

    def smooth_descent(self, pt, schedule):
        """Graduated softplus smoothing minimized with L-BFGS-B."""
        from scipy.optimize import minimize
        K = self.K
        s_rho, s_beta, bs = self.s_rho, self.s_beta, self.bits_scale
        W = 100.0 * bs
        lam, rho, theta, beta = pt

        def pack(lam, rho, theta, beta):
            return np.concatenate([lam, rho / s_rho, theta,
                                   [beta / s_beta]])

        def unpack(v):
            return (v[:K], v[K:2 * K] * s_rho, v[2 * K:3 * K],
                    float(v[3 * K]) * s_beta)

        x = pack(lam, rho, theta, beta)
        bounds = [(0.0, None)] * (2 * K) + [(1e-12, None)] * K \
            + [(0.0, None)]
        for mu_rel in schedule:
            mu = mu_rel * bs

            def fun(v):
                self.evals += 1
                l, r, th, b = unpack(v)
                q, gl, gr, gt, gb = _q_smooth(l, r, th, b, self.eta,
                                              self.users, self.sys,
                                              self.caps, mu, W)
                g = np.concatenate([gl, gr * s_rho, gt, [gb * s_beta]])
                return q / bs, g / bs

            res = minimize(fun, x, jac=True, method="L-BFGS-B",
                           bounds=bounds,
                           options=dict(maxiter=500, ftol=1e-18,
                                        gtol=1e-14, maxcor=20))
            x = res.x
        lam, rho, theta, beta = unpack(x)
        ssum = max(float(np.sum(theta)), 1e-12)
        theta = theta / ssum
        self.q_raw(lam, rho, theta, beta)
        self.q_raw(lam / ssum, rho / ssum, theta, beta)
        return self.best_pt


def _recover_feasible(primal, eta, users, sys, caps: _Caps, Ps,
                      n_split: int = 41):
    """Best feasible parametric value near a dual response pattern.

    Scans harvest times (response value plus a log grid), splits each
    user's budget between the branches with a vectorized line search, and
    keeps the best worst-user margin.
    """
    K = len(users)
    T = sys.T
    tau0_cands = {0.3 * T, 0.5 * T, 0.7 * T}
    tau0_cands.update(float(T * 10.0 ** e)
                      for e in np.linspace(-6, -0.15, 12))
    tau0_r, tau_r = primal["tau0"], primal["tau"].copy()
    tot = tau0_r + float(np.sum(tau_r))
    if tot > T:
        tau0_r, tau_r = tau0_r * T / tot, tau_r * T / tot
    if tau0_r > 0.0:
        tau0_cands.add(tau0_r)
    active = tau_r > 0
    fracs = np.linspace(0.0, 1.0, n_split)

    best_val, best_alloc, best_tau0 = -np.inf, None, None

    def consider(tau0):
        nonlocal best_val, best_alloc, best_tau0
        rest = T - tau0
        if rest < 0.0 or tau0 < 0.0:
            return
        slot_sets = [np.zeros(K)]
        if np.any(active):
            slot_sets.append(np.where(active, rest / max(active.sum(), 1),
                                      0.0))
        slot_sets.append(np.full(K, rest / K))
        for slots in slot_sets:
            vals = np.empty(K)
            Pk = np.zeros(K)
            fk = np.zeros(K)
            sk = np.zeros(K)
            ok = True
            for k, u in enumerate(users):
                budget = tau0 * caps.net[k]
                if budget < 0.0:
                    ok = False
                    break
                f = np.minimum(((1.0 - fracs) * budget
                                / (T * sys.gamma_c)) ** (1.0 / 3.0),
                               caps.f_cap[k])
                loc_bits = T * f / sys.C
                loc_e = T * sys.gamma_c * f ** 3
                cand_bits = [loc_bits]
                cand_e = [tau0 * u.P_r + loc_e]
                cand_P = [np.zeros_like(fracs)]
                cand_slot = [np.zeros_like(fracs)]
                if slots[k] > 0.0:
                    P = np.maximum(fracs * budget
                                   / (sys.zeta * slots[k]) - u.P_c, 0.0)
                    off_b = (sys.B * slots[k] / u.v) \
                        * np.log2(1.0 + u.g * P / sys.sigma2)
                    off_e = np.where(P > 0.0,
                                     sys.zeta * slots[k] * (P + u.P_c),
                                     0.0)
                    cand_bits.append(loc_bits + off_b)
                    cand_e.append(tau0 * u.P_r + loc_e + off_e)
                    cand_P.append(P)
                    cand_slot.append(np.where(P > 0.0, slots[k], 0.0))
                bits = np.concatenate(cand_bits)
                energy = np.concatenate(cand_e)
                Pv = np.concatenate(cand_P)
                sv = np.concatenate(cand_slot)
                val = np.where(bits >= u.R_min, bits - eta * energy,
                               -np.inf)
                i = int(np.argmax(val))
                if not np.isfinite(val[i]):
                    ok = False
                    break
                vals[k], Pk[k], fk[k], sk[k] = val[i], Pv[i], \
                    f[i % len(fracs)], sv[i]
            if not ok:
                continue
            worst = float(np.min(vals))
            if worst > best_val:
                best_val = worst
                best_tau0 = tau0
                best_alloc = Allocation(tau0=tau0, tau=sk.copy(),
                                        P=Pk.copy(), f=fk.copy(), Ps=Ps)

    for tau0 in sorted(tau0_cands):
        consider(tau0)
    for _ in range(3):
        if best_tau0 is None:
            break
        center = best_tau0
        for mult in (0.5, 0.7, 0.85, 1.2, 1.5, 2.0):
            consider(min(center * mult, T))
    if best_alloc is None:
        best_alloc = Allocation(tau0=0.0, tau=np.zeros(K), P=np.zeros(K),
                                f=np.zeros(K), Ps=Ps)
        best_val = 0.0 if all(u.R_min <= 0 for u in users) else -np.inf
    return best_val, best_alloc


def dual_ascent_p3(eta: float, users: Sequence[UserParams],
                   sys: SystemParams, Ps: float | None = None, *,
                   max_rounds: int = 8, gap_tol: float | None = None,
                   raise_on_gap: bool = False,
                   ) -> tuple[InnerSolution, DualVars]:
    """Solve the parametric problem through its Lagrange dual.

    Alternates exact one-dimensional dual sweeps with quasi-Newton descent
    on a graduated softplus smoothing of the dual until the bound stalls.
    The returned solution's `upsilon` is the dual optimum estimate (an
    upper bound that matches the barrier objective at convergence); the
    allocation is the best feasible primal recovered from the responses,
    with its own value and the duality gap reported in `log_vars`.
    Raises GapNotClosed only when `raise_on_gap` is set.
    """
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    Ps = sys.P_th if Ps is None else Ps
    gap_tol = sys.tol_dual if gap_tol is None else gap_tol
    K = len(users)
    caps = _make_caps(users, sys, Ps)
    if np.any(caps.net <= 0.0):
        alloc = Allocation(tau0=0.0, tau=np.zeros(K), P=np.zeros(K),
                           f=np.zeros(K), Ps=Ps)
        duals = DualVars(lam=np.zeros(K), rho=np.zeros(K),
                         theta=np.full(K, 1.0 / K), beta=0.0)
        sol = InnerSolution(upsilon=0.0, alloc=alloc, duals=duals,
                            log_vars={"dual_bound": 0.0, "primal_value": 0.0,
                                      "gap": 0.0, "rel_gap": 0.0,
                                      "evals": 0})
        return sol, duals

    ds = _DualState(eta, users, sys, caps)
    lt, rt, theta, beta = ds.seed()
    ds.q_tilde(lt, rt, theta, beta)

    def as_tilde(pt):
        th = np.maximum(pt[2], 1e-12)
        th = th / th.sum()
        return pt[0] / th, pt[1] / th, th, pt[3]

    for rnd in range(max_rounds):
        q_before = ds.best_q
        lt, rt, theta, beta = as_tilde(ds.best_pt)
        prev = np.inf
        for _ in range(8):
            lt, rt, theta, beta = ds.sweep(lt, rt, theta, beta)
            v = ds.best_q
            if abs(prev - v) <= 1e-11 * max(1.0, abs(v)):
                break
            prev = v
        schedule = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9) \
            if rnd == 0 else (1e-4, 1e-6, 1e-8, 1e-9)
        ds.smooth_descent(ds.best_pt, schedule)
        if q_before - ds.best_q <= 1e-9 * max(1.0, abs(ds.best_q)):
            break

    lam_b, rho_b, theta_b, beta_b = ds.best_pt
    duals = DualVars(lam=lam_b, rho=rho_b, theta=theta_b, beta=beta_b)
    _, primal, _ = dual_response(lam_b, rho_b, theta_b, beta_b, eta, users,
                                 sys, caps)
    p_best, alloc_best = _recover_feasible(primal, eta, users, sys, caps,
                                           Ps)
    gap = ds.best_q - p_best
    rel_gap = gap / max(1.0, abs(ds.best_q))
    sol = InnerSolution(upsilon=ds.best_q, alloc=alloc_best, duals=duals,
                        log_vars={"dual_bound": ds.best_q,
                                  "primal_value": p_best, "gap": gap,
                                  "rel_gap": rel_gap, "evals": ds.evals})
    if raise_on_gap and rel_gap > gap_tol:
        raise GapNotClosed(f"relative duality gap {rel_gap:.3e}",
                           dual_bound=ds.best_q, primal=sol)
    return sol, duals
