"""Domain types and pure evaluators for wireless-powered MEC networks.

Conventions: powers in watts, times in seconds, bandwidth in hertz, CPU
frequency in hertz, bits dimensionless. No internal unit scaling is applied.
All functions here are deterministic and side-effect free.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import EvaluationError, InvalidDecodingOrder

LN2 = math.log(2.0)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) * 1e-3


class Regime(enum.Enum):
    """Multiple-access scheme crossed with the offloading mode."""

    TDMA_PARTIAL = "tdma_partial"
    NOMA_PARTIAL = "noma_partial"
    TDMA_BINARY = "tdma_binary"
    NOMA_BINARY = "noma_binary"

    @property
    def is_noma(self) -> bool:
        return self in (Regime.NOMA_PARTIAL, Regime.NOMA_BINARY)

    @property
    def is_binary(self) -> bool:
        return self in (Regime.TDMA_BINARY, Regime.NOMA_BINARY)


@dataclass(frozen=True)
class EhParams:
    """Energy-harvester circuit parameters.

    The default harvester is a saturating sigmoid with a hard sensitivity
    threshold: zero output below `P0` input power, saturation at `P_max`.
    `kind="linear"` selects the idealized baseline with conversion
    efficiency `varrho` instead.
    """

    P_max: float = 0.004927
    P0: float = 6.4e-5
    mu: float = 274.0
    psi: float = 0.29
    kind: str = "nonlinear"
    varrho: float = 0.5

    def __post_init__(self):
        if self.P_max <= 0 or self.P0 < 0 or self.mu <= 0:
            raise ValueError("require P_max > 0, P0 >= 0, mu > 0")
        if self.kind not in ("nonlinear", "linear"):
            raise ValueError(f"unknown EH model kind {self.kind!r}")
        if not 0.0 < self.varrho <= 1.0:
            raise ValueError("linear-model efficiency must be in (0, 1]")


@dataclass(frozen=True)
class SystemParams:
    """Station-side constants shared by every user.

    Defaults follow the common simulation setup: 1 s frame, 2 MHz bandwidth,
    1000 cycles/bit, chip capacitance 1e-28, -90 dBm noise, amplifier
    coefficient 3.
    """

    K: int = 1
    T: float = 1.0
    B: float = 2e6
    C: float = 1e3
    gamma_c: float = 1e-28
    sigma2: float = 1e-9
    zeta: float = 3.0
    P_th: float = 0.04
    eh: EhParams = field(default_factory=EhParams)
    tol_outer: float = 1e-4
    tol_sca: float = 1e-4
    tol_dual: float = 1e-3
    max_iters: int = 30

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if min(self.T, self.B, self.gamma_c, self.sigma2, self.P_th) <= 0:
            raise ValueError("T, B, gamma_c, sigma2, P_th must be positive")
        if self.C < 1:
            raise ValueError("C must be >= 1 cycle/bit")
        if self.zeta < 1:
            raise ValueError("amplifier coefficient must be >= 1")
        if min(self.tol_outer, self.tol_sca, self.tol_dual) <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class UserParams:
    """Per-user channel and circuit parameters.

    `h` is the downlink power gain (station to user), `g` the uplink power
    gain (user to server). `v` inflates offloaded payloads with the
    transmission overhead (headers, encryption); overhead-free v = 1 is
    accepted for identity tests. `R_min` is the per-frame minimum number
    of computed bits.
    """

    h: float
    g: float
    v: float = 1.1
    P_r: float = dbm_to_watt(5.0)
    P_c: float = dbm_to_watt(5.0)
    R_min: float = 1e4

    def __post_init__(self):
        if self.h < 0 or self.g < 0:
            raise ValueError("channel power gains must be nonnegative")
        if self.v < 1:
            raise ValueError("overhead factor must be at least 1")
        if self.P_r < 0 or self.P_c < 0 or self.R_min < 0:
            raise ValueError("P_r, P_c, R_min must be nonnegative")


@dataclass(frozen=True)
class Allocation:
    """One frame's resource decision.

    TDMA regimes use the per-user slot vector `tau`; NOMA regimes use the
    shared slot `tau1`. `alpha` is only meaningful for binary regimes
    (fractional values appear transiently inside the relaxation). `Ps` is
    the station transmit power in effect for the frame.
    """

    tau0: float
    P: np.ndarray
    f: np.ndarray
    Ps: float
    tau: np.ndarray | None = None
    tau1: float | None = None
    alpha: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "P", np.asarray(self.P, dtype=float))
        object.__setattr__(self, "f", np.asarray(self.f, dtype=float))
        if self.tau is not None:
            object.__setattr__(self, "tau", np.asarray(self.tau, dtype=float))
        if self.alpha is not None:
            object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))

    @property
    def K(self) -> int:
        return self.P.shape[0]

    def with_alpha(self, alpha) -> "Allocation":
        return replace(self, alpha=np.asarray(alpha, dtype=float))


@dataclass(frozen=True)
class PerUserMetrics:
    """Computed bits, consumed energy (J) and their ratio for one user."""

    bits: float
    energy: float
    ce: float


def zero_allocation(K: int, regime: Regime, Ps: float) -> Allocation:
    """All-idle frame: nothing harvested, computed or offloaded."""
    alpha = np.zeros(K) if regime.is_binary else None
    if regime.is_noma:
        return Allocation(tau0=0.0, P=np.zeros(K), f=np.zeros(K), Ps=Ps,
                          tau1=0.0, alpha=alpha)
    return Allocation(tau0=0.0, P=np.zeros(K), f=np.zeros(K), Ps=Ps,
                      tau=np.zeros(K), alpha=alpha)


# ---------------------------------------------------------------------------
# elementary evaluators
# ---------------------------------------------------------------------------

def harvested_power(Ps: float, u: UserParams, sys: SystemParams) -> float:
    """Harvested power (W) at station power `Ps`, i.e. energy per second
    of harvesting. Zero below the sensitivity threshold, saturating at
    `P_max` for the nonlinear harvester; `varrho * h * Ps` for the linear
    baseline."""
    eh = sys.eh
    if eh.kind == "linear":
        return eh.varrho * u.h * Ps
    p_in = u.h * Ps
    c0 = math.exp(-eh.mu * eh.P0 + eh.psi)
    try:
        sig = math.exp(-eh.mu * p_in + eh.psi)
    except OverflowError:
        return 0.0
    val = (eh.P_max / c0) * ((1.0 + c0) / (1.0 + sig) - 1.0)
    return max(val, 0.0)


def harvested_energy(tau0: float, Ps: float, u: UserParams,
                     sys: SystemParams) -> float:
    """Energy (J) harvested over an EH stage of length `tau0` seconds."""
    if tau0 < 0 or Ps < 0:
        raise ValueError("tau0 and Ps must be nonnegative")
    return tau0 * harvested_power(Ps, u, sys)


def offload_bits_tdma(tau_k: float, P_k: float, u: UserParams,
                      sys: SystemParams) -> float:
    """Bits delivered over a dedicated slot of `tau_k` seconds at power `P_k`."""
    if tau_k <= 0.0 or P_k <= 0.0:
        return 0.0
    snr = u.g * P_k / sys.sigma2
    return (sys.B * tau_k / u.v) * math.log2(1.0 + snr)


def _check_sic_order(users: Sequence[UserParams]) -> None:
    g = [u.g for u in users]
    for i in range(len(g) - 1):
        if g[i] > g[i + 1]:
            raise InvalidDecodingOrder(
                "uplink gains must be sorted ascending (weakest first); "
                f"g[{i}]={g[i]:.3e} > g[{i + 1}]={g[i + 1]:.3e}")


def offload_bits_noma(tau1: float, P: np.ndarray, k: int,
                      users: Sequence[UserParams], sys: SystemParams,
                      alpha: np.ndarray | None = None) -> float:
    """Bits user `k` delivers during the shared slot under SIC decoding.

    Users are indexed by ascending uplink gain; the receiver decodes the
    strongest (last) user first, so user k sees residual interference from
    users k+1..K-1 only and the last user is interference-free. `alpha`
    optionally weights interferer powers (binary-mode relaxation).
    """
    _check_sic_order(users)
    if tau1 <= 0.0:
        return 0.0
    P = np.asarray(P, dtype=float)
    K = len(users)
    w = np.ones(K) if alpha is None else np.asarray(alpha, dtype=float)
    if P[k] <= 0.0:
        return 0.0
    interf = sum(w[i] * users[i].g * P[i] for i in range(k + 1, K))
    sinr = users[k].g * P[k] / (interf + sys.sigma2)
    return (sys.B * tau1 / users[k].v) * math.log2(1.0 + sinr)


def local_bits(f: float, sys: SystemParams) -> float:
    """Bits computed locally over the whole frame at CPU frequency `f`."""
    if f < 0:
        raise ValueError("f must be nonnegative")
    return sys.T * f / sys.C


def local_energy(f: float, sys: SystemParams) -> float:
    """Energy (J) burned by the local CPU over the frame at frequency `f`."""
    if f < 0:
        raise ValueError("f must be nonnegative")
    return sys.T * sys.gamma_c * f ** 3


# ---------------------------------------------------------------------------
# whole-allocation evaluation
# ---------------------------------------------------------------------------

def _safe_ce(bits: float, energy: float) -> float:
    if bits <= 0.0:
        return 0.0
    if energy <= 0.0:
        raise EvaluationError(
            f"positive bits ({bits:.3e}) with nonpositive energy "
            f"({energy:.3e})")
    return bits / energy


def evaluate(alloc: Allocation, regime: Regime,
             users: Sequence[UserParams],
             sys: SystemParams) -> list[PerUserMetrics]:
    """Per-user computed bits, consumed energy and computation efficiency.

    Binary regimes blend the local and offload branches linearly in
    alpha_k, which reduces to the pure expressions at alpha in {0, 1}.
    """
    K = len(users)
    if alloc.K != K:
        raise ValueError(f"allocation sized for {alloc.K} users, got {K}")
    if regime.is_noma:
        _check_sic_order(users)
        if alloc.tau1 is None:
            raise ValueError("NOMA regimes need a shared slot tau1")
    elif alloc.tau is None:
        raise ValueError("TDMA regimes need a per-user slot vector tau")
    alpha = alloc.alpha
    if regime.is_binary and alpha is None:
        raise ValueError("binary regimes need a mode vector alpha")

    out = []
    for k, u in enumerate(users):
        if regime.is_noma:
            slot = alloc.tau1
            a = alpha if regime is Regime.NOMA_BINARY else None
            off_bits = offload_bits_noma(slot, alloc.P, k, users, sys, alpha=a)
        else:
            slot = float(alloc.tau[k])
            off_bits = offload_bits_tdma(slot, float(alloc.P[k]), u, sys)
        loc_b = local_bits(float(alloc.f[k]), sys)
        loc_e = local_energy(float(alloc.f[k]), sys)
        off_e = sys.zeta * slot * (float(alloc.P[k]) + u.P_c)
        eh_e = alloc.tau0 * u.P_r

        if regime.is_binary:
            a_k = float(alpha[k])
            bits = (1.0 - a_k) * loc_b + a_k * off_bits
            energy = ((1.0 - a_k) * (eh_e + loc_e)
                      + a_k * (eh_e + off_e))
        else:
            bits = loc_b + off_bits
            energy = eh_e + off_e + loc_e
        out.append(PerUserMetrics(bits=bits, energy=energy,
                                  ce=_safe_ce(bits, energy)))
    return out


def min_ce(alloc: Allocation, regime: Regime, users: Sequence[UserParams],
           sys: SystemParams) -> float:
    return min(m.ce for m in evaluate(alloc, regime, users, sys))


def _spent_energy(alloc: Allocation, regime: Regime, k: int, u: UserParams,
                  sys: SystemParams) -> float:
    """Energy drawn from the harvest by user k (EH causality left side)."""
    slot = alloc.tau1 if regime.is_noma else float(alloc.tau[k])
    loc_e = local_energy(float(alloc.f[k]), sys)
    off_e = sys.zeta * slot * (float(alloc.P[k]) + u.P_c)
    eh_e = alloc.tau0 * u.P_r
    if regime.is_binary:
        a_k = float(alloc.alpha[k])
        return eh_e + a_k * off_e + (1.0 - a_k) * loc_e
    return eh_e + off_e + loc_e


def feasibility_residuals(alloc: Allocation, regime: Regime,
                          users: Sequence[UserParams],
                          sys: SystemParams) -> np.ndarray:
    """Signed residuals, one per constraint; <= 0 means satisfied.

    Order: per-user min-bits, per-user EH causality, frame-time budget,
    then sign/box constraints (tau0, slots, powers, frequencies, Ps cap,
    and alpha box for binary regimes).
    """
    K = len(users)
    metrics = evaluate(alloc, regime, users, sys)
    res: list[float] = []
    for k, u in enumerate(users):
        res.append(u.R_min - metrics[k].bits)
    for k, u in enumerate(users):
        harv = harvested_energy(alloc.tau0, alloc.Ps, u, sys)
        res.append(_spent_energy(alloc, regime, k, u, sys) - harv)
    if regime.is_noma:
        res.append(alloc.tau0 + alloc.tau1 - sys.T)
    elif regime is Regime.TDMA_BINARY:
        res.append(alloc.tau0 + float(np.dot(alloc.alpha, alloc.tau)) - sys.T)
    else:
        res.append(alloc.tau0 + float(np.sum(alloc.tau)) - sys.T)
    res.append(-alloc.tau0)
    res.append(alloc.tau0 - sys.T)
    slots = [alloc.tau1] if regime.is_noma else list(alloc.tau)
    for s in slots:
        res.append(-s)
        res.append(s - sys.T)
    res.extend(-alloc.P)
    res.extend(-alloc.f)
    res.append(-alloc.Ps)
    res.append(alloc.Ps - sys.P_th)
    if regime.is_binary:
        res.extend(-alloc.alpha)
        res.extend(alloc.alpha - 1.0)
    return np.asarray(res, dtype=float)


def residual_scales(regime: Regime, users: Sequence[UserParams],
                    sys: SystemParams) -> np.ndarray:
    """Natural magnitude of each feasibility residual, in the same order
    as feasibility_residuals; used for scale-aware tolerance checks."""
    K = len(users)
    sc: list[float] = []
    for u in users:
        sc.append(max(1.0, u.R_min))
    for u in users:
        sc.append(max(1e-9, sys.T * harvested_power(sys.P_th, u, sys),
                      sys.T * u.P_r))
    sc.append(sys.T)
    sc.extend([sys.T, sys.T])
    n_slots = 1 if regime.is_noma else K
    for _ in range(n_slots):
        sc.extend([sys.T, sys.T])
    sc.extend([max(1.0, sys.P_th)] * K)
    f_ref = [(max(harvested_power(sys.P_th, u, sys) - u.P_r, 1e-30)
              / sys.gamma_c) ** (1.0 / 3.0) for u in users]
    sc.extend([max(1.0, fr) for fr in f_ref])
    sc.extend([max(1.0, sys.P_th)] * 2)
    if regime.is_binary:
        sc.extend([1.0] * (2 * K))
    return np.asarray(sc, dtype=float)


# ---------------------------------------------------------------------------
# channel sampling (stand-in model; experiments accept explicit gains)
# ---------------------------------------------------------------------------

def sample_users(K: int, rng: np.random.Generator, *,
                 d_range: tuple[float, float] = (1.0, 5.0),
                 pathloss_exp: float = 2.5,
                 v: float = 1.1,
                 P_r: float = dbm_to_watt(5.0),
                 P_c: float = dbm_to_watt(5.0),
                 R_min: float = 0.0,
                 sort_uplink: bool = True) -> list[UserParams]:
    """Draw users with d^-2.5 pathloss and Rayleigh fading on both links.

    This is a documented stand-in for an unavailable external channel
    model. Users are sorted by ascending uplink gain so NOMA decoding is
    well defined; pass sort_uplink=False to keep draw order.
    """
    d = rng.uniform(*d_range, size=K)
    fade_h = rng.exponential(1.0, size=K)
    fade_g = rng.exponential(1.0, size=K)
    h = d ** (-pathloss_exp) * fade_h
    g = d ** (-pathloss_exp) * fade_g
    users = [UserParams(h=float(h[k]), g=float(g[k]), v=v, P_r=P_r, P_c=P_c,
                        R_min=R_min) for k in range(K)]
    if sort_uplink:
        users.sort(key=lambda u: u.g)
    return users
