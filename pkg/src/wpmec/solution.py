"""Containers shared between the inner solvers and the closed-form layer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Allocation


def _nonneg(name: str, arr) -> None:
    if arr is None:
        return
    a = np.atleast_1d(np.asarray(arr, dtype=float))
    if np.any(a < -1e-12):
        raise ValueError(f"dual block {name} must be nonnegative, got {a}")


@dataclass
class DualVars:
    """Lagrange multipliers, one block per constraint family.

    Partial-mode path: `lam` (min-bits), `rho` (EH causality), `theta`
    (efficiency epigraph), `beta` (frame-time budget). TDMA binary mode
    adds `mu` (EH), `chi` (epigraph) and scalar `upsilon` (time budget);
    NOMA binary mode uses `varpi` (min-bits), `lam` (rate link), `omega`
    (epigraph) and `mu` (EH). Unused blocks stay None.
    """

    lam: np.ndarray
    rho: np.ndarray | None = None
    theta: np.ndarray | None = None
    beta: float | None = None
    mu: np.ndarray | None = None
    upsilon: float | None = None
    chi: np.ndarray | None = None
    varpi: np.ndarray | None = None
    omega: np.ndarray | None = None

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        for name in ("rho", "theta", "mu", "chi", "varpi", "omega"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=float))
        for name in ("lam", "rho", "theta", "beta", "mu", "upsilon",
                     "chi", "varpi", "omega"):
            _nonneg(name, getattr(self, name))


@dataclass
class InnerSolution:
    """Result of one parametric inner solve.

    `upsilon` is the inner objective value (worst-user bits minus eta
    times energy). `y` carries the slot-power lift for TDMA problems;
    `log_vars` carries the exponential-domain variables for NOMA ones.
    `kkt_residual` is the scaled stationarity residual at the returned
    multipliers.
    """

    upsilon: float
    alloc: Allocation
    duals: DualVars
    kkt_residual: float = 0.0
    newton_iters: int = 0
    y: np.ndarray | None = None
    log_vars: dict = field(default_factory=dict)

    @property
    def tau0(self) -> float:
        return self.alloc.tau0

    @property
    def tau(self):
        return self.alloc.tau

    @property
    def f(self) -> np.ndarray:
        return self.alloc.f

    @property
    def P(self) -> np.ndarray:
        return self.alloc.P
