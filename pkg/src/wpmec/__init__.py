"""Max-min computation-efficiency solvers for wireless-powered MEC networks.

Four regimes are covered: {TDMA, NOMA} x {partial, binary offloading}.
Users harvest RF energy through a saturating non-linear harvester, then
split the frame between local computing and offloading; the solvers
maximize the worst user's computed-bits-per-joule.
"""

__version__ = "0.1.0"

from .model import (Allocation, EhParams, PerUserMetrics, Regime,
                    SystemParams, UserParams, evaluate,
                    feasibility_residuals, harvested_energy,
                    harvested_power, local_bits, local_energy,
                    offload_bits_noma, offload_bits_tdma, sample_users)
from .fractional import (ParametricProblem, SolveReport, dinkelbach,
                         make_noma_partial, make_tdma_partial,
                         max_min_bits)
from .solution import DualVars, InnerSolution

__all__ = [
    "Allocation", "DualVars", "EhParams", "InnerSolution",
    "ParametricProblem", "PerUserMetrics", "Regime", "SolveReport",
    "SystemParams", "UserParams", "dinkelbach", "evaluate",
    "feasibility_residuals", "harvested_energy", "harvested_power",
    "local_bits", "local_energy", "make_noma_partial",
    "make_tdma_partial", "max_min_bits", "offload_bits_noma",
    "offload_bits_tdma", "sample_users",
]
