"""Exception types shared across the solver stack."""


class WpMecError(Exception):
    """Base class for all library errors."""


class InvalidDecodingOrder(WpMecError):
    """Uplink gains are not sorted ascending, so SIC order is undefined."""


class EvaluationError(WpMecError):
    """Metric evaluation hit an undefined ratio (bits > 0 with zero energy)."""


class Infeasible(WpMecError):
    """Problem has no feasible point; carries a certificate residual."""

    def __init__(self, message: str, certificate: float = float("nan")):
        super().__init__(message)
        self.certificate = certificate


class NoStrictlyFeasibleStart(WpMecError):
    """Barrier solve was handed a start that violates a constraint."""


class LineSearchStall(WpMecError):
    """Newton backtracking could not make progress."""


class MaxNewtonIters(WpMecError):
    """Newton loop exceeded its iteration budget."""


class NonConvergent(WpMecError):
    """Iteration cap reached; carries the best iterate found so far."""

    def __init__(self, message: str, best=None, trace=None):
        super().__init__(message)
        self.best = best
        self.trace = trace


class InnerSolverFailure(WpMecError):
    """Inner subproblem solver failed; carries the outer iteration index."""

    def __init__(self, message: str, iteration: int = -1):
        super().__init__(message)
        self.iteration = iteration


class DegenerateDuals(WpMecError):
    """Closed-form expression undefined for these multipliers."""


class DegenerateCoefficients(WpMecError):
    """Root bracketing impossible for these coefficients."""


class PositiveZ(WpMecError):
    """Energy-time slope is positive: dual point is infeasible."""


class NegativeZ(WpMecError):
    """Energy budget already exceeded by the supplied primal context."""


class GapNotClosed(WpMecError):
    """Dual ascent stopped with the duality gap above target.

    Carries both the dual bound and the best feasible primal for diagnosis.
    """

    def __init__(self, message: str, dual_bound=None, primal=None):
        super().__init__(message)
        self.dual_bound = dual_bound
        self.primal = primal


class NoFeasiblePoint(WpMecError):
    """Exhaustive search found no feasible grid point."""


class AllZero(WpMecError):
    """Fairness index undefined for an all-zero vector."""


class ConfigError(WpMecError):
    """Experiment configuration failed to parse or validate."""
