"""Exception types shared across the package."""


class ZgsflowError(Exception):
    """Base class for all package errors."""


class ConfigError(ZgsflowError):
    """Malformed or inconsistent run configuration."""


class SingularHessian(ZgsflowError):
    """A required positive definite factorization failed.

    Carries an optional ``agent`` attribute identifying which local
    problem produced the failure (None for centralized solves).
    """

    def __init__(self, message: str, agent: int | None = None):
        super().__init__(message)
        self.agent = agent


class RankDeficient(ZgsflowError):
    """An equality constraint matrix or Schur complement lost row rank."""


class DomainViolation(ZgsflowError):
    """A barrier evaluation left the relaxed feasible region.

    Raised when some s_i(t) - g_i^l(x_i) <= 0; carries the agent index
    (None for centralized problems) and the worst margin seen.
    """

    def __init__(self, message: str, agent: int | None = None,
                 margin: float = 0.0):
        super().__init__(message)
        self.agent = agent
        self.margin = margin


class SpectrumMismatch(ZgsflowError):
    """An eigenvalue split disagreed with the predicted null-space size."""


class StepUnderflow(ZgsflowError):
    """Step halving hit its floor without restoring feasibility."""


class MaxStepsExceeded(ZgsflowError):
    """The integrator exceeded its step budget before reaching t_end."""


class NoConvergence(ZgsflowError):
    """An iterative solver stalled; carries the last residual norm."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class InfeasibleStart(ZgsflowError):
    """No strictly feasible interior point was found for a barrier solve."""
