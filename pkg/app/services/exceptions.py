"""
Domain errors raised by the solver, estimator and experiment services.

Every error derives from SolverError so callers at the edges (routers, CLI) can
catch the whole family in one clause.
"""


class SolverError(Exception):
    """Base class for every error raised by the services."""


class InvalidSystem(SolverError, ValueError):
    """A value object was built with data violating its invariants."""


class SingularSystem(SolverError):
    """A linear solve met a rank-deficient or badly conditioned matrix."""


class StepUndefined(SolverError):
    """||ΔTP|| fell below the epsilon guard; the gradient step is skipped."""


class DimensionMismatch(SolverError, ValueError):
    """Operands of a tensor product have incompatible shapes."""


class NotStochastic(SolverError, ValueError):
    """A transition matrix has a negative entry or a row not summing to one."""


class NoConvergence(SolverError):
    """Power iteration did not reach its residual within the sweep budget."""


class DegeneratePair(SolverError):
    """A transition (s, s') has φ_s − γφ_s' ≈ 0, so its normalized TD error is undefined."""

    def __init__(self, s: int, s_next: int):
        super().__init__(f"degenerate pair ({s}, {s_next}): ||φ_s − γφ_s'|| < 1e-12")
        self.s = s
        self.s_next = s_next


class AssertionFailed(SolverError):
    """A run-time check of an experiment failed (bound violated, oracle mismatch)."""
