"""Exception hierarchy shared by all counterspec modules."""


class CounterspecError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(CounterspecError, ValueError):
    """Inputs with inconsistent dimensions or out-of-domain values."""


class PreconditionError(InvalidArgumentError):
    """An operation was called on a state that violates its invariants."""


class SpecCostContractError(CounterspecError):
    """A specification cost broke its contract (e.g. negative inverse gradient)."""


class NonConvergenceError(CounterspecError):
    """An iterative method hit its iteration cap.

    ``best`` carries the best value found and ``report`` the partial solver
    report, when one exists.
    """

    def __init__(self, message, best=None, report=None):
        super().__init__(message)
        self.best = best
        self.report = report


class NumericalDivergenceError(CounterspecError):
    """A non-finite iterate appeared; usually the step size is too large."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class OracleInconsistencyError(CounterspecError):
    """Two independent routes to the same quantity disagreed."""


class InsufficientGridError(CounterspecError):
    """Every reference point of a verification grid was infeasible."""


class StencilError(CounterspecError):
    """A finite-difference stencil touched an infeasible specification."""


class UndefinedDifficultyError(CounterspecError):
    """Constraint difficulty requested where both evaluations are infeasible."""


class TickError(CounterspecError):
    """An MPC tick failed to produce a plan."""

    def __init__(self, message, step=None, cause=None):
        super().__init__(message)
        self.step = step
        self.cause = cause
