"""Exception types shared across the package.

The CLI maps these onto exit codes: argument/strategy/config/format errors
exit with 3 (data or format problem), numeric failures exit with 4.
"""


class McsegError(Exception):
    """Base class for all package-specific errors."""


class FormatError(McsegError):
    """Container header is malformed or declares unsupported fields."""


class TruncationError(McsegError):
    """Container payload is shorter than the header declares."""


class ArgumentError(McsegError, ValueError):
    """An argument violates a documented precondition."""


class ConfigError(McsegError):
    """A configuration cannot produce a valid object."""


class ConvergenceError(McsegError):
    """An iteration failed to converge within the allowed step budget."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class DegenerateError(McsegError):
    """Input is degenerate (for example all-zero) so the result is undefined."""


class DegenerateRangeError(DegenerateError):
    """Global maximum equals global minimum; range scaling is undefined."""


class StrategyError(McsegError):
    """Labels are incompatible with the selected labeling strategy."""


class NumericsError(McsegError):
    """A non-finite value appeared during numerical computation."""

    def __init__(self, message: str, iteration: int | None = None, history=None):
        super().__init__(message)
        self.iteration = iteration
        self.history = history


class StateError(McsegError):
    """Cached state does not match the object it is being used with."""


class UndefinedMetricsError(McsegError):
    """Metrics are undefined because no pixels were evaluated."""
