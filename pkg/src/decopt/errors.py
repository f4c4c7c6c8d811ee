"""Exception types shared across the package."""


class DecoptError(Exception):
    """Base class for all package errors."""


class ConfigError(DecoptError):
    """Invalid configuration value or unparseable config input."""


class MissingConstraintError(DecoptError):
    """A pairwise constraint was queried for a non-neighbor pair."""


class HorizonTooShortError(ConfigError):
    """The horizon T is too short for the regularizer interval to be real."""

    def __init__(self, message: str, min_horizon: float | None = None):
        super().__init__(message)
        self.min_horizon = min_horizon


class NumericalDivergenceError(DecoptError):
    """An iterate became non-finite or exceeded the magnitude guard."""

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


class FeasibilityViolationError(DecoptError):
    """A query point left the feasible set."""


class OracleFailureError(DecoptError):
    """The reference-solution solver failed to converge."""

    def __init__(self, message: str, residuals: dict | None = None):
        super().__init__(message)
        self.residuals = residuals or {}


class TargetUnreachedError(DecoptError):
    """A run never reached the requested relative-gap target."""

    def __init__(self, message: str, best_gap: float):
        super().__init__(message)
        self.best_gap = best_gap


class DegenerateStartError(DecoptError):
    """The initial cost gap is nonpositive, so relative gaps are undefined."""


class FitUndefinedError(DecoptError):
    """A log-log rate fit was requested on nonpositive values."""
