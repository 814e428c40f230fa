"""Exception hierarchy shared across the package."""


class MnarStackError(Exception):
    """Base class for all package errors."""


class DataError(MnarStackError):
    """Malformed input data or an invalid variable-role assignment."""


class ConfigError(MnarStackError):
    """Unknown, missing, or malformed configuration entries."""


class RankDeficientError(MnarStackError):
    """A design matrix does not have full column rank."""


class ConvergenceError(MnarStackError):
    """An iterative fit failed to converge.

    Parameters
    ----------
    message : str
        Human-readable description.
    trace : list of tuple, optional
        ``(iteration, log_likelihood, max_abs_score)`` per iteration.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class SeparationError(ConvergenceError):
    """A binary-outcome fit is (quasi-)separated or has a single class."""


class WeightError(MnarStackError):
    """Missingness weights are unbounded or ill-defined."""


class NotPositiveDefiniteError(MnarStackError):
    """An information or covariance matrix is not positive definite."""

    def __init__(self, message, min_eigenvalue=float("nan")):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue
