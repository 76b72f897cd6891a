"""Exception hierarchy and warning categories.

Exit-code mapping used by the CLI: InputError family -> 2,
ConvergenceError family -> 3, InfeasibleError -> 4.
"""


class AgalError(Exception):
    """Base class for all package errors."""


class InputError(AgalError):
    """Invalid or inconsistent inputs (bad panels, windows, matrices)."""


class PoolTooSmallError(InputError):
    """Pool filter left fewer than two assets."""


class SingularMatrixError(InputError):
    """Negative matrix power requested on a singular covariance."""


class DegenerateScalingError(InputError):
    """Net-exposure normalization impossible (denominator ~ 0)."""


class DegenerateResidualError(InputError):
    """Uniform predictor is (numerically) parallel to the top eigenvector."""


class ConvergenceError(AgalError):
    """An iterative solver exhausted its budget before reaching tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class CleaningFailedError(ConvergenceError):
    """Every cross-validation fold was degenerate."""


class InfeasibleError(AgalError):
    """Constraint set is empty (e.g. N * position_cap < 1)."""


class DegenerateDateWarning(UserWarning):
    """A cross-section of returns was identically zero on some date."""


class DataCoverageWarning(UserWarning):
    """Data shorter or sparser than recommended for the operation."""
