"""Exception hierarchy.

Validation problems (bad input, unsupported combinations) derive from
``ValidationError``; failures of the numerics on otherwise valid input derive
from ``NumericalError``. The CLI maps the two families to distinct exit codes.
"""


class ValidationError(ValueError):
    """Input data or configuration is invalid."""


class NumericalError(ArithmeticError):
    """A numerical procedure failed on valid input."""


class ConvergenceError(NumericalError):
    """An iterative solver did not converge.

    Attributes
    ----------
    last_iterate : object
        Whatever the solver had when it stopped (coefficients, state), or None.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class SeparationError(ConvergenceError):
    """Binary outcome perfectly (or quasi-perfectly) separated by the design."""


class SingularMatrixError(NumericalError):
    """Information matrix (or correlation matrix) is singular."""


class NoOverlapError(NumericalError):
    """MAIC target means lie outside the convex hull of the IPD covariates."""


class DiagnosticError(ValidationError):
    """Requested diagnostic is not available for the strategy that produced a result."""
