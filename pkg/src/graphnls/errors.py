"""Exception types shared across the package.

The CLI maps each family to an exit code: validation problems to 2,
solver non-convergence to 3 and runtime blow-up to 4.
"""


class GraphNLSError(Exception):
    """Base class for package errors."""


class ValidationError(GraphNLSError, ValueError):
    """Bad input: precondition, regime or configuration violation."""


class DomainError(ValidationError):
    """Parameter outside the admissible range of a closed form."""


class RegimeError(ValidationError):
    """Coupling constants violate the regime a theorem requires."""


class ContinuityError(ValidationError):
    """Field is not continuous at the vertex."""


class ConvergenceError(GraphNLSError, RuntimeError):
    """An iterative solver failed to reach its tolerance."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class BlowUpError(GraphNLSError, RuntimeError):
    """Time integration produced a norm beyond the abort guard."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
