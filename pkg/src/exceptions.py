"""
Error types raised by the MN-PCA library.

Validation problems subclass ``ValueError`` and numerical failures subclass
``ArithmeticError`` so that callers catching the builtin families keep working.
The CLI maps the first family to exit code 2 and the second to exit code 3.
"""


class MnPcaError(Exception):
    """Base class for every error raised by this package."""


class NonFiniteError(MnPcaError, ValueError):
    """Input contains NaN or Inf entries."""


class RankTooLargeError(MnPcaError, ValueError):
    """Requested rank exceeds min(rows, cols)."""


class ShapeMismatchError(MnPcaError, ValueError):
    """Operands have inconsistent shapes."""


class MalformedInputError(MnPcaError, ValueError):
    """A file or argument could not be parsed."""


class InfeasibleSpecError(MnPcaError, ValueError):
    """A generator specification cannot be satisfied."""


class NotPositiveDefiniteError(MnPcaError, ArithmeticError):
    """Matrix is not symmetric positive definite."""


class DegenerateCovarianceError(MnPcaError, ArithmeticError):
    """Covariance carries no off-diagonal signal (lambda grid undefined)."""


class PowerIterationStalledError(MnPcaError, ArithmeticError):
    """Generalized power iteration did not settle within its budget."""

    def __init__(self, component: int, change: float):
        super().__init__(
            f"power iteration stalled on component {component} "
            f"(relative Rayleigh change {change:.3e})"
        )
        self.component = component
        self.change = change


class IllConditionedTransformError(MnPcaError, ArithmeticError):
    """
    A whitening transform became numerically singular.

    ``best`` holds the model built from the lowest-objective iterate seen
    before the abort (None if no iterate completed).
    """

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best
