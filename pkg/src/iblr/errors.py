"""Exception types shared across the library."""


class IBLRError(Exception):
    """Base class for library errors."""


class NotPositiveDefinite(IBLRError):
    """A matrix expected to be positive definite is not.

    ``index`` is the row of the first non-positive Cholesky pivot.
    """

    def __init__(self, index: int, message: str | None = None):
        self.index = index
        super().__init__(message or f"matrix is not positive definite (pivot row {index})")


class DimensionMismatch(IBLRError):
    """Operands have incompatible shapes."""


class DomainError(IBLRError):
    """Argument outside the function's domain."""


class SupportError(IBLRError):
    """Point outside the distribution's support."""


class InfeasibleResult(IBLRError):
    """An update left the feasible set.

    Only reachable for user-supplied constraint/contraction configurations;
    the built-in families carry closed-form feasibility guarantees.
    """


class StepTooLarge(IBLRError):
    """A finite-difference perturbation left the feasible set."""


class EstimatorUnavailable(IBLRError):
    """The requested gradient estimator needs model facilities that are absent."""


class PerExampleUnavailable(IBLRError):
    """Per-example gradients were requested but the model does not provide them."""


class LineSearchExhausted(IBLRError):
    """Backtracking failed to restore feasibility within the retry budget."""


class UnknownDensity(IBLRError):
    """Requested toy density is not in the catalog."""


class ParseError(IBLRError):
    """A data file failed to parse.  ``line`` is 1-based."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class ShapeError(IBLRError):
    """Parsed data has inconsistent shape."""


class ShapeMismatch(IBLRError):
    """Blocked values do not match the family's declared block layout."""


class DimensionUnsupported(IBLRError):
    """Operation requires a different dimensionality."""


class ConfigError(IBLRError):
    """Invalid experiment configuration.  The message names the offending field."""
