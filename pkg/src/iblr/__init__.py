"""Natural-gradient variational inference with constraint-preserving retractions.

The central update is natural-gradient descent augmented with a second-order
retraction term,

    lam <- lam - t * ghat - (t^2 / 2) * Gamma(ghat, ghat),

applied block-wise to parameterizations whose blocks are either unconstrained
vectors, positive scalars, or symmetric positive-definite matrices.  For the
built-in approximation families the extra term keeps every iterate feasible
without a line search.
"""

__version__ = "0.1.0"

from iblr.errors import (
    DimensionMismatch,
    DomainError,
    EstimatorUnavailable,
    InfeasibleResult,
    NotPositiveDefinite,
    SupportError,
)
from iblr.linalg import SPDMatrix, cholesky, matrix_exponential, min_eigenvalue, solve_spd
from iblr.rng import RngStream

__all__ = [
    "DimensionMismatch",
    "DomainError",
    "EstimatorUnavailable",
    "InfeasibleResult",
    "NotPositiveDefinite",
    "RngStream",
    "SPDMatrix",
    "SupportError",
    "cholesky",
    "matrix_exponential",
    "min_eigenvalue",
    "solve_spd",
    "__version__",
]
