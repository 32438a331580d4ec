"""Dense symmetric linear algebra on the small matrices the families carry.

Everything here targets modest dimensions (tests go up to d ~ 64); the
routines prefer clarity and certified accuracy over large-scale performance.
"""

from __future__ import annotations

import numpy as np

from iblr.errors import DimensionMismatch, NotPositiveDefinite

SYMMETRY_RTOL = 1e-12


def symmetrize(m: np.ndarray) -> np.ndarray:
    """(M + M^T) / 2.  Stochastic updates break exact symmetry; this restores it."""
    return 0.5 * (m + m.T)


def check_symmetric(m: np.ndarray) -> None:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    tol = SYMMETRY_RTOL * (1.0 + np.abs(m))
    if np.any(np.abs(m - m.T) > tol):
        worst = float(np.max(np.abs(m - m.T)))
        raise DimensionMismatch(f"matrix is not symmetric (max asymmetry {worst:.3e})")


def _cholesky_pivot_scan(m: np.ndarray) -> int:
    """Row index of the first failing pivot of an unpivoted Cholesky."""
    d = m.shape[0]
    a = m.astype(float).copy()
    for j in range(d):
        pivot = a[j, j] - a[j, :j] @ a[j, :j]
        if pivot <= 0.0 or not np.isfinite(pivot):
            return j
        ljj = np.sqrt(pivot)
        a[j, j] = ljj
        if j + 1 < d:
            a[j + 1 :, j] = (a[j + 1 :, j] - a[j + 1 :, :j] @ a[j, :j]) / ljj
    return d  # unreachable for genuinely non-PD input


def cholesky(m: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L L^T = m.

    Raises :class:`NotPositiveDefinite` carrying the row index of the first
    non-positive pivot when m is not positive definite.
    """
    m = np.asarray(m, dtype=float)
    check_symmetric(m)
    sym = symmetrize(m)
    try:
        return np.linalg.cholesky(sym)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(_cholesky_pivot_scan(sym)) from None


def solve_spd(m, b):
    """Solve m x = b for SPD m via its Cholesky factor."""
    if isinstance(m, SPDMatrix):
        length = m.dim
        chol = m.chol
    else:
        m = np.asarray(m, dtype=float)
        length = m.shape[0]
        chol = cholesky(m)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != length:
        raise DimensionMismatch(f"rhs has leading dimension {b.shape[0]}, expected {length}")
    y = np.linalg.solve(chol, b)
    return np.linalg.solve(chol.T, y)


def min_eigenvalue(m) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    if isinstance(m, SPDMatrix):
        m = m.data
    m = np.asarray(m, dtype=float)
    check_symmetric(m)
    return float(np.linalg.eigvalsh(symmetrize(m))[0])


def matrix_exponential(m: np.ndarray, order: int = 12) -> np.ndarray:
    """Matrix exponential of a symmetric matrix by scaling and squaring.

    The input is scaled by 2^-s with s = ceil(log2(1 + max|m_ij|)), expanded
    in a truncated power series of the given order, then squared s times.
    """
    m = np.asarray(m, dtype=float)
    check_symmetric(m)
    d = m.shape[0]
    # Row-sum norm bounds the spectral norm for symmetric input; the extra
    # squaring keeps the scaled argument below 1/2 so the order-12 series
    # stays ahead of the 1e-10 contract after un-squaring.
    norm = float(np.max(np.sum(np.abs(m), axis=1))) if m.size else 0.0
    s = int(np.ceil(np.log2(1.0 + norm))) + 1 if norm > 0 else 0
    a = m / (2.0**s)
    result = np.eye(d)
    term = np.eye(d)
    for k in range(1, order + 1):
        term = term @ a / k
        result = result + term
    for _ in range(s):
        result = result @ result
    return symmetrize(result)


def sym_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition."""
    m = np.asarray(m, dtype=float)
    check_symmetric(m)
    w, v = np.linalg.eigh(symmetrize(m))
    if w[0] < 0 and w[0] > -1e-13 * max(1.0, abs(w[-1])):
        w = np.clip(w, 0.0, None)
    if w[0] < 0:
        raise NotPositiveDefinite(0, "matrix square root of an indefinite matrix")
    return symmetrize((v * np.sqrt(w)) @ v.T)


class SPDMatrix:
    """Symmetric positive-definite matrix with a cached Cholesky factor.

    Construction validates symmetry and positive-definiteness, so holding an
    instance is itself a feasibility certificate.  The stored ``data`` is the
    symmetrized input.
    """

    __slots__ = ("dim", "data", "chol")

    def __init__(self, data, chol: np.ndarray | None = None):
        data = np.asarray(data, dtype=float)
        check_symmetric(data)
        self.data = symmetrize(data)
        self.dim = self.data.shape[0]
        self.chol = cholesky(self.data) if chol is None else chol

    @classmethod
    def identity(cls, dim: int) -> "SPDMatrix":
        return cls(np.eye(dim))

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.dim:
            raise DimensionMismatch(f"rhs has leading dimension {b.shape[0]}, expected {self.dim}")
        y = np.linalg.solve(self.chol, b)
        return np.linalg.solve(self.chol.T, y)

    def inverse(self) -> np.ndarray:
        return symmetrize(self.solve(np.eye(self.dim)))

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def quad(self, x: np.ndarray):
        """x^T M x, vectorized over rows when x is 2-D (n, d)."""
        x = np.asarray(x, dtype=float)
        y = x @ self.chol
        if y.ndim == 1:
            return float(y @ y)
        return np.einsum("ij,ij->i", y, y)

    def matmul(self, other):
        return self.data @ other

    def copy(self) -> "SPDMatrix":
        return SPDMatrix(self.data.copy(), chol=self.chol.copy())

    def __repr__(self) -> str:
        return f"SPDMatrix(dim={self.dim})"


def random_spd(rng, dim: int, eps: float = 0.5) -> SPDMatrix:
    """A generic well-conditioned SPD matrix, A A^T + eps I."""
    a = rng.gen.standard_normal((dim, dim))
    return SPDMatrix(a @ a.T / dim + eps * np.eye(dim))


def random_symmetric(rng, dim: int, scale: float = 1.0) -> np.ndarray:
    a = rng.gen.standard_normal((dim, dim))
    return symmetrize(a) * scale
