"""Full-covariance and diagonal Gaussian approximations.

Both are parameterized by mean and precision.  The mean block's Christoffel
symbols vanish; the precision block's contraction is -G S^-1 G (full) or
-g^2/s coordinate-wise (diagonal), which is what keeps the updated precision
positive definite for any step size.

Natural gradients:
    mean block       ghat = S^-1 E[grad l(z)]
    precision block  Ghat = S - E[hess l(z)]
with the Hessian expectation formed either from model Hessians ("hess") or
from the score-times-gradient identity ("rep"),
    E[hess l] ~ sym( S (z - mu) grad l(z)^T ).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from iblr.blocks import (
    BlockedPoint,
    BlockedTangent,
    ChristoffelContraction,
    PositiveScalar,
    RealVector,
    SPD,
    positive_inverse_contraction,
    spd_contraction,
)
from iblr.errors import EstimatorUnavailable, ShapeMismatch
from iblr.families.base import Family, NaturalGradientEstimate, register_family
from iblr.linalg import SPDMatrix, symmetrize
from iblr.rng import RngStream, sample_std_normal

_LOG_2PI = float(np.log(2.0 * np.pi))


def gauss_hermite_nodes(dim: int, n_nodes: int):
    """Tensor-product Gauss-Hermite rules for standard-normal expectations.

    Returns (points, weights) with points of shape (n_nodes^dim, dim) such
    that E[f(eps)] = sum_j w_j f(points_j) for eps ~ N(0, I).
    """
    x, w = np.polynomial.hermite.hermgauss(n_nodes)
    x = x * np.sqrt(2.0)
    w = w / np.sqrt(np.pi)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    wts = np.ones(pts.shape[0])
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    for g in wgrids:
        wts = wts * g.ravel()
    return pts, wts


def _hessian_mean_rep(s_data, diffs, grads, weights=None):
    """Weighted mean of sym(S (z - mu) grad^T)."""
    su = diffs @ s_data.T
    outer = np.einsum("ni,nj->nij", su, grads)
    if weights is None:
        m = outer.mean(axis=0)
    else:
        m = np.einsum("n,nij->ij", weights, outer)
    return symmetrize(m)


@register_family
@dataclass(frozen=True)
class GaussianFull(Family):
    """N(mu, S^-1) with a full precision matrix."""

    mu: np.ndarray
    prec: SPDMatrix

    kind = "gaussian_full"

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        if self.mu.shape != (self.prec.dim,):
            raise ShapeMismatch("mean and precision dimensions differ")

    @property
    def dim(self) -> int:
        return self.prec.dim

    def cov_chol(self) -> np.ndarray:
        """Lower-triangular factor of the covariance, from the precision's."""
        ident = np.eye(self.dim)
        return solve_triangular(self.prec.chol, ident, lower=True, trans="T")

    def sample(self, rng: RngStream, n: int) -> np.ndarray:
        eps = sample_std_normal(rng, n, self.dim)
        return self.mu + eps @ self.cov_chol().T

    def log_density(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        quad = self.prec.quad(z - self.mu)
        out = 0.5 * self.prec.logdet() - 0.5 * self.dim * _LOG_2PI - 0.5 * quad
        return out if out.size > 1 else float(out[0])

    def blocked_point(self) -> BlockedPoint:
        return BlockedPoint([(RealVector(self.dim), self.mu.copy()), (SPD(self.dim), self.prec.copy())])

    @classmethod
    def from_blocked(cls, point: BlockedPoint, **_meta) -> "GaussianFull":
        (c1, mu), (c2, prec) = point.blocks
        if not isinstance(c1, RealVector) or not isinstance(c2, SPD):
            raise ShapeMismatch("expected [real_vector, spd] blocks")
        return cls(np.asarray(mu, dtype=float), prec)

    def christoffel_contraction(self) -> ChristoffelContraction:
        return ChristoffelContraction([None, spd_contraction])

    def _expectations(self, model, rng, n_samples, estimator, mode, gh_nodes, batch, samples):
        """(E[grad l], E[hess l], n_used)."""
        if mode == "exact@mean":
            h = model.hess(self.mu, batch=batch)
            if h is None:
                raise EstimatorUnavailable("exact@mean mode needs a model Hessian")
            return model.grad(self.mu, batch=batch), symmetrize(h), 1
        if mode == "gh":
            eps, w = gauss_hermite_nodes(self.dim, gh_nodes)
            z = self.mu + eps @ self.cov_chol().T
            grads = model.grad_many(z, batch=batch)
            grad_mean = w @ grads
            if estimator == "hess":
                hs = model.hess_many(z, batch=batch)
                if hs is None:
                    raise EstimatorUnavailable("hess estimator needs a model Hessian")
                hess_mean = symmetrize(np.einsum("n,nij->ij", w, hs))
            else:
                hess_mean = _hessian_mean_rep(self.prec.data, z - self.mu, grads, weights=w)
            return grad_mean, hess_mean, len(w)
        z = self.sample(rng, n_samples) if samples is None else np.asarray(samples, dtype=float)
        grads = model.grad_many(z, batch=batch)
        grad_mean = grads.mean(axis=0)
        if estimator == "hess":
            hs = model.hess_many(z, batch=batch)
            if hs is None:
                raise EstimatorUnavailable("hess estimator needs a model Hessian")
            hess_mean = symmetrize(hs.mean(axis=0))
        else:
            hess_mean = _hessian_mean_rep(self.prec.data, z - self.mu, grads)
        return grad_mean, hess_mean, z.shape[0]

    def natural_gradient(
        self,
        model,
        rng: RngStream,
        n_samples: int,
        estimator: str = "rep",
        mode: str = "mc",
        gh_nodes: int = 20,
        batch=None,
        samples=None,
    ) -> NaturalGradientEstimate:
        if estimator not in ("rep", "hess"):
            raise EstimatorUnavailable(f"unknown Gaussian estimator {estimator!r}")
        grad_mean, hess_mean, n_used = self._expectations(
            model, rng, n_samples, estimator, mode, gh_nodes, batch, samples
        )
        g_mu = self.prec.solve(grad_mean)
        g_hat = symmetrize(self.prec.data - hess_mean)
        return NaturalGradientEstimate(
            blocks=BlockedTangent([g_mu, g_hat]),
            estimator=estimator,
            samples=n_used,
            aux={"G_hat": g_hat, "grad_mean": grad_mean, "hess_mean": hess_mean},
        )

    def legacy_natural_gradient(self, model, rng, n_samples, estimator="rep", mode="mc",
                                gh_nodes: int = 20, batch=None):
        """(E[grad l], E[hess l]) for the first-order rule in natural form."""
        grad_mean, hess_mean, _ = self._expectations(
            model, rng, n_samples, estimator, mode, gh_nodes, batch, None
        )
        return grad_mean, hess_mean


@register_family
@dataclass(frozen=True)
class GaussianDiag(Family):
    """Mean-field Gaussian with coordinate-wise precisions."""

    mu: np.ndarray
    s: np.ndarray

    kind = "gaussian_diag"

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "s", np.asarray(self.s, dtype=float))
        if self.mu.shape != self.s.shape:
            raise ShapeMismatch("mean and precision vectors differ in length")
        if np.any(self.s <= 0):
            raise ShapeMismatch("precisions must be positive")

    @property
    def dim(self) -> int:
        return self.mu.size

    def sample(self, rng: RngStream, n: int) -> np.ndarray:
        eps = sample_std_normal(rng, n, self.dim)
        return self.mu + eps / np.sqrt(self.s)

    def log_density(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        quad = np.sum(self.s * (z - self.mu) ** 2, axis=1)
        out = 0.5 * np.sum(np.log(self.s)) - 0.5 * self.dim * _LOG_2PI - 0.5 * quad
        return out if out.size > 1 else float(out[0])

    def blocked_point(self) -> BlockedPoint:
        blocks = [(RealVector(self.dim), self.mu.copy())]
        blocks += [(PositiveScalar(), float(v)) for v in self.s]
        return BlockedPoint(blocks)

    @classmethod
    def from_blocked(cls, point: BlockedPoint, **_meta) -> "GaussianDiag":
        (c1, mu) = point.blocks[0]
        if not isinstance(c1, RealVector):
            raise ShapeMismatch("expected the mean vector first")
        s = np.array([float(v) for _, v in point.blocks[1:]])
        return cls(np.asarray(mu, dtype=float), s)

    def christoffel_contraction(self) -> ChristoffelContraction:
        fns = [None] + [positive_inverse_contraction] * self.dim
        return ChristoffelContraction(fns)

    def _diag_hess_mean(self, model, z, grads, estimator, batch, weights=None):
        if estimator == "hess":
            hs = model.hess_many(z, batch=batch)
            if hs is None:
                raise EstimatorUnavailable("hess estimator needs a model Hessian")
            diag = np.einsum("nii->ni", hs)
        else:
            diag = self.s * (z - self.mu) * grads
        if weights is None:
            return diag.mean(axis=0)
        return weights @ diag

    def natural_gradient(
        self,
        model,
        rng: RngStream,
        n_samples: int,
        estimator: str = "rep",
        mode: str = "mc",
        gh_nodes: int = 20,
        batch=None,
        samples=None,
    ) -> NaturalGradientEstimate:
        if estimator not in ("rep", "hess"):
            raise EstimatorUnavailable(f"unknown Gaussian estimator {estimator!r}")
        if mode == "exact@mean":
            h = model.hess(self.mu, batch=batch)
            if h is None:
                raise EstimatorUnavailable("exact@mean mode needs a model Hessian")
            grad_mean, hess_diag, n_used = model.grad(self.mu, batch=batch), np.diag(h), 1
        elif mode == "gh":
            eps, w = gauss_hermite_nodes(self.dim, gh_nodes)
            z = self.mu + eps / np.sqrt(self.s)
            grads = model.grad_many(z, batch=batch)
            grad_mean = w @ grads
            hess_diag = self._diag_hess_mean(model, z, grads, estimator, batch, weights=w)
            n_used = len(w)
        else:
            z = self.sample(rng, n_samples) if samples is None else np.asarray(samples, dtype=float)
            grads = model.grad_many(z, batch=batch)
            grad_mean = grads.mean(axis=0)
            hess_diag = self._diag_hess_mean(model, z, grads, estimator, batch)
            n_used = z.shape[0]
        g_mu = grad_mean / self.s
        g_s = self.s - hess_diag
        blocks = BlockedTangent([g_mu] + [float(v) for v in g_s])
        return NaturalGradientEstimate(
            blocks=blocks, estimator=estimator, samples=n_used, aux={"g_s": g_s}
        )
