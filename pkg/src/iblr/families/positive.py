"""Positive-support scalar approximations: gamma, exponential, inverse
Gaussian.

Each uses a two-positive-block (or one-block) coordinate system in which the
Fisher matrix is diagonal and the update's extra term has a closed form.
Parameter gradients flow through the samples by implicit reparameterization:
d/d eta E[f(z)] = E[ (d_eta z) f'(z) ], with d_eta z obtained from the CDF.
The objective enters as b(z) = l(z) + log q(z); the direct parameter score
averages to zero, so differentiating through z alone is unbiased.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincinv

from iblr.blocks import (
    BlockedPoint,
    BlockedTangent,
    ChristoffelContraction,
    PositiveScalar,
)
from iblr.errors import EstimatorUnavailable, ShapeMismatch, SupportError
from iblr.families.base import Family, NaturalGradientEstimate, register_family
from iblr.rng import RngStream, sample_gamma, sample_inverse_gaussian
from iblr.special import exp_e1, log_gamma, log_mills_ratio, tetragamma, trigamma

_LOG_2PI = float(np.log(2.0 * np.pi))
_GAMMA_CDF_FD = 1e-5  # relative step for d z / d shape through the inverse CDF


def _check_estimator(estimator: str):
    if estimator not in ("rep", "implicit-rep"):
        raise EstimatorUnavailable(
            f"scalar positive families only support implicit reparameterization, got {estimator!r}"
        )


def _check_support(z):
    if np.any(np.asarray(z) <= 0):
        raise SupportError("support is the positive half-line")


def _two_positive_blocks(point: BlockedPoint) -> tuple[float, float]:
    if len(point) != 2 or not all(isinstance(c, PositiveScalar) for c, _ in point.blocks):
        raise ShapeMismatch("expected two positive-scalar blocks")
    return float(point.blocks[0][1]), float(point.blocks[1][1])


@register_family
@dataclass(frozen=True)
class GammaApprox(Family):
    """Gamma with blocks lam1 = shape and lam2 = rate / shape."""

    lam1: float
    lam2: float

    kind = "gamma"

    def __post_init__(self):
        if self.lam1 <= 0 or self.lam2 <= 0:
            raise ShapeMismatch("gamma blocks must be positive")

    @property
    def shape(self) -> float:
        return self.lam1

    @property
    def rate(self) -> float:
        return self.lam1 * self.lam2

    def sample(self, rng: RngStream, n: int) -> np.ndarray:
        return sample_gamma(rng, self.shape, self.rate, n)

    def log_density(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        _check_support(z)
        a, b = self.shape, self.rate
        out = a * np.log(b) - log_gamma(a) + (a - 1.0) * np.log(z) - b * z
        return out if out.size > 1 else out.item()

    def blocked_point(self) -> BlockedPoint:
        return BlockedPoint([(PositiveScalar(), self.lam1), (PositiveScalar(), self.lam2)])

    @classmethod
    def from_blocked(cls, point: BlockedPoint, **_meta) -> "GammaApprox":
        return cls(*_two_positive_blocks(point))

    def christoffel_contraction(self) -> ChristoffelContraction:
        def first_block(value, tangent):
            v = float(value)
            gamma111 = (tetragamma(v) + 1.0 / v**2) / (2.0 * (trigamma(v) - 1.0 / v))
            return gamma111 * float(tangent) ** 2

        def second_block(value, tangent):
            return -float(tangent) ** 2 / float(value)

        return ChristoffelContraction([first_block, second_block])

    def _dz_dshape(self, z: np.ndarray) -> np.ndarray:
        """d z / d shape at fixed uniform, via the regularized inverse CDF."""
        from scipy.special import gammainc

        a, b = self.shape, self.rate
        u = gammainc(a, b * z)
        h = _GAMMA_CDF_FD * max(1.0, a)
        zp = gammaincinv(a + h, u) / b
        zm = gammaincinv(a - h, u) / b
        return (zp - zm) / (2.0 * h)

    def natural_gradient(
        self, model, rng: RngStream, n_samples: int, estimator: str = "rep",
        batch=None, samples=None, **_kwargs
    ) -> NaturalGradientEstimate:
        _check_estimator(estimator)
        z = self.sample(rng, n_samples) if samples is None else np.asarray(samples, dtype=float)
        a, b = self.shape, self.rate
        grad_b = model.grad_many(z, batch=batch) + (a - 1.0) / z - b
        dz_da = self._dz_dshape(z)
        dz_db = -z / b
        d_alpha = float(np.mean(dz_da * grad_b))
        d_beta = float(np.mean(dz_db * grad_b))
        # chain rule into the block coordinates (lam1, lam2) = (alpha, beta/alpha)
        d_lam1 = d_alpha + self.lam2 * d_beta
        d_lam2 = self.lam1 * d_beta
        g1 = d_lam1 / (trigamma(self.lam1) - 1.0 / self.lam1)
        g2 = (self.lam2**2 / self.lam1) * d_lam2
        return NaturalGradientEstimate(
            blocks=BlockedTangent([g1, g2]),
            estimator="implicit-rep",
            samples=z.size,
        )

    def legacy_natural_gradient(self, model, rng, n_samples, estimator="rep", batch=None):
        """(ghat_alpha, ghat_beta): expectation-parameter gradients of
        E[l(z) - log z] in the (shape, rate) system, F^-1 times the Euclidean
        gradient there."""
        _check_estimator(estimator)
        z = self.sample(rng, n_samples)
        a, b = self.shape, self.rate
        grad_f = model.grad_many(z, batch=batch) - 1.0 / z
        d_alpha = float(np.mean(self._dz_dshape(z) * grad_f))
        d_beta = float(np.mean((-z / b) * grad_f))
        fim = np.array([[trigamma(a), -1.0 / b], [-1.0 / b, a / b**2]])
        ghat = np.linalg.solve(fim, np.array([d_alpha, d_beta]))
        return float(ghat[0]), float(ghat[1])


@register_family
@dataclass(frozen=True)
class ExponentialApprox(Family):
    """Exponential distribution in its natural (rate) coordinate."""

    lam: float

    kind = "exponential"

    def __post_init__(self):
        if self.lam <= 0:
            raise ShapeMismatch("rate must be positive")

    def sample(self, rng: RngStream, n: int) -> np.ndarray:
        return sample_gamma(rng, 1.0, self.lam, n)

    def log_density(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        _check_support(z)
        out = np.log(self.lam) - self.lam * z
        return out if out.size > 1 else out.item()

    def blocked_point(self) -> BlockedPoint:
        return BlockedPoint([(PositiveScalar(), self.lam)])

    @classmethod
    def from_blocked(cls, point: BlockedPoint, **_meta) -> "ExponentialApprox":
        if len(point) != 1 or not isinstance(point.blocks[0][0], PositiveScalar):
            raise ShapeMismatch("expected one positive-scalar block")
        return cls(float(point.blocks[0][1]))

    def christoffel_contraction(self) -> ChristoffelContraction:
        return ChristoffelContraction([lambda v, g: -float(g) ** 2 / float(v)])

    def natural_gradient(
        self, model, rng: RngStream, n_samples: int, estimator: str = "rep",
        batch=None, samples=None, **_kwargs
    ) -> NaturalGradientEstimate:
        _check_estimator(estimator)
        z = self.sample(rng, n_samples) if samples is None else np.asarray(samples, dtype=float)
        grad_b = model.grad_many(z, batch=batch) - self.lam
        d_lam = float(np.mean((-z / self.lam) * grad_b))
        g1 = self.lam**2 * d_lam
        return NaturalGradientEstimate(
            blocks=BlockedTangent([g1]), estimator="implicit-rep", samples=z.size
        )


@register_family
@dataclass(frozen=True)
class InverseGaussianApprox(Family):
    """Inverse Gaussian with blocks lam1 = beta^2 and lam2 = alpha, i.e.
    mean 1/beta and shape alpha."""

    lam1: float
    lam2: float

    kind = "inverse_gaussian"

    def __post_init__(self):
        if self.lam1 <= 0 or self.lam2 <= 0:
            raise ShapeMismatch("inverse-Gaussian blocks must be positive")

    @property
    def alpha(self) -> float:
        return self.lam2

    @property
    def beta(self) -> float:
        return float(np.sqrt(self.lam1))

    def sample(self, rng: RngStream, n: int) -> np.ndarray:
        return sample_inverse_gaussian(rng, self.alpha, self.beta, n)

    def log_density(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        _check_support(z)
        a, b = self.alpha, self.beta
        out = (
            -0.5 * (np.log(2.0 * np.pi) + 3.0 * np.log(z))
            - 0.5 * z * a * b**2
            - 0.5 * a / z
            + 0.5 * np.log(a)
            + a * b
        )
        return out if out.size > 1 else out.item()

    def blocked_point(self) -> BlockedPoint:
        return BlockedPoint([(PositiveScalar(), self.lam1), (PositiveScalar(), self.lam2)])

    @classmethod
    def from_blocked(cls, point: BlockedPoint, **_meta) -> "InverseGaussianApprox":
        return cls(*_two_positive_blocks(point))

    def christoffel_contraction(self) -> ChristoffelContraction:
        def first_block(value, tangent):
            return -0.75 * float(tangent) ** 2 / float(value)

        def second_block(value, tangent):
            return -float(tangent) ** 2 / float(value)

        return ChristoffelContraction([first_block, second_block])

    def _dz_dparams(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(dz/d alpha, dz/d beta) through the CDF, using the Gaussian Mills
        ratio at -sqrt(alpha/z)(z beta + 1) for the stable branch."""
        a, b = self.alpha, self.beta
        root = np.sqrt(a / z)
        mills = np.exp(log_mills_ratio(-root * (z * b + 1.0)))
        dz_da = z / a - 2.0 * b * z**1.5 * a**-0.5 * mills
        dz_db = -2.0 * z**1.5 * a**0.5 * mills
        return dz_da, dz_db

    def entropy_gradients(self) -> tuple[float, float]:
        """(d/d alpha, d/d beta) of E[-log q], closed forms via exp(x) E1(x)."""
        a, b = self.alpha, self.beta
        e1 = exp_e1(2.0 * a * b)
        return 1.0 / a - 3.0 * b * e1, -3.0 * a * e1

    def natural_gradient(
        self, model, rng: RngStream, n_samples: int, estimator: str = "rep",
        batch=None, samples=None, **_kwargs
    ) -> NaturalGradientEstimate:
        _check_estimator(estimator)
        z = self.sample(rng, n_samples) if samples is None else np.asarray(samples, dtype=float)
        grads = model.grad_many(z, batch=batch)
        dz_da, dz_db = self._dz_dparams(z)
        dh_da, dh_db = self.entropy_gradients()
        # L = E[l] - H, with the entropy differentiated in closed form
        d_alpha = float(np.mean(dz_da * grads)) - dh_da
        d_beta = float(np.mean(dz_db * grads)) - dh_db
        d_lam1 = d_beta / (2.0 * self.beta)
        d_lam2 = d_alpha
        g1 = (4.0 * self.lam1**1.5 / self.lam2) * d_lam1
        g2 = 2.0 * self.lam2**2 * d_lam2
        return NaturalGradientEstimate(
            blocks=BlockedTangent([g1, g2]),
            estimator="implicit-rep",
            samples=z.size,
        )

    def entropy(self) -> float:
        a, b = self.alpha, self.beta
        return 0.5 * (
            -np.log(a) - 3.0 * (np.log(b) + exp_e1(2.0 * a * b)) + 1.0 + _LOG_2PI
        )
