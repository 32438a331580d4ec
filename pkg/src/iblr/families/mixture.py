"""Finite mixture of Gaussians and the skew-Gaussian built on a half-normal
mixing variable.

Both are handled through the joint distribution over (component, z): the
component blocks keep the single-Gaussian geometry, so the precision update
reuses the -G S^-1 G contraction, while the mixing weights (when learned)
are unconstrained and take a plain first-order step.

Gradients use importance weighting: with delta_c(z) the ratio of component c's
density to the mixture density,

    weight block   E[(delta_c - delta_K) b(z)]
    mean block     S_c^-1 E[delta_c grad_z b(z)]
    precision      Ghat_c = -E[delta_c hess_z b(z)]      ("hess")
                   Ghat_c = -E[delta_c (sym(S_c (z-mu_c) grad_l^T) + hess_z log q)]  ("rep")

where b(z) = l(z) + log q(z) and the mixture's own score and Hessian are in
closed form (no nested differentiation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from iblr.blocks import (
    BlockedPoint,
    BlockedTangent,
    ChristoffelContraction,
    RealVector,
    SPD,
    spd_contraction,
)
from iblr.errors import EstimatorUnavailable, ShapeMismatch
from iblr.families.base import Family, NaturalGradientEstimate, register_family
from iblr.linalg import SPDMatrix, symmetrize
from iblr.rng import RngStream, sample_categorical, sample_std_normal

_LOG_2PI = float(np.log(2.0 * np.pi))
_SKEW_C = float(np.sqrt(2.0 / np.pi))  # E|w| for w ~ N(0,1)
_SKEW_GH_NODES = 64


def _logsumexp(a, axis=0):
    m = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


class _GaussianStack:
    """Vectorized density machinery for K Gaussians sharing a batch of z."""

    def __init__(self, mus: np.ndarray, precs: list[SPDMatrix]):
        self.mus = np.asarray(mus, dtype=float)
        self.precs = precs
        self.k, self.d = self.mus.shape
        self.s_data = np.stack([p.data for p in precs])
        self.logdets = np.array([p.logdet() for p in precs])

    def log_components(self, z: np.ndarray) -> np.ndarray:
        """(K, n) matrix of log N(z | mu_c, S_c^-1)."""
        diffs = z[None, :, :] - self.mus[:, None, :]
        su = np.einsum("cij,cnj->cni", self.s_data, diffs)
        quad = np.einsum("cni,cni->cn", diffs, su)
        return 0.5 * self.logdets[:, None] - 0.5 * self.d * _LOG_2PI - 0.5 * quad

    def score_terms(self, z: np.ndarray):
        """Per-component score u_c = -S_c (z - mu_c), shape (K, n, d)."""
        diffs = z[None, :, :] - self.mus[:, None, :]
        return -np.einsum("cij,cnj->cni", self.s_data, diffs), diffs

    def mixture_score_hess(self, log_pi: np.ndarray, z: np.ndarray):
        """(logq, delta, grad_logq, hess_logq) for the weighted mixture.

        delta has shape (K, n): component density over mixture density.
        """
        logn = self.log_components(z)
        logq = _logsumexp(log_pi[:, None] + logn, axis=0)
        delta = np.exp(logn - logq[None, :])
        resp = np.exp(log_pi[:, None] + logn - logq[None, :])
        u, _ = self.score_terms(z)
        grad = np.einsum("cn,cni->ni", resp, u)
        outer = np.einsum("cni,cnj->cnij", u, u)
        hess = (
            np.einsum("cn,cnij->nij", resp, outer)
            - np.einsum("cn,cij->nij", resp, self.s_data)
            - np.einsum("ni,nj->nij", grad, grad)
        )
        return logq, delta, grad, hess


def _sample_components(mus, precs, idx, eps):
    z = np.empty_like(eps)
    for c in range(len(precs)):
        mask = idx == c
        if not np.any(mask):
            continue
        cov_chol = solve_triangular(precs[c].chol, np.eye(eps.shape[1]), lower=True, trans="T")
        z[mask] = mus[c] + eps[mask] @ cov_chol.T
    return z


@register_family
@dataclass(frozen=True)
class MixtureOfGaussians(Family):
    """sum_c pi_c N(mu_c, S_c^-1) with weights in log-ratio coordinates
    lam_w[c] = log(pi_c / pi_K)."""

    lam_w: np.ndarray
    mus: np.ndarray
    precs: tuple
    weights_frozen: bool = True

    kind = "mog"

    def __post_init__(self):
        object.__setattr__(self, "lam_w", np.asarray(self.lam_w, dtype=float))
        object.__setattr__(self, "mus", np.asarray(self.mus, dtype=float))
        object.__setattr__(self, "precs", tuple(self.precs))
        if self.lam_w.shape != (self.n_components - 1,):
            raise ShapeMismatch("weight coordinates must have K-1 entries")
        for p in self.precs:
            if p.dim != self.dim:
                raise ShapeMismatch("component dimensions differ")

    @property
    def n_components(self) -> int:
        return self.mus.shape[0]

    @property
    def dim(self) -> int:
        return self.mus.shape[1]

    def log_weights(self) -> np.ndarray:
        logits = np.concatenate([self.lam_w, [0.0]])
        return logits - _logsumexp(logits, axis=0)

    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights())

    def _stack(self) -> _GaussianStack:
        return _GaussianStack(self.mus, list(self.precs))

    def sample(self, rng: RngStream, n: int) -> np.ndarray:
        idx = sample_categorical(rng, self.weights(), n)
        eps = sample_std_normal(rng, n, self.dim)
        return _sample_components(self.mus, list(self.precs), idx, eps)

    def log_density(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        logq = _logsumexp(self.log_weights()[:, None] + self._stack().log_components(z), axis=0)
        return logq if logq.size > 1 else float(logq[0])

    def blocked_point(self) -> BlockedPoint:
        blocks = [(RealVector(max(self.n_components - 1, 1)), self._weight_block())]
        for c in range(self.n_components):
            blocks.append((RealVector(self.dim), self.mus[c].copy()))
            blocks.append((SPD(self.dim), self.precs[c].copy()))
        return BlockedPoint(blocks)

    def _weight_block(self) -> np.ndarray:
        if self.n_components == 1:
            return np.zeros(1)  # placeholder block for a single component
        return self.lam_w.copy()

    @classmethod
    def from_blocked(cls, point: BlockedPoint, weights_frozen: bool = True, **_meta):
        if (len(point) - 1) % 2 != 0:
            raise ShapeMismatch("expected weight block plus (mean, precision) pairs")
        k = (len(point) - 1) // 2
        lam_w = np.asarray(point.blocks[0][1], dtype=float)
        if k == 1:
            lam_w = np.zeros(0)
        mus = np.stack([np.asarray(point.blocks[1 + 2 * c][1], dtype=float) for c in range(k)])
        precs = tuple(point.blocks[2 + 2 * c][1] for c in range(k))
        return cls(lam_w, mus, precs, weights_frozen=weights_frozen)

    def json_meta(self) -> dict:
        return {"weights_frozen": bool(self.weights_frozen)}

    def christoffel_contraction(self) -> ChristoffelContraction:
        fns = [None]
        for _ in range(self.n_components):
            fns += [None, spd_contraction]
        return ChristoffelContraction(fns)

    def natural_gradient(
        self, model, rng: RngStream, n_samples: int, estimator: str = "rep",
        batch=None, samples=None, **_kwargs
    ) -> NaturalGradientEstimate:
        if estimator in ("rep", "importance-rep"):
            use_hess_model = False
        elif estimator in ("hess", "importance-hess"):
            use_hess_model = True
        else:
            raise EstimatorUnavailable(f"unknown mixture estimator {estimator!r}")
        z = self.sample(rng, n_samples) if samples is None else np.atleast_2d(np.asarray(samples, dtype=float))
        n = z.shape[0]
        stack = self._stack()
        logq, delta, mix_grad, mix_hess = stack.mixture_score_hess(self.log_weights(), z)
        target_grads = model.grad_many(z, batch=batch)
        grad_b = target_grads + mix_grad

        if self.weights_frozen or self.n_components == 1:
            g_w = np.zeros(max(self.n_components - 1, 1))
        else:
            b_vals = model.loss_many(z, batch=batch) + logq
            g_w = np.array([
                float(np.mean((delta[c] - delta[-1]) * b_vals))
                for c in range(self.n_components - 1)
            ])

        if use_hess_model:
            target_hess = model.hess_many(z, batch=batch)
            if target_hess is None:
                raise EstimatorUnavailable("hess estimator needs a model Hessian")
            hess_b = target_hess + mix_hess
            g_hat_terms = -np.einsum("cn,nij->cij", delta, hess_b) / n
        else:
            _, diffs = stack.score_terms(z)
            su = -_np_neg(stack, diffs)
            rep_outer = np.einsum("cni,nj->cnij", su, target_grads)
            rep_sym = 0.5 * (rep_outer + np.swapaxes(rep_outer, 2, 3))
            g_hat_terms = -(
                np.einsum("cn,cnij->cij", delta, rep_sym)
                + np.einsum("cn,nij->cij", delta, mix_hess)
            ) / n

        values = [g_w]
        for c in range(self.n_components):
            g_mu_c = self.precs[c].solve(np.einsum("n,ni->i", delta[c], grad_b) / n)
            values.append(g_mu_c)
            values.append(symmetrize(g_hat_terms[c]))
        return NaturalGradientEstimate(
            blocks=BlockedTangent(values), estimator=estimator, samples=n
        )


def _np_neg(stack: _GaussianStack, diffs: np.ndarray) -> np.ndarray:
    """-S_c (z - mu_c) stacked, i.e. the score terms; kept separate so the
    rep estimator reads as S_c (z - mu_c) grad^T."""
    return -np.einsum("cij,cnj->cni", stack.s_data, diffs)


@register_family
@dataclass(frozen=True)
class SkewGaussian(Family):
    """z | w ~ N(mu + |w| skew, S^-1) with w standard normal.

    The location block stacks [mu; skew] (2d unconstrained entries); the
    shared precision keeps the SPD geometry.  The marginal density is
    evaluated by 64-node Gauss-Hermite quadrature over w, which turns the
    marginal into a fixed Gaussian mixture and gives its score and Hessian
    in closed form.
    """

    lam1: np.ndarray
    prec: SPDMatrix

    kind = "skew_gaussian"

    def __post_init__(self):
        object.__setattr__(self, "lam1", np.asarray(self.lam1, dtype=float))
        if self.lam1.shape != (2 * self.prec.dim,):
            raise ShapeMismatch("location block must stack [mu; skew]")

    @property
    def dim(self) -> int:
        return self.prec.dim

    @property
    def mu(self) -> np.ndarray:
        return self.lam1[: self.dim]

    @property
    def skew(self) -> np.ndarray:
        return self.lam1[self.dim :]

    def _gh_stack(self) -> tuple[np.ndarray, _GaussianStack]:
        x, w = np.polynomial.hermite.hermgauss(_SKEW_GH_NODES)
        nodes = np.abs(x * np.sqrt(2.0))
        log_w = np.log(w / np.sqrt(np.pi))
        mus = self.mu[None, :] + nodes[:, None] * self.skew[None, :]
        stack = _GaussianStack(mus, [self.prec] * _SKEW_GH_NODES)
        return log_w, stack

    def sample_with_mixing(self, rng: RngStream, n: int):
        w = sample_std_normal(rng, n)
        eps = sample_std_normal(rng, n, self.dim)
        cov_chol = solve_triangular(self.prec.chol, np.eye(self.dim), lower=True, trans="T")
        z = self.mu + np.abs(w)[:, None] * self.skew + eps @ cov_chol.T
        return z, np.abs(w)

    def sample(self, rng: RngStream, n: int) -> np.ndarray:
        return self.sample_with_mixing(rng, n)[0]

    def log_density(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        log_w, stack = self._gh_stack()
        logq = _logsumexp(log_w[:, None] + stack.log_components(z), axis=0)
        return logq if logq.size > 1 else float(logq[0])

    def blocked_point(self) -> BlockedPoint:
        return BlockedPoint(
            [(RealVector(2 * self.dim), self.lam1.copy()), (SPD(self.dim), self.prec.copy())]
        )

    @classmethod
    def from_blocked(cls, point: BlockedPoint, **_meta) -> "SkewGaussian":
        (c1, lam1), (c2, prec) = point.blocks
        if not isinstance(c1, RealVector) or not isinstance(c2, SPD):
            raise ShapeMismatch("expected [real_vector(2d), spd(d)] blocks")
        return cls(np.asarray(lam1, dtype=float), prec)

    def christoffel_contraction(self) -> ChristoffelContraction:
        return ChristoffelContraction([None, spd_contraction])

    def natural_gradient(
        self, model, rng: RngStream, n_samples: int, estimator: str = "rep",
        batch=None, samples=None, **_kwargs
    ) -> NaturalGradientEstimate:
        if estimator not in ("rep", "hess"):
            raise EstimatorUnavailable(f"unknown skew-Gaussian estimator {estimator!r}")
        if samples is None:
            z, absw = self.sample_with_mixing(rng, n_samples)
        else:
            z, absw = samples
            z = np.atleast_2d(np.asarray(z, dtype=float))
            absw = np.asarray(absw, dtype=float)
        n = z.shape[0]
        log_w, stack = self._gh_stack()
        logq, _, mix_grad, mix_hess = stack.mixture_score_hess(log_w, z)
        grad_b = model.grad_many(z, batch=batch) + mix_grad

        d_mu = grad_b.mean(axis=0)
        d_skew = np.einsum("n,ni->i", absw, grad_b) / n
        sigma = self.prec.inverse()
        denom = 1.0 - _SKEW_C**2
        g_top = sigma @ (d_mu - _SKEW_C * d_skew) / denom
        g_bot = sigma @ (d_skew - _SKEW_C * d_mu) / denom

        if estimator == "hess":
            target_hess = model.hess_many(z, batch=batch)
            if target_hess is None:
                raise EstimatorUnavailable("hess estimator needs a model Hessian")
            g_hat = -symmetrize((target_hess + mix_hess).mean(axis=0))
        else:
            centered = z - self.mu - absw[:, None] * self.skew
            su = centered @ self.prec.data.T
            outer = np.einsum("ni,nj->nij", su, grad_b)
            g_hat = -symmetrize(outer.mean(axis=0))
        return NaturalGradientEstimate(
            blocks=BlockedTangent([np.concatenate([g_top, g_bot]), g_hat]),
            estimator=estimator,
            samples=n,
        )
