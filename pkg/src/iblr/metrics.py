"""Quantitative evaluation: Monte-Carlo negative ELBO, kernel MMD, and
predictive test log-loss.

Kernel sums are accumulated with exact (fsum) summation so the estimates are
bit-identical under any permutation of either sample set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from iblr.rng import RngStream


@dataclass
class MetricResult:
    name: str
    value: float
    std_error: float
    n_samples: int

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError("standard error must be non-negative")


def neg_elbo_mc(family, model, rng: RngStream, n: int, batch=None) -> MetricResult:
    """(1/n) sum of l(z_i) + log q(z_i), up to the model's additive constant."""
    z = family.sample(rng, n)
    vals = model.loss_many(z, batch=batch) + family.log_density(z)
    vals = np.atleast_1d(vals)
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(n)) if n >= 2 else math.inf
    return MetricResult("neg_elbo", mean, se, n)


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("mnd,mnd->mn", diff, diff)


def median_pairwise_distance(a: np.ndarray, b: np.ndarray) -> float:
    pooled = np.vstack([a, b])
    sq = _pairwise_sq_dists(pooled, pooled)
    tri = sq[np.triu_indices(pooled.shape[0], k=1)]
    return float(np.sqrt(np.median(tri)))


def mmd_rbf(samples_a, samples_b, bandwidth="median") -> MetricResult:
    """Unbiased U-statistic estimate of the squared MMD with the RBF kernel
    k(x, y) = exp(-||x - y||^2 / (2 bw^2))."""
    a = np.atleast_2d(np.asarray(samples_a, dtype=float))
    b = np.atleast_2d(np.asarray(samples_b, dtype=float))
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("both sample sets need at least two points")
    if bandwidth == "median":
        bw = median_pairwise_distance(a, b)
    else:
        bw = float(bandwidth)
    gamma = 0.5 / bw**2
    m, n = a.shape[0], b.shape[0]
    kaa = np.exp(-gamma * _pairwise_sq_dists(a, a))
    kbb = np.exp(-gamma * _pairwise_sq_dists(b, b))
    kab = np.exp(-gamma * _pairwise_sq_dists(a, b))
    off_aa = kaa[~np.eye(m, dtype=bool)]
    off_bb = kbb[~np.eye(n, dtype=bool)]
    term_aa = math.fsum(off_aa.tolist()) / (m * (m - 1))
    term_bb = math.fsum(off_bb.tolist()) / (n * (n - 1))
    term_ab = math.fsum(kab.ravel().tolist()) / (m * n)
    value = term_aa + term_bb - 2.0 * term_ab
    return MetricResult("mmd", value, 0.0, m + n)


def test_log_loss(family, model, x_test, y_test, rng: RngStream, n: int) -> MetricResult:
    """-(1/|test|) sum_i log mean_s p(y_i | x_i, z_s), log-mean-exp over the
    posterior samples for stability."""
    z = family.sample(rng, n)
    logp = model.predictive_log_many(np.atleast_2d(z) if z.ndim == 1 else z, x_test, y_test)
    m = logp.max(axis=0)
    log_mean = m + np.log(np.mean(np.exp(logp - m), axis=0))
    losses = -log_mean
    value = float(losses.mean())
    k = losses.size
    se = float(losses.std(ddof=1) / math.sqrt(k)) if k >= 2 else math.inf
    return MetricResult("test_log_loss", value, se, n)
