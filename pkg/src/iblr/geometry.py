"""Fisher-geometry oracles: finite-difference and Monte-Carlo instruments.

These routines certify the closed-form Fisher matrices and Christoffel
contractions used by the update rule.  Everything works on a flattened
coordinate vector with named block slices, so the same machinery serves the
two-parameter scalar families and the univariate Gaussian in both its
coordinate systems.

Christoffel conventions: the first kind is Gamma_{d,ab}; raising with the
inverse block Fisher matrix gives Gamma^c_ab.  For block-natural coordinate
systems the first kind equals half the third derivative of the log-partition
function within a block.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad

from iblr.errors import StepTooLarge
from iblr.linalg import SPDMatrix, matrix_exponential, sym_sqrt, symmetrize
from iblr.rng import RngStream, sample_gamma, sample_inverse_gaussian, sample_std_normal
from iblr.special import log_gamma, tetragamma, trigamma

FD_H2_SCALE = 1e-4  # second-derivative stencils
FD_H3_SCALE = 1e-3  # third-derivative stencils

_W_CENTER = np.array([0.0, 0.0, 1.0, 0.0, 0.0])
_W1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0  # / h
_W2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0  # / h^2
_W3 = np.array([-1.0, 2.0, 0.0, -2.0, 1.0]) / 2.0  # / h^3


@dataclass
class ParamOracle:
    """A distribution family viewed through one concrete coordinate system."""

    name: str
    n_coords: int
    block_slices: Sequence[slice]
    logq: Callable[[np.ndarray, np.ndarray], np.ndarray]  # (coords, z) -> per-z values
    sample: Callable[[np.ndarray, RngStream, int], np.ndarray]
    feasible: Callable[[np.ndarray], bool]
    support: tuple[float, float]
    log_partition: Callable[[np.ndarray], float] | None = None  # BCN systems only
    fim: Callable[[np.ndarray], np.ndarray] | None = None  # analytic display
    christoffel_first: Callable[[np.ndarray], np.ndarray] | None = None  # full tensor


def _stencil_weights(orders: tuple[int, ...], hs: np.ndarray) -> np.ndarray:
    """Tensor-product FD weights over the 5^p grid for the given per-axis
    derivative orders."""
    table = {0: _W_CENTER, 1: _W1, 2: _W2, 3: _W3}
    w = np.array([1.0])
    for order, h in zip(orders, hs):
        axis = table[order] / h**order
        w = np.multiply.outer(w, axis)
    return w


def _grid_offsets(p: int):
    return list(itertools.product(range(-2, 3), repeat=p))


def fim_fd(log_partition, point_coords, block: slice | None = None, h_scale: float = FD_H2_SCALE,
           feasible=None) -> np.ndarray:
    """Fisher block by central second differences of the log-partition.

    Valid within a block of a block-natural coordinate system, where the
    Fisher matrix equals the block Hessian of the log-partition.  ``block``
    selects the coordinates; None differentiates over all of them.
    """
    x = np.asarray(point_coords, dtype=float)
    idx = np.arange(x.size)[block] if block is not None else np.arange(x.size)
    hs = h_scale * np.maximum(1.0, np.abs(x[idx]))
    if feasible is not None:
        for i, h in zip(idx, hs):
            for sgn in (-2.0, 2.0):
                probe = x.copy()
                probe[i] += sgn * h
                if not feasible(probe):
                    raise StepTooLarge(f"coordinate {i} perturbation leaves the feasible set")
    k = idx.size
    out = np.zeros((k, k))
    f0 = log_partition(x)
    for a in range(k):
        xp, xm = x.copy(), x.copy()
        xp[idx[a]] += hs[a]
        xm[idx[a]] -= hs[a]
        out[a, a] = (log_partition(xp) - 2.0 * f0 + log_partition(xm)) / hs[a] ** 2
        for b in range(a + 1, k):
            vals = 0.0
            for sa, sb in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                xx = x.copy()
                xx[idx[a]] += sa * hs[a]
                xx[idx[b]] += sb * hs[b]
                vals += sa * sb * log_partition(xx)
            out[a, b] = out[b, a] = vals / (4.0 * hs[a] * hs[b])
    return 0.5 * (out + out.T)


def fim_quadrature(oracle: ParamOracle, coords, h_scale: float = FD_H2_SCALE) -> np.ndarray:
    """Full-coordinate Fisher matrix as the quadrature of the score outer
    product, E[ (d_a log q)(d_b log q) ].  Independent of any log-partition
    identity, so it exposes cross-block entries honestly."""
    x = np.asarray(coords, dtype=float)
    p = x.size
    hs = h_scale * np.maximum(1.0, np.abs(x))
    lo, hi = oracle.support

    def score(a: int, z: np.ndarray) -> np.ndarray:
        xp, xm = x.copy(), x.copy()
        xp[a] += hs[a]
        xm[a] -= hs[a]
        return (oracle.logq(xp, z) - oracle.logq(xm, z)) / (2.0 * hs[a])

    out = np.zeros((p, p))
    for a in range(p):
        for b in range(a, p):
            def integrand(z, a=a, b=b):
                zz = np.atleast_1d(np.asarray(z, dtype=float))
                val = np.exp(oracle.logq(x, zz)) * score(a, zz) * score(b, zz)
                return float(val[0])

            val, _ = quad(integrand, lo, hi, limit=300)
            out[a, b] = out[b, a] = val
    return out


def christoffel_mc(
    oracle: ParamOracle,
    coords,
    sample_count: int,
    rng: RngStream,
    h_scale: float = FD_H3_SCALE,
    chunk: int = 100_000,
) -> tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo first-kind Christoffel symbols with standard errors.

    Evaluates, per sample z ~ q, the integrand

        1/2 [ dab(lq) dd(lq) - dbd(lq) da(lq) - dad(lq) db(lq) - dabd(lq) ]

    with all parameter derivatives taken by finite differences of log q on a
    5-point tensor stencil.  Returns (gamma[d,a,b], se[d,a,b]) over the full
    coordinate set; slice with the oracle's block layout for per-block views.
    """
    x = np.asarray(coords, dtype=float)
    p = x.size
    hs = h_scale * np.maximum(1.0, np.abs(x))
    offsets = _grid_offsets(p)

    needed: dict[tuple[int, ...], np.ndarray] = {}

    def weights_for(orders: tuple[int, ...]) -> np.ndarray:
        if orders not in needed:
            needed[orders] = _stencil_weights(orders, hs).ravel()
        return needed[orders]

    def orders_of(*axes: int) -> tuple[int, ...]:
        o = [0] * p
        for a in axes:
            o[a] += 1
        return tuple(o)

    sums = np.zeros((p, p, p))
    sumsq = np.zeros((p, p, p))
    done = 0
    while done < sample_count:
        m = min(chunk, sample_count - done)
        z = oracle.sample(x, rng, m)
        grid = np.empty((len(offsets), m))
        for k, off in enumerate(offsets):
            coords_k = x + hs * np.asarray(off, dtype=float)
            grid[k] = oracle.logq(coords_k, z)
        d1 = [weights_for(orders_of(a)) @ grid for a in range(p)]
        d2 = [[weights_for(orders_of(a, b)) @ grid for b in range(p)] for a in range(p)]
        d3 = [[[weights_for(orders_of(a, b, d)) @ grid for d in range(p)] for b in range(p)]
              for a in range(p)]
        for d in range(p):
            for a in range(p):
                for b in range(p):
                    vals = 0.5 * (d2[a][b] * d1[d] - d2[b][d] * d1[a] - d2[a][d] * d1[b] - d3[a][b][d])
                    sums[d, a, b] += vals.sum()
                    sumsq[d, a, b] += (vals**2).sum()
        done += m
    mean = sums / sample_count
    var = np.maximum(sumsq / sample_count - mean**2, 0.0)
    se = np.sqrt(var / sample_count)
    return mean, se


def christoffel_a3(oracle: ParamOracle, coords, h_scale: float = FD_H3_SCALE) -> np.ndarray:
    """First-kind block Christoffels as half the third derivative of the
    log-partition, analytic when the oracle carries the closed form and a
    5-point stencil otherwise.  Entries outside the blocks are zero."""
    x = np.asarray(coords, dtype=float)
    if oracle.christoffel_first is not None:
        return oracle.christoffel_first(x)
    if oracle.log_partition is None:
        raise ValueError("third-derivative route requires a block-natural system")
    p = x.size
    hs = h_scale * np.maximum(1.0, np.abs(x))
    out = np.zeros((p, p, p))
    grid_vals = {}
    for off in _grid_offsets(p):
        grid_vals[off] = oracle.log_partition(x + hs * np.asarray(off, dtype=float))
    flat = np.array([grid_vals[off] for off in _grid_offsets(p)])
    for sl in oracle.block_slices:
        axes = range(sl.start, sl.stop)
        for d in axes:
            for a in axes:
                for b in axes:
                    o = [0] * p
                    for ax in (d, a, b):
                        o[ax] += 1
                    w = _stencil_weights(tuple(o), hs).ravel()
                    out[d, a, b] = 0.5 * float(w @ flat)
    return out


def christoffel_fd_of_fim(fim_fn, coords, h_scale: float = 1e-5) -> np.ndarray:
    """First-kind symbols from first differences of a Fisher-matrix function:
    Gamma_{d,ab} = 1/2 [ da F_bd + db F_ad - dd F_ab ]."""
    x = np.asarray(coords, dtype=float)
    p = x.size
    hs = h_scale * np.maximum(1.0, np.abs(x))
    grads = np.zeros((p, p, p))  # grads[c] = dF/dx_c
    for c in range(p):
        xp, xm = x.copy(), x.copy()
        xp[c] += hs[c]
        xm[c] -= hs[c]
        grads[c] = (fim_fn(xp) - fim_fn(xm)) / (2.0 * hs[c])
    out = np.zeros((p, p, p))
    for d in range(p):
        for a in range(p):
            for b in range(p):
                out[d, a, b] = 0.5 * (grads[a][b, d] + grads[b][a, d] - grads[d][a, b])
    return out


def raise_first_kind(gamma_first: np.ndarray, fim: np.ndarray) -> np.ndarray:
    """Gamma^c_ab = F^{cd} Gamma_{d,ab} over the same coordinate set."""
    p = fim.shape[0]
    flat = gamma_first.reshape(p, p * p)
    return np.linalg.solve(fim, flat).reshape(p, p, p)


def gaussian_geodesic_exact(s, g_hat: np.ndarray, t: float) -> SPDMatrix:
    """Exact SPD geodesic through S along the descent direction -ghat:
    U Exp(-t U^-1 ghat U^-1) U with U the symmetric square root of S."""
    data = s.data if isinstance(s, SPDMatrix) else np.asarray(s, dtype=float)
    u = sym_sqrt(data)
    inner = np.linalg.solve(u, np.linalg.solve(u, symmetrize(np.asarray(g_hat, float))).T).T
    return SPDMatrix(symmetrize(u @ matrix_exponential(-t * symmetrize(inner)) @ u))


def covariance_geodesic_exact(sigma, g_hat: np.ndarray, t: float) -> SPDMatrix:
    """The same geodesic in covariance coordinates."""
    return gaussian_geodesic_exact(sigma, g_hat, t)


def theorem_half_form(s: SPDMatrix, g_hat: np.ndarray, t: float) -> np.ndarray:
    """1/2 (S + U^T U) with U = L^T - t L^-1 ghat, algebraically equal to the
    second-order precision update S - t ghat + (t^2/2) ghat S^-1 ghat."""
    low = s.chol
    u = low.T - t * np.linalg.solve(low, symmetrize(np.asarray(g_hat, float)))
    return 0.5 * (s.data + u.T @ u)


def song_step_univariate(point, nat_grad, t: float, param_kind: str):
    """Full-Christoffel second-order update for the univariate Gaussian in
    (mean, sdev) or (mean, variance) coordinates, cross-block terms included.

    Returns ((mu, scale), feasible).  The cross terms are what break the
    positivity of the scale coordinate; the block-wise rule drops them.
    """
    mu, scale = float(point[0]), float(point[1])
    g1, g2 = float(nat_grad[0]), float(nat_grad[1])
    tt = 0.5 * t * t
    if param_kind == "sigma":
        mu_new = mu - t * g1 + tt * (2.0 * g1 * g2 / scale)
        scale_new = scale - t * g2 + tt * ((2.0 * g2 * g2 - g1 * g1) / (2.0 * scale))
    elif param_kind == "variance":
        mu_new = mu - t * g1 + tt * (g1 * g2 / scale)
        scale_new = scale - t * g2 + tt * (g2 * g2 / scale - g1 * g1)
    else:
        raise ValueError(f"unknown univariate parameterization {param_kind!r}")
    return (mu_new, scale_new), scale_new > 0.0


def blockwise_step_univariate(point, nat_grad, t: float, param_kind: str):
    """Block-diagonal counterpart of :func:`song_step_univariate`: the mean
    block's symbols vanish and the scale block keeps only its own -1/scale."""
    mu, scale = float(point[0]), float(point[1])
    g1, g2 = float(nat_grad[0]), float(nat_grad[1])
    del param_kind  # -1/sigma and -1/v act identically on their own block
    mu_new = mu - t * g1
    scale_new = scale - t * g2 + 0.5 * t * t * (g2 * g2 / scale)
    return (mu_new, scale_new), scale_new > 0.0


# ----------------------------------------------------------------------------
# Concrete coordinate-system oracles


def _gamma_log_partition(x) -> float:
    l1, l2 = float(x[0]), float(x[1])
    return float(log_gamma(l1) - l1 * (np.log(l1) + np.log(l2)))


def _gamma_logq(x, z):
    l1, l2 = float(x[0]), float(x[1])
    return -np.log(z) + l1 * np.log(z) - z * l1 * l2 - _gamma_log_partition(x)


def gamma_oracle() -> ParamOracle:
    def fim(x):
        l1, l2 = float(x[0]), float(x[1])
        return np.diag([trigamma(l1) - 1.0 / l1, l1 / l2**2])

    def chris(x):
        l1, l2 = float(x[0]), float(x[1])
        out = np.zeros((2, 2, 2))
        out[0, 0, 0] = 0.5 * (tetragamma(l1) + 1.0 / l1**2)
        out[1, 1, 1] = -l1 / l2**3
        return out

    return ParamOracle(
        name="gamma",
        n_coords=2,
        block_slices=[slice(0, 1), slice(1, 2)],
        logq=_gamma_logq,
        sample=lambda x, rng, n: sample_gamma(rng, float(x[0]), float(x[0]) * float(x[1]), n),
        feasible=lambda x: bool(np.all(np.asarray(x) > 0)),
        support=(0.0, np.inf),
        log_partition=_gamma_log_partition,
        fim=fim,
        christoffel_first=chris,
    )


def exponential_oracle() -> ParamOracle:
    def fim(x):
        return np.array([[1.0 / float(x[0]) ** 2]])

    def chris(x):
        return np.array([[[-1.0 / float(x[0]) ** 3]]])

    return ParamOracle(
        name="exponential",
        n_coords=1,
        block_slices=[slice(0, 1)],
        logq=lambda x, z: -float(x[0]) * z + np.log(float(x[0])),
        sample=lambda x, rng, n: sample_gamma(rng, 1.0, float(x[0]), n),
        feasible=lambda x: float(x[0]) > 0,
        support=(0.0, np.inf),
        log_partition=lambda x: -float(np.log(float(x[0]))),
        fim=fim,
        christoffel_first=chris,
    )


def _ig_log_partition(x) -> float:
    l1, l2 = float(x[0]), float(x[1])
    return -0.5 * np.log(l2) - l2 * np.sqrt(l1)


def _ig_logq(x, z):
    l1, l2 = float(x[0]), float(x[1])
    return -0.5 * np.log(2.0 * np.pi * z**3) - 0.5 * z * l1 * l2 - 0.5 * l2 / z - _ig_log_partition(x)


def inverse_gaussian_oracle() -> ParamOracle:
    def fim(x):
        l1, l2 = float(x[0]), float(x[1])
        return np.diag([0.25 * l1 ** (-1.5) * l2, 0.5 / l2**2])

    def chris(x):
        l1, l2 = float(x[0]), float(x[1])
        out = np.zeros((2, 2, 2))
        out[0, 0, 0] = -3.0 / 16.0 * l1 ** (-2.5) * l2
        out[1, 1, 1] = -0.5 / l2**3
        return out

    return ParamOracle(
        name="inverse_gaussian",
        n_coords=2,
        block_slices=[slice(0, 1), slice(1, 2)],
        logq=_ig_logq,
        # lambda1 = beta^2 and lambda2 = alpha, so beta = sqrt(lambda1)
        sample=lambda x, rng, n: sample_inverse_gaussian(rng, float(x[1]), np.sqrt(float(x[0])), n),
        feasible=lambda x: bool(np.all(np.asarray(x) > 0)),
        support=(0.0, np.inf),
        log_partition=_ig_log_partition,
        fim=fim,
        christoffel_first=chris,
    )


def _univ_precision_log_partition(x) -> float:
    mu, s = float(x[0]), float(x[1])
    return 0.5 * (mu * mu * s - np.log(s) + np.log(2.0 * np.pi))


def univ_gaussian_precision_oracle() -> ParamOracle:
    """Univariate Gaussian in (mean, precision): the block-natural system."""

    def logq(x, z):
        mu, s = float(x[0]), float(x[1])
        return -0.5 * s * z * z + z * s * mu - _univ_precision_log_partition(x)

    def fim(x):
        s = float(x[1])
        return np.diag([s, 0.5 / s**2])

    def chris(x):
        s = float(x[1])
        out = np.zeros((2, 2, 2))
        out[1, 1, 1] = -0.5 / s**3
        return out

    def sample(x, rng, n):
        mu, s = float(x[0]), float(x[1])
        return mu + sample_std_normal(rng, n) / np.sqrt(s)

    return ParamOracle(
        name="univ_gaussian_precision",
        n_coords=2,
        block_slices=[slice(0, 1), slice(1, 2)],
        logq=logq,
        sample=sample,
        feasible=lambda x: float(x[1]) > 0,
        support=(-np.inf, np.inf),
        log_partition=_univ_precision_log_partition,
        fim=fim,
        christoffel_first=chris,
    )


def univ_gaussian_musigma_oracle() -> ParamOracle:
    """Univariate Gaussian in (mean, sdev): block-coordinate but not
    block-natural, so only the Fisher display and MC symbols apply."""

    def logq(x, z):
        mu, sig = float(x[0]), float(x[1])
        return -0.5 * ((z - mu) / sig) ** 2 - 0.5 * np.log(2.0 * np.pi) - np.log(sig)

    def fim(x):
        sig = float(x[1])
        return np.diag([1.0 / sig**2, 2.0 / sig**2])

    def sample(x, rng, n):
        return float(x[0]) + float(x[1]) * sample_std_normal(rng, n)

    return ParamOracle(
        name="univ_gaussian_musigma",
        n_coords=2,
        block_slices=[slice(0, 1), slice(1, 2)],
        logq=logq,
        sample=sample,
        feasible=lambda x: float(x[1]) > 0,
        support=(-np.inf, np.inf),
        fim=fim,
    )


def song_second_kind_symbols(param_kind: str, scale: float) -> tuple[np.ndarray, np.ndarray]:
    """The displayed full second-kind symbol matrices for the univariate
    Gaussian: (Gamma^1_ab, Gamma^2_ab)."""
    if param_kind == "sigma":
        g1 = np.array([[0.0, -1.0 / scale], [-1.0 / scale, 0.0]])
        g2 = np.array([[0.5 / scale, 0.0], [0.0, -1.0 / scale]])
    elif param_kind == "variance":
        g1 = np.array([[0.0, -0.5 / scale], [-0.5 / scale, 0.0]])
        g2 = np.array([[1.0, 0.0], [0.0, -1.0 / scale]])
    else:
        raise ValueError(f"unknown univariate parameterization {param_kind!r}")
    return g1, g2


ORACLES = {
    "gamma": gamma_oracle,
    "exponential": exponential_oracle,
    "inverse_gaussian": inverse_gaussian_oracle,
    "univ_gaussian_precision": univ_gaussian_precision_oracle,
    "univ_gaussian_musigma": univ_gaussian_musigma_oracle,
}
