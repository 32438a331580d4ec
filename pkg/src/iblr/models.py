"""Target problems: differentiable log-joints with gradients, per-example
access for the online Gauss-Newton baseline, dataset loading, and the
synthetic generators for the desk-scale experiments.

Every model evaluates l(z), the negative unnormalized log-posterior, up to
an additive constant.  Vector-latent models take z of shape (d,) and
vectorize over (n, d); the positive-scalar models (the factor model with a
single factor) use plain (n,) arrays.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from importlib import resources

import numpy as np

from iblr.errors import DimensionMismatch, ParseError, ShapeError, UnknownDensity
from iblr.linalg import SPDMatrix, cholesky, symmetrize
from iblr.rng import RngStream, sample_categorical, sample_gamma, sample_std_normal
from iblr.special import digamma, log_gamma

_LOG_2PI = float(np.log(2.0 * np.pi))


class TargetModel:
    """Contract shared by all targets; subclasses fill in the math."""

    dim: int = 0
    n_examples: int | None = None

    def loss(self, z, batch=None) -> float:
        return float(self.loss_many(np.asarray(z, dtype=float)[None, ...], batch=batch)[0])

    def grad(self, z, batch=None) -> np.ndarray:
        return self.grad_many(np.asarray(z, dtype=float)[None, ...], batch=batch)[0]

    def hess(self, z, batch=None):
        hs = self.hess_many(np.asarray(z, dtype=float)[None, ...], batch=batch)
        return None if hs is None else hs[0]

    def loss_many(self, zs, batch=None) -> np.ndarray:
        raise NotImplementedError

    def grad_many(self, zs, batch=None) -> np.ndarray:
        raise NotImplementedError

    def hess_many(self, zs, batch=None):
        return None

    def per_example_grads(self, z, batch):
        return None

    def minibatch(self, rng: RngStream, size: int):
        if self.n_examples is None:
            return None
        return rng.gen.integers(0, self.n_examples, size=size)

    def exact_solution(self):
        return None

    @property
    def has_hess(self) -> bool:
        probe = np.zeros(self.dim) if self.dim > 1 else np.ones(1)
        try:
            return self.hess_many(probe[None, ...] if self.dim > 1 else probe[:1]) is not None
        except NotImplementedError:
            return False


# ---------------------------------------------------------------------------
# Quadratics (closed-form expectations make them the calibration targets)


class QuadraticModel(TargetModel):
    """l(z) = 1/2 z^T A z + b^T z + c with symmetric A."""

    def __init__(self, a: np.ndarray, b=None, c: float = 0.0):
        self.a = symmetrize(np.asarray(a, dtype=float))
        self.dim = self.a.shape[0]
        self.b = np.zeros(self.dim) if b is None else np.asarray(b, dtype=float)
        self.c = float(c)

    def loss_many(self, zs, batch=None):
        zs = np.asarray(zs, dtype=float)
        return 0.5 * np.einsum("ni,ij,nj->n", zs, self.a, zs) + zs @ self.b + self.c

    def grad_many(self, zs, batch=None):
        return np.asarray(zs, dtype=float) @ self.a + self.b

    def hess_many(self, zs, batch=None):
        n = np.asarray(zs).shape[0]
        return np.broadcast_to(self.a, (n, self.dim, self.dim)).copy()

    def elbo_exact(self, mu, prec: SPDMatrix) -> float:
        """E[l] + E[log q] for a Gaussian N(mu, prec^-1), closed form."""
        sigma = prec.inverse()
        e_loss = (
            0.5 * float(mu @ self.a @ mu)
            + float(self.b @ mu)
            + self.c
            + 0.5 * float(np.sum(self.a * sigma))
        )
        entropy = 0.5 * (self.dim * (1.0 + _LOG_2PI) - prec.logdet())
        return e_loss - entropy

    def exact_solution(self):
        from iblr.families.gaussian import GaussianFull

        prec = SPDMatrix(self.a)
        mu = -prec.solve(self.b)
        best = GaussianFull(mu, prec)
        return best, self.elbo_exact(mu, prec)


def centered_quadratic(a: np.ndarray, z_star: np.ndarray) -> QuadraticModel:
    """l(z) = 1/2 (z - z*)^T A (z - z*)."""
    a = symmetrize(np.asarray(a, dtype=float))
    z_star = np.asarray(z_star, dtype=float)
    return QuadraticModel(a, b=-a @ z_star, c=0.5 * float(z_star @ a @ z_star))


# ---------------------------------------------------------------------------
# Datasets


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        if np.any(~np.isfinite(self.x)) or np.any(~np.isfinite(self.y)):
            raise ShapeError("dataset contains non-finite values")
        overlap = np.intersect1d(self.train_idx, self.test_idx)
        if overlap.size:
            raise ShapeError("train/test split overlaps")
        if self.train_idx.size + self.test_idx.size != self.x.shape[0]:
            raise ShapeError("split does not cover the dataset")

    @property
    def x_train(self):
        return self.x[self.train_idx]

    @property
    def y_train(self):
        return self.y[self.train_idx]

    @property
    def x_test(self):
        return self.x[self.test_idx]

    @property
    def y_test(self):
        return self.y[self.test_idx]


def make_dataset(x, y, train_size: int | None = None) -> Dataset:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    if train_size is None:
        train_size = n
    idx = np.arange(n)
    return Dataset(x, y, idx[:train_size], idx[train_size:])


def load_dataset(path, fmt: str = "csv", header: bool = False, standardize: bool = False,
                 train_size: int | None = None, label_col: int = -1) -> Dataset:
    """Parse a CSV or libsvm-style text file into a dense dataset."""
    rows = []
    if fmt == "csv":
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                if header and lineno == 1:
                    continue
                parts = line.split(",")
                try:
                    rows.append([float(p) for p in parts])
                except ValueError as exc:
                    raise ParseError(lineno, str(exc)) from None
        if not rows:
            raise ShapeError("empty dataset")
        width = len(rows[0])
        if any(len(r) != width for r in rows):
            raise ShapeError("ragged rows in CSV input")
        mat = np.asarray(rows, dtype=float)
        y = mat[:, label_col]
        x = np.delete(mat, label_col % mat.shape[1], axis=1)
    elif fmt == "libsvm":
        labels, feats = [], []
        max_idx = 0
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split()
                try:
                    labels.append(float(parts[0]))
                    pairs = []
                    for tok in parts[1:]:
                        idx, val = tok.split(":")
                        pairs.append((int(idx), float(val)))
                        max_idx = max(max_idx, int(idx))
                    feats.append(pairs)
                except (ValueError, IndexError) as exc:
                    raise ParseError(lineno, str(exc)) from None
        if not labels:
            raise ShapeError("empty dataset")
        x = np.zeros((len(labels), max_idx))
        for i, pairs in enumerate(feats):
            for idx, val in pairs:
                x[i, idx - 1] = val
        y = np.asarray(labels)
    else:
        raise ShapeError(f"unknown dataset format {fmt!r}")
    if standardize:
        mean = x.mean(axis=0)
        sd = x.std(axis=0)
        sd[sd == 0] = 1.0
        x = (x - mean) / sd
    return make_dataset(x, y, train_size=train_size)


# ---------------------------------------------------------------------------
# Bayesian linear regression (conjugate; closed-form optimum)


class BayesLinReg(TargetModel):
    """Gaussian likelihood with a zero-mean isotropic Gaussian prior.

    l(z) = ||y - X z||^2 / (2 sigma^2) + (prior/2) ||z||^2, with minibatch
    evaluations rescaled to the full-data objective.
    """

    def __init__(self, dataset: Dataset, noise_var: float = 1.0, prior_precision: float = 1.0):
        self.dataset = dataset
        self.noise_var = float(noise_var)
        self.prior_precision = float(prior_precision)
        self.x = dataset.x_train
        self.y = dataset.y_train
        self.dim = self.x.shape[1]
        self.n_examples = self.x.shape[0]

    def _xy(self, batch):
        if batch is None:
            return self.x, self.y, 1.0
        return self.x[batch], self.y[batch], self.n_examples / len(batch)

    def loss_many(self, zs, batch=None):
        x, y, scale = self._xy(batch)
        resid = zs @ x.T - y
        data = 0.5 * np.sum(resid**2, axis=1) / self.noise_var
        return scale * data + 0.5 * self.prior_precision * np.sum(np.asarray(zs) ** 2, axis=1)

    def grad_many(self, zs, batch=None):
        x, y, scale = self._xy(batch)
        resid = zs @ x.T - y
        return scale * (resid @ x) / self.noise_var + self.prior_precision * np.asarray(zs)

    def hess_many(self, zs, batch=None):
        x, _, scale = self._xy(batch)
        h = scale * (x.T @ x) / self.noise_var + self.prior_precision * np.eye(self.dim)
        n = np.asarray(zs).shape[0]
        return np.broadcast_to(h, (n, self.dim, self.dim)).copy()

    def per_example_grads(self, z, batch):
        x, y, _ = self._xy(batch)
        resid = x @ np.asarray(z, dtype=float) - y
        return (resid[:, None] * x) / self.noise_var

    def posterior(self):
        s_star = self.prior_precision * np.eye(self.dim) + (self.x.T @ self.x) / self.noise_var
        prec = SPDMatrix(s_star)
        mu_star = prec.solve(self.x.T @ self.y / self.noise_var)
        return mu_star, prec

    def elbo_exact(self, mu, prec: SPDMatrix) -> float:
        sigma = prec.inverse()
        resid = self.y - self.x @ mu
        e_data = 0.5 * (resid @ resid + np.sum((self.x @ sigma) * self.x)) / self.noise_var
        e_prior = 0.5 * self.prior_precision * (mu @ mu + np.trace(sigma))
        entropy = 0.5 * (self.dim * (1.0 + _LOG_2PI) - prec.logdet())
        return float(e_data + e_prior - entropy)

    def exact_solution(self):
        from iblr.families.gaussian import GaussianFull

        mu_star, prec = self.posterior()
        return GaussianFull(mu_star, prec), self.elbo_exact(mu_star, prec)

    def predictive_log_many(self, zs, x, y):
        """(n_samples, n_points) log N(y | x z, noise_var)."""
        mean = np.asarray(zs) @ np.asarray(x).T
        return -0.5 * ((np.asarray(y) - mean) ** 2 / self.noise_var + _LOG_2PI + np.log(self.noise_var))


def synthetic_regression(rng: RngStream, n: int, d: int, noise_sd: float = 1.0,
                         train_size: int | None = None) -> Dataset:
    x = sample_std_normal(rng, n, d)
    z_true = sample_std_normal(rng, d)
    y = x @ z_true + noise_sd * sample_std_normal(rng, n)
    return make_dataset(x, y, train_size=train_size)


# ---------------------------------------------------------------------------
# Bayesian logistic regression


class BayesLogReg(TargetModel):
    """l(z) = sum_i log(1 + exp(-y_i x_i^T z)) + (prior/2) ||z||^2, labels +-1."""

    def __init__(self, dataset: Dataset, prior_precision: float = 1.0):
        if not np.all(np.isin(dataset.y, (-1.0, 1.0))):
            raise ShapeError("logistic labels must be +-1")
        self.dataset = dataset
        self.prior_precision = float(prior_precision)
        self.x = dataset.x_train
        self.y = dataset.y_train
        self.dim = self.x.shape[1]
        self.n_examples = self.x.shape[0]

    def _xy(self, batch):
        if batch is None:
            return self.x, self.y, 1.0
        return self.x[batch], self.y[batch], self.n_examples / len(batch)

    def loss_many(self, zs, batch=None):
        x, y, scale = self._xy(batch)
        margins = -(zs @ x.T) * y
        data = np.sum(np.logaddexp(0.0, margins), axis=1)
        return scale * data + 0.5 * self.prior_precision * np.sum(np.asarray(zs) ** 2, axis=1)

    def grad_many(self, zs, batch=None):
        x, y, scale = self._xy(batch)
        margins = -(zs @ x.T) * y
        sig = 1.0 / (1.0 + np.exp(-margins))
        return scale * ((-sig * y) @ x) + self.prior_precision * np.asarray(zs)

    def hess_many(self, zs, batch=None):
        x, y, scale = self._xy(batch)
        margins = -(zs @ x.T) * y
        sig = 1.0 / (1.0 + np.exp(-margins))
        w = sig * (1.0 - sig)
        h = np.einsum("nm,mi,mj->nij", w, x, x)
        return scale * h + self.prior_precision * np.eye(self.dim)

    def per_example_grads(self, z, batch):
        x, y, _ = self._xy(batch)
        margins = -(x @ np.asarray(z, dtype=float)) * y
        sig = 1.0 / (1.0 + np.exp(-margins))
        return (-sig * y)[:, None] * x

    def predictive_log_many(self, zs, x, y):
        margins = (np.asarray(zs) @ np.asarray(x).T) * np.asarray(y)
        return -np.logaddexp(0.0, -margins)


def synthetic_classification(rng: RngStream, n: int, d: int = 2, separation: float = 2.0,
                             train_size: int | None = None) -> Dataset:
    """Two Gaussian clusters with +-1 labels, the 2-D toy regime."""
    half = n // 2
    center = np.zeros(d)
    center[0] = separation
    xa = sample_std_normal(rng, half, d) + center
    xb = sample_std_normal(rng, n - half, d) - center
    x = np.vstack([xa, xb])
    y = np.concatenate([np.ones(half), -np.ones(n - half)])
    perm = rng.gen.permutation(n)
    return make_dataset(x[perm], y[perm], train_size=train_size)


# ---------------------------------------------------------------------------
# Gamma factor model (synthetic count data)


class GammaFactorModel(TargetModel):
    """Poisson counts with positive factor loadings and a gamma prior on the
    per-example latent intensity.

    The generative document: W (d x k) has gamma entries; for each example,
    h ~ Gamma(a0, b0) coordinate-wise and y ~ Poisson(W h).  The target is
    the negative log-joint of one example's counts as a function of h, so a
    single-factor model is a scalar positive latent.
    """

    def __init__(self, w: np.ndarray, counts: np.ndarray, a0: float = 2.0, b0: float = 1.0):
        self.w = np.atleast_2d(np.asarray(w, dtype=float))
        self.counts = np.asarray(counts, dtype=float)
        self.a0 = float(a0)
        self.b0 = float(b0)
        self.k = self.w.shape[1]
        self.dim = self.k
        if self.counts.shape != (self.w.shape[0],):
            raise DimensionMismatch("counts do not match the loading matrix")
        self.scalar_latent = self.k == 1

    def _as_matrix(self, zs):
        zs = np.asarray(zs, dtype=float)
        if self.scalar_latent and zs.ndim == 1:
            return zs[:, None]
        return zs

    def loss_many(self, zs, batch=None):
        h = self._as_matrix(zs)
        rates = h @ self.w.T
        data = np.sum(rates - self.counts * np.log(rates), axis=1)
        prior = np.sum(self.b0 * h - (self.a0 - 1.0) * np.log(h), axis=1)
        return data + prior

    def grad_many(self, zs, batch=None):
        h = self._as_matrix(zs)
        rates = h @ self.w.T
        jac = (1.0 - self.counts / rates) @ self.w
        grad = jac + self.b0 - (self.a0 - 1.0) / h
        return grad[:, 0] if self.scalar_latent and np.asarray(zs).ndim == 1 else grad

    def hess_many(self, zs, batch=None):
        h = self._as_matrix(zs)
        rates = h @ self.w.T
        coef = self.counts / rates**2
        hess = np.einsum("nm,mi,mj->nij", coef, self.w, self.w)
        diag_idx = np.arange(self.k)
        hess[:, diag_idx, diag_idx] += (self.a0 - 1.0) / h**2
        if self.scalar_latent and np.asarray(zs).ndim == 1:
            return hess[:, 0, 0]
        return hess

    def exact_solution(self):
        """Gamma posterior for the single-factor single-feature conjugate case."""
        if self.k != 1 or self.w.shape[0] != 1:
            return None
        from iblr.families.positive import GammaApprox

        shape = self.a0 + float(self.counts[0])
        rate = self.b0 + float(self.w[0, 0])
        return GammaApprox(shape, rate / shape), None

    def predictive_log_many(self, zs, x, y):
        """x indexes features; y holds counts.  Poisson log-pmf per sample."""
        h = self._as_matrix(zs)
        rates = h @ self.w[np.asarray(x, dtype=int)].T
        yv = np.asarray(y, dtype=float)
        return yv * np.log(rates) - rates - log_gamma(yv + 1.0)


def gamma_factor_synthetic(rng: RngStream, n: int, d: int, k_factors: int = 1,
                           a0: float = 2.0, b0: float = 1.0) -> GammaFactorModel:
    """Generate loadings and one example's counts from the documented process."""
    w = sample_gamma(rng, 2.0, 2.0, n=(d, k_factors)) if d * k_factors > 1 else np.array([[sample_gamma(rng, 2.0, 2.0)]])
    w = np.asarray(w, dtype=float).reshape(d, k_factors)
    h_true = np.array([sample_gamma(rng, a0, b0) for _ in range(k_factors)])
    rates = w @ h_true
    counts = rng.gen.poisson(rates).astype(float)
    del n  # the desk-scale target conditions on a single example
    return GammaFactorModel(w, counts, a0=a0, b0=b0)


# ---------------------------------------------------------------------------
# Toy densities


def _load_catalog() -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    with resources.files("iblr").joinpath("catalogs/toy_densities.ini").open() as fh:
        parser.read_file(fh)
    return parser


class BananaModel(TargetModel):
    def __init__(self, curvature: float = 1.0, sigma1: float = 1.0):
        self.b = float(curvature)
        self.s1 = float(sigma1)
        self.dim = 2

    def loss_many(self, zs, batch=None):
        z1, z2 = zs[:, 0], zs[:, 1]
        shifted = z2 + self.b * (z1**2 - self.s1**2)
        return 0.5 * z1**2 / self.s1**2 + 0.5 * shifted**2

    def grad_many(self, zs, batch=None):
        z1, z2 = zs[:, 0], zs[:, 1]
        shifted = z2 + self.b * (z1**2 - self.s1**2)
        g1 = z1 / self.s1**2 + shifted * 2.0 * self.b * z1
        return np.stack([g1, shifted], axis=1)


class DoubleBananaModel(TargetModel):
    def __init__(self, sigma1: float = 1.0, sigma2: float = 0.3, y_obs: float = float(np.log(30.0))):
        self.s1 = float(sigma1)
        self.s2 = float(sigma2)
        self.y = float(y_obs)
        self.dim = 2

    def _f_and_grad(self, zs):
        z1, z2 = zs[:, 0], zs[:, 1]
        d = (1.0 - z1) ** 2 + 100.0 * (z2 - z1**2) ** 2
        f = np.log(d)
        df1 = (-2.0 * (1.0 - z1) - 400.0 * z1 * (z2 - z1**2)) / d
        df2 = 200.0 * (z2 - z1**2) / d
        return f, np.stack([df1, df2], axis=1)

    def loss_many(self, zs, batch=None):
        f, _ = self._f_and_grad(zs)
        return 0.5 * np.sum(zs**2, axis=1) / self.s1**2 + 0.5 * (self.y - f) ** 2 / self.s2**2

    def grad_many(self, zs, batch=None):
        f, df = self._f_and_grad(zs)
        return zs / self.s1**2 - ((self.y - f) / self.s2**2)[:, None] * df


class CorrelatedLaplaceModel(TargetModel):
    """exp(-l(z)) = Lap(z1 | 0, s) Lap(z2 | z1, s); kink subgradients are 0."""

    def __init__(self, scale: float = 1.0):
        self.scale = float(scale)
        self.dim = 2

    def loss_many(self, zs, batch=None):
        z1, z2 = zs[:, 0], zs[:, 1]
        return (np.abs(z1) + np.abs(z2 - z1)) / self.scale + 2.0 * np.log(2.0 * self.scale)

    def grad_many(self, zs, batch=None):
        z1, z2 = zs[:, 0], zs[:, 1]
        s1 = np.sign(z1)
        s2 = np.sign(z2 - z1)
        return np.stack([(s1 - s2) / self.scale, s2 / self.scale], axis=1)


class BetaBinomialModel(TargetModel):
    """Hierarchical binomial rates with a (a+b)^(-5/2) prior, in log coords.

    z = (log a, log b); the posterior over z is skewed, which is what the
    mixture approximations are meant to capture.
    """

    def __init__(self, successes: np.ndarray, trials: np.ndarray):
        self.successes = np.asarray(successes, dtype=float)
        self.trials = np.asarray(trials, dtype=float)
        self.dim = 2

    @classmethod
    def synthetic(cls, n_obs: int = 20, n_trials: int = 20, true_alpha: float = 2.0,
                  true_beta: float = 6.0, data_seed: int = 7) -> "BetaBinomialModel":
        rng = RngStream(data_seed, 900)
        p = rng.gen.beta(true_alpha, true_beta, size=n_obs)
        y = rng.gen.binomial(int(n_trials), p).astype(float)
        return cls(y, np.full(n_obs, float(n_trials)))

    def _log_joint_and_grad(self, a, b):
        y, n = self.successes, self.trials
        ll = (
            log_gamma(y[None, :] + a[:, None])
            + log_gamma(n[None, :] - y[None, :] + b[:, None])
            - log_gamma(n[None, :] + a[:, None] + b[:, None])
            - log_gamma(a)[:, None]
            - log_gamma(b)[:, None]
            + log_gamma(a + b)[:, None]
        )
        da = (
            digamma(y[None, :] + a[:, None])
            - digamma(n[None, :] + a[:, None] + b[:, None])
            - digamma(a)[:, None]
            + digamma(a + b)[:, None]
        )
        db = (
            digamma(n[None, :] - y[None, :] + b[:, None])
            - digamma(n[None, :] + a[:, None] + b[:, None])
            - digamma(b)[:, None]
            + digamma(a + b)[:, None]
        )
        return ll.sum(axis=1), da.sum(axis=1), db.sum(axis=1)

    def loss_many(self, zs, batch=None):
        a = np.exp(zs[:, 0])
        b = np.exp(zs[:, 1])
        ll, _, _ = self._log_joint_and_grad(a, b)
        log_prior = -2.5 * np.log(a + b)
        log_jac = zs[:, 0] + zs[:, 1]
        return -(ll + log_prior + log_jac)

    def grad_many(self, zs, batch=None):
        a = np.exp(zs[:, 0])
        b = np.exp(zs[:, 1])
        _, da, db = self._log_joint_and_grad(a, b)
        prior_da = -2.5 / (a + b)
        prior_db = -2.5 / (a + b)
        g1 = -(da + prior_da) * a - 1.0
        g2 = -(db + prior_db) * b - 1.0
        return np.stack([g1, g2], axis=1)


class StudentTMixtureModel(TargetModel):
    """Equal-weight mixture of multivariate Student-t components.

    Component locations are coordinate-wise uniform on (-spread, spread);
    shape matrices are A^T A + I with A entries of sd entry_sd_factor * dim.
    The generator is fully determined by (param_seed, n_components, dim), so
    ground-truth samples are reproducible; to_dict/from_dict round-trip the
    realized parameters.
    """

    def __init__(self, locs: np.ndarray, shapes: list[np.ndarray], dof: float):
        self.locs = np.asarray(locs, dtype=float)
        self.shapes = [symmetrize(np.asarray(v, dtype=float)) for v in shapes]
        self.dof = float(dof)
        self.n_components, self.dim = self.locs.shape
        self._chols = [cholesky(v) for v in self.shapes]
        self._invs = [np.linalg.inv(v) for v in self.shapes]
        self._logdets = [2.0 * float(np.sum(np.log(np.diag(c)))) for c in self._chols]
        d, nu = self.dim, self.dof
        self._log_norm = (
            log_gamma((nu + d) / 2.0)
            - log_gamma(nu / 2.0)
            - 0.5 * d * np.log(nu * np.pi)
        )

    @classmethod
    def generate(cls, n_components: int = 4, dim: int = 5, spread: float = 5.0,
                 dof: float = 2.0, entry_sd_factor: float = 0.1, param_seed: int = 0):
        rng = RngStream(param_seed, 901)
        locs = rng.gen.uniform(-spread, spread, size=(n_components, dim))
        shapes = []
        for _ in range(n_components):
            a = rng.gen.normal(0.0, entry_sd_factor * dim, size=(dim, dim))
            shapes.append(a.T @ a + np.eye(dim))
        return cls(locs, shapes, dof)

    def to_dict(self) -> dict:
        return {
            "dof": self.dof,
            "locs": self.locs.tolist(),
            "shapes": [v.tolist() for v in self.shapes],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "StudentTMixtureModel":
        return cls(np.asarray(doc["locs"]), [np.asarray(v) for v in doc["shapes"]], doc["dof"])

    def _log_components(self, zs):
        out = np.empty((self.n_components, zs.shape[0]))
        nu, d = self.dof, self.dim
        for k in range(self.n_components):
            diff = zs - self.locs[k]
            m = np.einsum("ni,ij,nj->n", diff, self._invs[k], diff)
            out[k] = self._log_norm - 0.5 * self._logdets[k] - 0.5 * (nu + d) * np.log1p(m / nu)
        return out

    def loss_many(self, zs, batch=None):
        logs = self._log_components(np.asarray(zs, dtype=float))
        m = logs.max(axis=0)
        return -(m + np.log(np.mean(np.exp(logs - m), axis=0)))

    def grad_many(self, zs, batch=None):
        zs = np.asarray(zs, dtype=float)
        logs = self._log_components(zs)
        m = logs.max(axis=0)
        weights = np.exp(logs - m)
        weights /= weights.sum(axis=0)
        nu, d = self.dof, self.dim
        grad = np.zeros_like(zs)
        for k in range(self.n_components):
            diff = zs - self.locs[k]
            vinv_diff = diff @ self._invs[k].T
            mq = np.einsum("ni,ni->n", diff, vinv_diff)
            comp_grad = -((nu + d) / (nu + mq))[:, None] * vinv_diff
            grad -= weights[k][:, None] * comp_grad
        return grad

    def sample_truth(self, rng: RngStream, n: int) -> np.ndarray:
        idx = sample_categorical(rng, np.full(self.n_components, 1.0 / self.n_components), n)
        eps = sample_std_normal(rng, n, self.dim)
        chi = sample_gamma(rng, self.dof / 2.0, 0.5, n)
        scale = np.sqrt(self.dof / chi)
        out = np.empty((n, self.dim))
        for k in range(self.n_components):
            mask = idx == k
            if not np.any(mask):
                continue
            out[mask] = self.locs[k] + (eps[mask] @ self._chols[k].T) * scale[mask][:, None]
        return out


class ToyBnnModel(TargetModel):
    """N(0, I) prior with likelihood N(y | 3 z1^2 (z1^2 - 1) + z2^2, sd^2),
    conditioned on the observation y."""

    def __init__(self, y_obs: float = 1.0, noise_sd: float = 0.5):
        self.y = float(y_obs)
        self.sd = float(noise_sd)
        self.dim = 2

    def loss_many(self, zs, batch=None):
        z1, z2 = zs[:, 0], zs[:, 1]
        f = 3.0 * z1**2 * (z1**2 - 1.0) + z2**2
        return 0.5 * np.sum(zs**2, axis=1) + 0.5 * (self.y - f) ** 2 / self.sd**2

    def grad_many(self, zs, batch=None):
        z1, z2 = zs[:, 0], zs[:, 1]
        f = 3.0 * z1**2 * (z1**2 - 1.0) + z2**2
        coef = -(self.y - f) / self.sd**2
        df1 = 12.0 * z1**3 - 6.0 * z1
        df2 = 2.0 * z2
        return zs + coef[:, None] * np.stack([df1, df2], axis=1)


def toy_density(name: str, **overrides) -> TargetModel:
    """Instantiate a catalog target; overrides shadow the pinned defaults."""
    catalog = _load_catalog()
    if name not in catalog:
        raise UnknownDensity(f"unknown toy density {name!r}")
    params: dict = {k: v for k, v in catalog[name].items()}
    params.update({k: v for k, v in overrides.items() if v is not None})

    def fnum(key):
        return float(params[key])

    def inum(key):
        return int(float(params[key]))

    if name == "banana":
        return BananaModel(curvature=fnum("curvature"), sigma1=fnum("sigma1"))
    if name == "double_banana":
        return DoubleBananaModel(sigma1=fnum("sigma1"), sigma2=fnum("sigma2"), y_obs=fnum("y_obs"))
    if name == "laplace_correlated":
        return CorrelatedLaplaceModel(scale=fnum("scale"))
    if name == "beta_binomial":
        return BetaBinomialModel.synthetic(
            n_obs=inum("n_obs"), n_trials=inum("n_trials"),
            true_alpha=fnum("true_alpha"), true_beta=fnum("true_beta"),
            data_seed=inum("data_seed"),
        )
    if name == "student_t_mixture":
        return StudentTMixtureModel.generate(
            n_components=inum("n_components"), dim=inum("dim"), spread=fnum("spread"),
            dof=fnum("dof"), entry_sd_factor=fnum("entry_sd_factor"),
            param_seed=inum("param_seed"),
        )
    if name == "toy_bnn":
        return ToyBnnModel(y_obs=fnum("y_obs"), noise_sd=fnum("noise_sd"))
    raise UnknownDensity(f"unknown toy density {name!r}")


TOY_DENSITY_NAMES = (
    "banana",
    "double_banana",
    "laplace_correlated",
    "beta_binomial",
    "student_t_mixture",
    "toy_bnn",
)


class ConjugateGammaModel(TargetModel):
    """Negative log of an unnormalized Gamma(shape, rate) density; the scalar
    positive families' calibration target."""

    def __init__(self, shape: float, rate: float):
        self.shape = float(shape)
        self.rate = float(rate)
        self.dim = 1

    def loss_many(self, zs, batch=None):
        z = np.asarray(zs, dtype=float)
        return self.rate * z - (self.shape - 1.0) * np.log(z)

    def grad_many(self, zs, batch=None):
        z = np.asarray(zs, dtype=float)
        return self.rate - (self.shape - 1.0) / z

    def hess_many(self, zs, batch=None):
        z = np.asarray(zs, dtype=float)
        return (self.shape - 1.0) / z**2

    def exact_solution(self):
        from iblr.families.positive import GammaApprox

        return GammaApprox(self.shape, self.rate / self.shape), None


class LinearModel(TargetModel):
    """l(z) = a^T z, the Bonnet-identity probe."""

    def __init__(self, a: np.ndarray):
        self.a = np.asarray(a, dtype=float)
        self.dim = self.a.size

    def loss_many(self, zs, batch=None):
        return np.asarray(zs) @ self.a

    def grad_many(self, zs, batch=None):
        n = np.asarray(zs).shape[0]
        return np.broadcast_to(self.a, (n, self.dim)).copy()

    def hess_many(self, zs, batch=None):
        n = np.asarray(zs).shape[0]
        return np.zeros((n, self.dim, self.dim))


class ScalarLinearModel(TargetModel):
    """l(z) = c z on the positive half-line."""

    def __init__(self, c: float):
        self.c = float(c)
        self.dim = 1

    def loss_many(self, zs, batch=None):
        return self.c * np.asarray(zs, dtype=float)

    def grad_many(self, zs, batch=None):
        return np.full(np.asarray(zs).shape, self.c)

    def hess_many(self, zs, batch=None):
        return np.zeros(np.asarray(zs).shape)
