"""Iteration drivers.

run_iblr      second-order retraction update, no line search by construction
run_blr       first-order rule; backtracks the step on infeasibility
adam_like     diagonal-Gaussian optimizer with the positivity-preserving
              scaling update, minibatch mean gradients only
vogn          the online Gauss-Newton baseline, per-example gradients
tran          covariance-coordinate retraction, Gaussians only

All drivers emit TraceRecord rows; wall-clock timing is opt-in because the
default trace contract is byte-reproducibility under a fixed seed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator

from iblr.blocks import BlockedPoint, ngd_step, retraction_step, value_feasible
from iblr.errors import ConfigError, PerExampleUnavailable
from iblr.families import GammaApprox, GaussianDiag, GaussianFull, from_blocked, legacy_blr_natural_gradient
from iblr.linalg import SPDMatrix, symmetrize
from iblr.metrics import neg_elbo_mc
from iblr.rng import RngStream, sample_std_normal

STREAM_OPTIMIZER = 2
STREAM_METRICS = 3


@dataclass
class OptimizerConfig:
    step_size: float = 0.1
    max_iters: int = 1000
    n_mc: int = 1
    estimator: str = "rep"
    expectation: str = "mc"  # mc | exact@mean | gh
    gh_nodes: int = 20
    line_search_shrink: float = 0.5
    line_search_max: int = 30
    r1: float = 0.9
    r2: float = 0.999
    prior_precision: float = 1.0
    train_size: int | None = None
    batch_size: int | None = None
    seed: int = 0
    trace_every: int | None = None  # None = every iter to 1000, then every 10th
    elbo_samples: int = 100
    metric_cadence: int | None = None
    timing: str = "none"  # none | wall

    def __post_init__(self):
        if self.step_size < 0:
            raise ConfigError("optimizer.step_size must be non-negative")
        if not (0.0 < self.line_search_shrink < 1.0):
            raise ConfigError("optimizer.line_search_shrink must lie in (0, 1)")
        if not (0.0 <= self.r1 <= 1.0) or not (0.0 < self.r2 <= 1.0):
            raise ConfigError("optimizer.r1 and r2 must lie in (0, 1]")
        if self.n_mc < 1:
            raise ConfigError("optimizer.n_mc must be at least 1")


@dataclass
class TraceRecord:
    iteration: int
    elapsed_ms: float
    neg_elbo: float
    neg_elbo_se: float
    metrics: dict = field(default_factory=dict)
    feasibility_violations: int = 0
    line_search_backtracks: int = 0


def _should_record(iteration: int, max_iters: int, trace_every: int | None) -> bool:
    if iteration == 0 or iteration == max_iters:
        return True
    if trace_every is not None:
        return iteration % trace_every == 0
    return iteration <= 1000 or iteration % 10 == 0


class _TraceBuilder:
    def __init__(self, model, config: OptimizerConfig, metrics=None):
        self.model = model
        self.config = config
        self.metrics = metrics or {}
        self.rng = RngStream(config.seed, STREAM_METRICS)
        self.records: list[TraceRecord] = []
        self.elapsed_ms = 0.0

    def add_time(self, seconds: float):
        if self.config.timing == "wall":
            self.elapsed_ms += seconds * 1000.0

    def maybe_record(self, iteration: int, family, *, backtracks=0, violations=0):
        if not _should_record(iteration, self.config.max_iters, self.config.trace_every):
            return
        if self.config.elbo_samples >= 2:
            res = neg_elbo_mc(family, self.model, self.rng, self.config.elbo_samples)
            elbo, se = res.value, res.std_error
        else:
            elbo, se = math.nan, math.nan
        extra = {}
        cadence = self.config.metric_cadence
        due = iteration == self.config.max_iters or (
            cadence is not None and iteration % cadence == 0
        )
        if due:
            for name, fn in self.metrics.items():
                extra[name] = float(fn(family, iteration))
        self.records.append(
            TraceRecord(
                iteration,
                self.elapsed_ms,
                elbo,
                se,
                metrics=extra,
                feasibility_violations=violations,
                line_search_backtracks=backtracks,
            )
        )


def _grad_kwargs(family, config: OptimizerConfig):
    kwargs = {"estimator": config.estimator}
    if isinstance(family, (GaussianFull, GaussianDiag)):
        kwargs["mode"] = config.expectation
        kwargs["gh_nodes"] = config.gh_nodes
    elif config.expectation != "mc":
        raise ConfigError(
            f"optimizer.expectation={config.expectation!r} is only defined for Gaussian families"
        )
    return kwargs


def run_iblr(family, model, config: OptimizerConfig, metrics=None):
    """Second-order rule: estimate the natural gradient at the current point
    and retract.  Gaussian-type blocks all read the old point, so the mean is
    preconditioned by the previous precision."""
    rng = RngStream(config.seed, STREAM_OPTIMIZER)
    trace = _TraceBuilder(model, config, metrics)
    kwargs = _grad_kwargs(family, config)
    gamma = family.christoffel_contraction()
    trace.maybe_record(0, family)
    for it in range(1, config.max_iters + 1):
        start = time.perf_counter()
        batch = model.minibatch(rng, config.batch_size) if config.batch_size else None
        est = family.natural_gradient(model, rng, config.n_mc, batch=batch, **kwargs)
        point = family.blocked_point()
        new_point = retraction_step(point, est.blocks, config.step_size, gamma)
        family = _rebuild(family, new_point)
        gamma = family.christoffel_contraction()
        trace.add_time(time.perf_counter() - start)
        trace.maybe_record(it, family)
    return family, trace.records


def _rebuild(family, point: BlockedPoint):
    meta = family.json_meta() if hasattr(family, "json_meta") else {}
    return from_blocked(family.kind, point, **meta)


def _blr_gaussian_step(family: GaussianFull, grad_mean, hess_mean, t, config):
    """Original-rule Gaussian step: precision first, then the mean with the
    new precision as preconditioner."""
    backtracks = 0
    while True:
        candidate = symmetrize((1.0 - t) * family.prec.data + t * hess_mean)
        from iblr.blocks import SPD

        if value_feasible(SPD(family.prec.dim), candidate):
            new_prec = SPDMatrix(candidate)
            new_mu = family.mu - t * new_prec.solve(grad_mean)
            return GaussianFull(new_mu, new_prec), backtracks, False
        backtracks += 1
        if backtracks > config.line_search_max:
            return family, backtracks, True
        t *= config.line_search_shrink


def _blr_gamma_step(family: GammaApprox, g_alpha, g_beta, t, config):
    backtracks = 0
    while True:
        alpha_new = (1.0 - t) * family.shape - t * g_alpha
        beta_new = (1.0 - t) * family.rate - t * g_beta
        if alpha_new > 1e-12 and beta_new > 1e-12:
            return GammaApprox(alpha_new, beta_new / alpha_new), backtracks, False
        backtracks += 1
        if backtracks > config.line_search_max:
            return family, backtracks, True
        t *= config.line_search_shrink


def run_blr(family, model, config: OptimizerConfig, metrics=None):
    """First-order rule with a feasibility-only backtracking line search.

    Full Gaussians and gammas use their original natural-parameterization
    updates; every other family takes a plain first-order step in its block
    coordinates.
    """
    rng = RngStream(config.seed, STREAM_OPTIMIZER)
    trace = _TraceBuilder(model, config, metrics)
    kwargs = _grad_kwargs(family, config)
    trace.maybe_record(0, family)
    for it in range(1, config.max_iters + 1):
        start = time.perf_counter()
        batch = model.minibatch(rng, config.batch_size) if config.batch_size else None
        if isinstance(family, GaussianFull):
            grad_mean, hess_mean = legacy_blr_natural_gradient(
                family, model, rng, config.n_mc, batch=batch, **kwargs
            )
            family, backtracks, exhausted = _blr_gaussian_step(
                family, grad_mean, hess_mean, config.step_size, config
            )
        elif isinstance(family, GammaApprox):
            g_alpha, g_beta = legacy_blr_natural_gradient(
                family, model, rng, config.n_mc, batch=batch, estimator=config.estimator
            )
            family, backtracks, exhausted = _blr_gamma_step(
                family, g_alpha, g_beta, config.step_size, config
            )
        else:
            est = family.natural_gradient(model, rng, config.n_mc, batch=batch, **kwargs)
            point = family.blocked_point()
            backtracks = 0
            exhausted = False
            t = config.step_size
            while True:
                new_point, feasible = ngd_step(point, est.blocks, t)
                if feasible:
                    family = _rebuild(family, new_point)
                    break
                backtracks += 1
                if backtracks > config.line_search_max:
                    exhausted = True
                    break
                t *= config.line_search_shrink
        trace.add_time(time.perf_counter() - start)
        trace.maybe_record(it, family, backtracks=backtracks, violations=int(exhausted))
    return family, trace.records


# ---------------------------------------------------------------------------
# Diagonal-Gaussian minibatch optimizers


@dataclass
class AdamLikeState:
    mu: np.ndarray
    s_hat: np.ndarray
    momentum: np.ndarray
    step: int = 0

    @classmethod
    def init(cls, dim: int, mu0=None, s_hat0: float = 1.0):
        mu = np.zeros(dim) if mu0 is None else np.asarray(mu0, dtype=float)
        return cls(mu, np.full(dim, float(s_hat0)), np.zeros(dim), 0)

    def posterior(self, train_size: int) -> GaussianDiag:
        return GaussianDiag(self.mu.copy(), train_size * self.s_hat)


def adam_like_step(
    state: AdamLikeState,
    z: np.ndarray,
    g_bar: np.ndarray,
    config: OptimizerConfig,
    *,
    mu_first: bool = True,
    extra_term: bool = True,
) -> AdamLikeState:
    """One update from the sampled point z and the minibatch mean gradient.

    The mean moves before the scaling vector; the scaling update carries the
    second-order term that keeps it positive.  Both orderings and the term
    ablation are exposed for the regression tests.
    """
    n = config.train_size
    if n is None:
        raise ConfigError("optimizer.train_size is required for the adam-like rule")
    lam_over_n = config.prior_precision / n
    k = state.step + 1
    g_mu = lam_over_n * state.mu + g_bar
    momentum = config.r1 * state.momentum + (1.0 - config.r1) * g_mu
    m_bar = momentum / (1.0 - config.r1**k)
    g_s = lam_over_n - state.s_hat + (n * state.s_hat * (z - state.mu)) * g_bar
    s_bar = state.s_hat / (1.0 - config.r2**k)
    mu_new = state.mu - config.step_size * m_bar / s_bar
    s_new = state.s_hat + (1.0 - config.r2) * g_s
    if extra_term:
        s_new = s_new + 0.5 * (1.0 - config.r2) ** 2 * g_s * g_s / state.s_hat
    if not mu_first:
        # ablation: recompute the mean step against the updated scaling
        s_bar_after = s_new / (1.0 - config.r2**k)
        mu_new = state.mu - config.step_size * m_bar / s_bar_after
    return AdamLikeState(mu_new, s_new, momentum, k)


def vogn_step(
    state: AdamLikeState,
    z: np.ndarray,
    per_example: np.ndarray,
    config: OptimizerConfig,
) -> AdamLikeState:
    """Online Gauss-Newton baseline: the scaling uses the per-example squared
    gradients and is updated before the mean."""
    n = config.train_size
    if n is None:
        raise ConfigError("optimizer.train_size is required for the vogn rule")
    lam_over_n = config.prior_precision / n
    k = state.step + 1
    g_bar = per_example.mean(axis=0)
    g_mu = lam_over_n * state.mu + g_bar
    momentum = config.r1 * state.momentum + (1.0 - config.r1) * g_mu
    m_bar = momentum / (1.0 - config.r1**k)
    g_s = lam_over_n - state.s_hat + np.mean(per_example**2, axis=0)
    s_new = state.s_hat + (1.0 - config.r2) * g_s
    with np.errstate(divide="ignore"):  # r2 = 1 freezes the scaling; mu step vanishes
        s_bar = s_new / (1.0 - config.r2**k)
    mu_new = state.mu - config.step_size * m_bar / s_bar
    return AdamLikeState(mu_new, s_new, momentum, k)


def _run_diag_minibatch(model, config: OptimizerConfig, kind: str, metrics=None,
                        mu0=None, s_hat0: float = 1.0, **step_flags):
    if config.train_size is None:
        config = replace(config, train_size=model.n_examples)
    n = config.train_size
    batch_size = config.batch_size or n
    rng = RngStream(config.seed, STREAM_OPTIMIZER)
    state = AdamLikeState.init(model.dim, mu0=mu0, s_hat0=s_hat0)
    trace = _TraceBuilder(model, config, metrics)
    trace.maybe_record(0, state.posterior(n))
    for it in range(1, config.max_iters + 1):
        start = time.perf_counter()
        eps = sample_std_normal(rng, model.dim)
        z = state.mu + eps / np.sqrt(n * state.s_hat)
        batch = model.minibatch(rng, batch_size)
        per_example = model.per_example_grads(z, batch)
        if per_example is None:
            raise PerExampleUnavailable("model does not expose per-example gradients")
        if kind == "adam_like":
            state = adam_like_step(state, z, per_example.mean(axis=0), config, **step_flags)
        else:
            state = vogn_step(state, z, per_example, config)
        trace.add_time(time.perf_counter() - start)
        trace.maybe_record(it, state.posterior(n))
    return state.posterior(n), trace.records


def run_adam_like(model, config: OptimizerConfig, metrics=None, mu0=None,
                  s_hat0: float = 1.0, **step_flags):
    return _run_diag_minibatch(model, config, "adam_like", metrics, mu0, s_hat0, **step_flags)


def run_vogn(model, config: OptimizerConfig, metrics=None, mu0=None, s_hat0: float = 1.0):
    return _run_diag_minibatch(model, config, "vogn", metrics, mu0, s_hat0)


# ---------------------------------------------------------------------------
# Covariance-coordinate retraction (Gaussians only)


def tran_step(mu: np.ndarray, sigma: SPDMatrix, grad_mu: np.ndarray,
              grad_sigma: np.ndarray, t: float):
    """mu <- mu - t Sigma grad_mu;  Sigma <- Sigma - t g + (t^2/2) g Sigma^-1 g
    with g = 2 Sigma grad_sigma Sigma the covariance natural gradient."""
    g = 2.0 * symmetrize(sigma.data @ symmetrize(grad_sigma) @ sigma.data)
    mu_new = mu - t * sigma.data @ grad_mu
    sig_new = sigma.data - t * g + 0.5 * t * t * (g @ sigma.solve(g))
    return mu_new, SPDMatrix(symmetrize(sig_new))


def run_tran(family: GaussianFull, model, config: OptimizerConfig, metrics=None):
    rng = RngStream(config.seed, STREAM_OPTIMIZER)
    trace = _TraceBuilder(model, config, metrics)
    kwargs = _grad_kwargs(family, config)
    trace.maybe_record(0, family)
    for it in range(1, config.max_iters + 1):
        start = time.perf_counter()
        batch = model.minibatch(rng, config.batch_size) if config.batch_size else None
        est = family.natural_gradient(model, rng, config.n_mc, batch=batch, **kwargs)
        sigma = SPDMatrix(family.prec.inverse())
        grad_mu = est.aux["grad_mean"]
        # dL/dSigma = (hess_mean - S) / 2 in covariance coordinates
        grad_sigma = 0.5 * (est.aux["hess_mean"] - family.prec.data)
        mu_new, sigma_new = tran_step(family.mu, sigma, grad_mu, grad_sigma, config.step_size)
        family = GaussianFull(mu_new, SPDMatrix(sigma_new.inverse()))
        trace.add_time(time.perf_counter() - start)
        trace.maybe_record(it, family)
    return family, trace.records


METHODS = {
    "iblr": run_iblr,
    "blr": run_blr,
    "tran": run_tran,
}


# ---------------------------------------------------------------------------
# Estimator-style wrappers


class _FitMixin(BaseEstimator):
    """Hyperparameters live on the estimator; fit(model) runs the driver and
    stores the fitted posterior and trace."""

    def _config(self) -> OptimizerConfig:
        params = {k: v for k, v in self.get_params().items() if k in OptimizerConfig.__dataclass_fields__}
        return OptimizerConfig(**params)

    def fit(self, model, family_init=None, metrics=None):
        posterior, trace = self._run(model, family_init, metrics)
        self.posterior_ = posterior
        self.trace_ = trace
        self.n_iter_ = trace[-1].iteration if trace else 0
        return self

    def sample(self, rng: RngStream, n: int):
        return self.posterior_.sample(rng, n)


class IBLREstimator(_FitMixin):
    def __init__(self, step_size=0.1, max_iters=1000, n_mc=1, estimator="rep",
                 expectation="mc", gh_nodes=20, batch_size=None, seed=0,
                 trace_every=None, elbo_samples=100, metric_cadence=None, timing="none"):
        self.step_size = step_size
        self.max_iters = max_iters
        self.n_mc = n_mc
        self.estimator = estimator
        self.expectation = expectation
        self.gh_nodes = gh_nodes
        self.batch_size = batch_size
        self.seed = seed
        self.trace_every = trace_every
        self.elbo_samples = elbo_samples
        self.metric_cadence = metric_cadence
        self.timing = timing

    def _run(self, model, family_init, metrics):
        if family_init is None:
            raise ConfigError("family init is required")
        return run_iblr(family_init, model, self._config(), metrics)


class BLREstimator(IBLREstimator):
    def __init__(self, step_size=0.1, max_iters=1000, n_mc=1, estimator="rep",
                 expectation="mc", gh_nodes=20, batch_size=None, seed=0,
                 trace_every=None, elbo_samples=100, metric_cadence=None, timing="none",
                 line_search_shrink=0.5, line_search_max=30):
        super().__init__(step_size, max_iters, n_mc, estimator, expectation, gh_nodes,
                         batch_size, seed, trace_every, elbo_samples, metric_cadence, timing)
        self.line_search_shrink = line_search_shrink
        self.line_search_max = line_search_max

    def _run(self, model, family_init, metrics):
        if family_init is None:
            raise ConfigError("family init is required")
        return run_blr(family_init, model, self._config(), metrics)


class TranEstimator(IBLREstimator):
    def _run(self, model, family_init, metrics):
        if family_init is None:
            raise ConfigError("family init is required")
        return run_tran(family_init, model, self._config(), metrics)


class AdamLikeEstimator(_FitMixin):
    def __init__(self, step_size=0.001, max_iters=1000, r1=0.9, r2=0.999,
                 prior_precision=1.0, train_size=None, batch_size=None, seed=0,
                 s_hat0=1.0, trace_every=None, elbo_samples=100, metric_cadence=None,
                 timing="none"):
        self.step_size = step_size
        self.max_iters = max_iters
        self.r1 = r1
        self.r2 = r2
        self.prior_precision = prior_precision
        self.train_size = train_size
        self.batch_size = batch_size
        self.seed = seed
        self.s_hat0 = s_hat0
        self.trace_every = trace_every
        self.elbo_samples = elbo_samples
        self.metric_cadence = metric_cadence
        self.timing = timing

    def _run(self, model, family_init, metrics):
        mu0 = None if family_init is None else family_init.mu
        return run_adam_like(model, self._config(), metrics, mu0=mu0, s_hat0=self.s_hat0)


class VOGNEstimator(AdamLikeEstimator):
    def _run(self, model, family_init, metrics):
        mu0 = None if family_init is None else family_init.mu
        return run_vogn(model, self._config(), metrics, mu0=mu0, s_hat0=self.s_hat0)
