"""Command-line harness: configure and run experiments, run the verification
suites, and export density grids for plotting.

Commands:
    iblr run    --config exp.ini [--set section.key=value ...]
    iblr verify --suite {special-functions,christoffel,retraction,theorems,counterexample,all}
    iblr grid   --model banana --posterior posterior.json --out grid.csv --res 101
    iblr sweep  --config exp.ini --seeds 0..4

Config files are INI ("key = value" under [section] headers); every run is a
pure function of the config and its seed.  Exit codes: 0 success, 2 bad
configuration (the message names the field), 3 runtime failure; verify exits
1 when a check fails.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from iblr import __version__
from iblr.errors import ConfigError, DimensionUnsupported, IBLRError, UnknownDensity
from iblr.families import (
    ExponentialApprox,
    GammaApprox,
    GaussianDiag,
    GaussianFull,
    MixtureOfGaussians,
    SkewGaussian,
    family_from_json,
    family_to_json,
)
from iblr.linalg import SPDMatrix
from iblr.metrics import mmd_rbf, test_log_loss
from iblr.models import (
    BayesLinReg,
    BayesLogReg,
    ConjugateGammaModel,
    TOY_DENSITY_NAMES,
    gamma_factor_synthetic,
    load_dataset,
    synthetic_classification,
    synthetic_regression,
    toy_density,
)
from iblr.optimizers import OptimizerConfig, run_adam_like, run_blr, run_iblr, run_tran, run_vogn
from iblr.rng import RngStream
from iblr.verify import run_suite

STREAM_DATA = 0
STREAM_INIT = 1
STREAM_TRUTH = 4
STREAM_POSTERIOR_SAMPLES = 5

_FLOAT_FMT = "%.17g"


def _fmt(value: float) -> str:
    return _FLOAT_FMT % value


# ---------------------------------------------------------------------------
# Config handling


def read_config(path: str, overrides: list[str] | None = None) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    loaded = parser.read(path)
    if not loaded:
        raise ConfigError(f"config file not found: {path}")
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        section, field = key.split(".", 1)
        if section not in parser:
            parser.add_section(section)
        parser.set(section.strip(), field.strip(), value.strip())
    return parser


def _get(cfg, section, key, default=None, cast=str):
    if section in cfg and key in cfg[section]:
        raw = cfg[section][key]
        try:
            if cast is bool:
                return raw.strip().lower() in ("1", "true", "yes", "on")
            return cast(raw)
        except ValueError:
            raise ConfigError(f"{section}.{key}: cannot parse {raw!r}") from None
    return default


def build_model(cfg, seed: int):
    name = _get(cfg, "model", "name")
    if name is None:
        raise ConfigError("model.name is required")
    rng = RngStream(seed, STREAM_DATA)
    if name == "bayes_linreg":
        dataset = _dataset_from_config(cfg, rng, regression=True)
        return BayesLinReg(
            dataset,
            noise_var=_get(cfg, "model", "noise_var", 1.0, float),
            prior_precision=_get(cfg, "model", "prior_precision", 1.0, float),
        )
    if name == "bayes_logreg":
        dataset = _dataset_from_config(cfg, rng, regression=False)
        return BayesLogReg(dataset, prior_precision=_get(cfg, "model", "prior_precision", 1.0, float))
    if name == "gamma_factor":
        return gamma_factor_synthetic(
            rng,
            1,
            d=_get(cfg, "model", "d", 4, int),
            k_factors=_get(cfg, "model", "k_factors", 1, int),
            a0=_get(cfg, "model", "a0", 2.0, float),
            b0=_get(cfg, "model", "b0", 1.0, float),
        )
    if name == "conjugate_gamma":
        return ConjugateGammaModel(_get(cfg, "model", "shape", 3.0, float),
                                   _get(cfg, "model", "rate", 2.0, float))
    if name in TOY_DENSITY_NAMES:
        overrides = {}
        if cfg.has_section("model"):
            overrides = {k: v for k, v in cfg["model"].items() if k != "name"}
        return toy_density(name, **overrides)
    raise ConfigError(f"model.name: unknown model {name!r}")


def _dataset_from_config(cfg, rng, regression: bool):
    path = _get(cfg, "model", "dataset")
    train_size = _get(cfg, "model", "train_size", None, int)
    if path:
        return load_dataset(
            path,
            fmt=_get(cfg, "model", "format", "csv"),
            header=_get(cfg, "model", "header", False, bool),
            standardize=_get(cfg, "model", "standardize", False, bool),
            train_size=train_size,
        )
    n = _get(cfg, "model", "synthetic_n", 400, int)
    d = _get(cfg, "model", "synthetic_d", 8, int)
    if regression:
        return synthetic_regression(rng, n, d, noise_sd=_get(cfg, "model", "noise_sd", 1.0, float),
                                    train_size=train_size)
    return synthetic_classification(rng, n, d, separation=_get(cfg, "model", "separation", 2.0, float),
                                    train_size=train_size)


def build_family(cfg, model, seed: int):
    name = _get(cfg, "family", "name")
    if name is None:
        raise ConfigError("family.name is required")
    rng = RngStream(seed, STREAM_INIT)
    dim = _get(cfg, "family", "dim", getattr(model, "dim", 1), int)
    prec0 = _get(cfg, "family", "init_precision", 1.0, float)
    if name == "gaussian_full":
        return GaussianFull(np.zeros(dim), SPDMatrix(prec0 * np.eye(dim)))
    if name == "gaussian_diag":
        return GaussianDiag(np.zeros(dim), np.full(dim, prec0))
    if name == "gamma":
        return GammaApprox(_get(cfg, "family", "init_lam1", 1.0, float),
                           _get(cfg, "family", "init_lam2", 1.0, float))
    if name == "exponential":
        return ExponentialApprox(_get(cfg, "family", "init_lam", 1.0, float))
    if name == "inverse_gaussian":
        from iblr.families import InverseGaussianApprox

        return InverseGaussianApprox(_get(cfg, "family", "init_lam1", 1.0, float),
                                     _get(cfg, "family", "init_lam2", 1.0, float))
    if name == "mog":
        k = _get(cfg, "family", "k", 2, int)
        spread = _get(cfg, "family", "init_mean_scale", 1.0, float)
        mus = rng.gen.normal(0.0, spread, size=(k, dim))
        precs = tuple(SPDMatrix(prec0 * np.eye(dim)) for _ in range(k))
        frozen = _get(cfg, "family", "weights_frozen", True, bool)
        return MixtureOfGaussians(np.zeros(max(k - 1, 0)), mus, precs, weights_frozen=frozen)
    if name == "skew_gaussian":
        return SkewGaussian(np.zeros(2 * dim), SPDMatrix(prec0 * np.eye(dim)))
    raise ConfigError(f"family.name: unknown family {name!r}")


def build_optimizer_config(cfg, model, seed: int) -> OptimizerConfig:
    return OptimizerConfig(
        step_size=_get(cfg, "optimizer", "step_size", 0.1, float),
        max_iters=_get(cfg, "optimizer", "max_iters", 1000, int),
        n_mc=_get(cfg, "optimizer", "n_mc", 1, int),
        estimator=_get(cfg, "optimizer", "estimator", "rep"),
        expectation=_get(cfg, "optimizer", "expectation", "mc"),
        gh_nodes=_get(cfg, "optimizer", "gh_nodes", 20, int),
        line_search_shrink=_get(cfg, "optimizer", "line_search_shrink", 0.5, float),
        line_search_max=_get(cfg, "optimizer", "line_search_max", 30, int),
        r1=_get(cfg, "optimizer", "r1", 0.9, float),
        r2=_get(cfg, "optimizer", "r2", 0.999, float),
        prior_precision=_get(cfg, "optimizer", "prior_precision",
                             getattr(model, "prior_precision", 1.0), float),
        train_size=_get(cfg, "optimizer", "train_size", getattr(model, "n_examples", None), int),
        batch_size=_get(cfg, "optimizer", "batch_size", None, int),
        seed=seed,
        trace_every=_get(cfg, "optimizer", "trace_every", None, int),
        elbo_samples=_get(cfg, "optimizer", "elbo_samples", 100, int),
        metric_cadence=_get(cfg, "metrics", "cadence", None, int),
        timing=_get(cfg, "output", "timing", "none"),
    )


def build_metrics(cfg, model, seed: int):
    names = _get(cfg, "metrics", "names", "")
    metric_fns = {}
    if not names:
        return metric_fns
    requested = [n.strip() for n in names.split(",") if n.strip()]
    for name in requested:
        if name == "elbo_gap":
            solution = model.exact_solution()
            if solution is None or solution[1] is None:
                raise ConfigError("metrics.names: elbo_gap needs a model with a closed-form optimum")
            _, l_star = solution

            def gap(family, iteration, l_star=l_star):
                return model.elbo_exact(family.mu, family.prec) - l_star

            metric_fns["elbo_gap"] = gap
        elif name == "mmd":
            n_truth = _get(cfg, "metrics", "mmd_truth_samples", 2000, int)
            n_approx = _get(cfg, "metrics", "mmd_approx_samples", 2000, int)
            if hasattr(model, "sample_truth"):
                truth = model.sample_truth(RngStream(seed, STREAM_TRUTH), n_truth)
            else:
                solution = model.exact_solution()
                if solution is None:
                    raise ConfigError("metrics.names: mmd needs ground-truth samples")
                truth = solution[0].sample(RngStream(seed, STREAM_TRUTH), n_truth)

            def mmd(family, iteration, truth=truth, n_approx=n_approx):
                approx = family.sample(RngStream(seed, 700 + iteration), n_approx)
                return mmd_rbf(np.atleast_2d(approx).reshape(n_approx, -1), truth).value

            metric_fns["mmd"] = mmd
        elif name == "test_log_loss":
            data = getattr(model, "dataset", None)
            if data is None or data.test_idx.size == 0:
                raise ConfigError("metrics.names: test_log_loss needs a dataset with a test split")
            n_post = _get(cfg, "metrics", "log_loss_samples", 100, int)

            def loss(family, iteration, n_post=n_post):
                return test_log_loss(
                    family, model, data.x_test, data.y_test,
                    RngStream(seed, 800 + iteration), n_post,
                ).value

            metric_fns["test_log_loss"] = loss
        else:
            raise ConfigError(f"metrics.names: unknown metric {name!r}")
    return metric_fns


# ---------------------------------------------------------------------------
# Output writers


def write_trace(records, metric_names, path: Path):
    columns = ["iter", "elapsed_ms", "neg_elbo", "neg_elbo_se"] + list(metric_names) + [
        "line_search_backtracks",
        "feasibility_violations",
    ]
    lines = [",".join(columns)]
    for rec in records:
        row = [
            str(rec.iteration),
            _fmt(rec.elapsed_ms),
            _fmt(rec.neg_elbo),
            _fmt(rec.neg_elbo_se),
        ]
        for name in metric_names:
            row.append(_fmt(rec.metrics[name]) if name in rec.metrics else "")
        row.append(str(rec.line_search_backtracks))
        row.append(str(rec.feasibility_violations))
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def write_samples(family, seed: int, n: int, path: Path):
    z = family.sample(RngStream(seed, STREAM_POSTERIOR_SAMPLES), n)
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[0] == 1 and n > 1:
        z = z.T
    header = ",".join(f"z{i}" for i in range(z.shape[1]))
    lines = [header] + [",".join(_fmt(v) for v in row) for row in z]
    path.write_text("\n".join(lines) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(cfg, out_dir: Path, started: str, files: list[Path]):
    manifest = {
        "config": {s: dict(cfg[s]) for s in cfg.sections()},
        "version": __version__,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "files": {f.name: _sha256(f) for f in files},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# Commands


def cmd_run(args) -> int:
    cfg = read_config(args.config, args.set)
    seed = _get(cfg, "run", "seed", None, int)
    if seed is None:
        raise ConfigError("run.seed is required (wall-clock seeding is not supported)")
    started = datetime.now(timezone.utc).isoformat()
    model = build_model(cfg, seed)
    method = _get(cfg, "optimizer", "method", "iblr")
    config = build_optimizer_config(cfg, model, seed)
    metric_fns = build_metrics(cfg, model, seed)

    if method in ("iblr", "blr", "tran"):
        family = build_family(cfg, model, seed)
        runner = {"iblr": run_iblr, "blr": run_blr, "tran": run_tran}[method]
        posterior, records = runner(family, model, config, metric_fns)
    elif method == "adam_like":
        posterior, records = run_adam_like(model, config, metric_fns,
                                           s_hat0=_get(cfg, "optimizer", "s_hat0", 1.0, float))
    elif method == "vogn":
        posterior, records = run_vogn(model, config, metric_fns,
                                      s_hat0=_get(cfg, "optimizer", "s_hat0", 1.0, float))
    else:
        raise ConfigError(f"optimizer.method: unknown method {method!r}")

    out_dir = Path(os.environ.get("IBLR_OUT") or _get(cfg, "output", "dir", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    trace_path = out_dir / "trace.csv"
    write_trace(records, list(metric_fns), trace_path)
    files.append(trace_path)
    posterior_path = out_dir / "posterior.json"
    posterior_path.write_text(json.dumps(family_to_json(posterior)) + "\n")
    files.append(posterior_path)
    if _get(cfg, "output", "samples", False, bool):
        samples_path = out_dir / "samples.csv"
        write_samples(posterior, seed, _get(cfg, "output", "n_samples", 2000, int), samples_path)
        files.append(samples_path)
    write_manifest(cfg, out_dir, started, files)
    print(f"wrote {', '.join(f.name for f in files)} to {out_dir}")
    return 0


def cmd_verify(args) -> int:
    try:
        checks = run_suite(args.suite, seed=args.seed)
    except UnknownDensity as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    width = max(len(name) for name, _, _ in checks)
    failed = []
    for name, passed, detail in checks:
        status = "PASS" if passed else "FAIL"
        print(f"{status}  {name:<{width}}  {detail}")
        if not passed:
            failed.append(name)
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    print(f"all {len(checks)} checks passed")
    return 0


def _load_samples_csv(path: str) -> np.ndarray:
    rows = []
    with open(path) as fh:
        header = fh.readline()
        del header
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    return np.asarray(rows)


def _kde(points: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Gaussian kernel density with Scott's bandwidth n^(-1/5) * sd."""
    n = points.size
    bw = max(np.std(points) * n ** (-0.2), 1e-12)
    diff = (grid[:, None] - points[None, :]) / bw
    return np.exp(-0.5 * diff**2).sum(axis=1) / (n * bw * np.sqrt(2.0 * np.pi))


def cmd_grid(args) -> int:
    approx = None
    if args.posterior:
        approx = family_from_json(json.loads(Path(args.posterior).read_text()))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.marginals:
        if args.target_samples is None:
            raise ConfigError("grid.target_samples is required for marginal export")
        truth = _load_samples_csv(args.target_samples)
        if args.approx_samples:
            approx_pts = _load_samples_csv(args.approx_samples)
        elif approx is not None:
            approx_pts = np.atleast_2d(approx.sample(RngStream(args.seed, 6), args.n_samples))
            if approx_pts.shape[0] == 1:
                approx_pts = approx_pts.T
        else:
            raise ConfigError("grid.posterior or grid.approx_samples is required")
        if truth.shape[1] != approx_pts.shape[1]:
            raise DimensionUnsupported("target and approximation dimensions differ")
        lines = ["coord,x,target_marginal,approx_marginal"]
        for coord in range(truth.shape[1]):
            lo = min(truth[:, coord].min(), approx_pts[:, coord].min())
            hi = max(truth[:, coord].max(), approx_pts[:, coord].max())
            pad = 0.05 * (hi - lo + 1e-12)
            xs = np.linspace(lo - pad, hi + pad, args.res)
            t_dens = _kde(truth[:, coord], xs)
            a_dens = _kde(approx_pts[:, coord], xs)
            for x, tv, av in zip(xs, t_dens, a_dens):
                lines.append(f"{coord},{_fmt(x)},{_fmt(tv)},{_fmt(av)}")
        out.write_text("\n".join(lines) + "\n")
        print(f"wrote {out}")
        return 0
    model = toy_density(args.model) if args.model in TOY_DENSITY_NAMES else None
    if model is None:
        raise ConfigError(f"grid.model: unknown density {args.model!r}")
    if model.dim != 2:
        raise DimensionUnsupported("density grids need a 2-D target; use --marginals instead")
    if approx is None:
        raise ConfigError("grid.posterior is required")
    approx_dim = np.atleast_2d(np.asarray(approx.sample(RngStream(0, 6), 1))).shape[-1]
    if approx_dim != 2:
        raise DimensionUnsupported(
            f"grid.posterior: approximation is {approx_dim}-D, density grids need 2-D"
        )
    xmin, xmax, ymin, ymax = args.region
    xs = np.linspace(xmin, xmax, args.res)
    ys = np.linspace(ymin, ymax, args.res)
    lines = ["x,y,target_logdensity,approx_logdensity"]
    for x in xs:
        pts = np.stack([np.full(args.res, x), ys], axis=1)
        target_vals = -model.loss_many(pts)
        approx_vals = np.atleast_1d(approx.log_density(pts))
        for y, tv, av in zip(ys, target_vals, approx_vals):
            lines.append(f"{_fmt(x)},{_fmt(y)},{_fmt(tv)},{_fmt(av)}")
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {out}")
    return 0


def cmd_sweep(args) -> int:
    if ".." not in args.seeds:
        raise ConfigError("sweep.seeds must look like a..b")
    lo_s, hi_s = args.seeds.split("..", 1)
    try:
        lo, hi = int(lo_s), int(hi_s)
    except ValueError:
        raise ConfigError(f"sweep.seeds: cannot parse {args.seeds!r}") from None
    if hi < lo:
        raise ConfigError("sweep.seeds range is empty")
    base_out = os.environ.get("IBLR_OUT")
    for seed in range(lo, hi + 1):
        cfg = read_config(args.config, args.set)
        out_dir = Path(base_out or _get(cfg, "output", "dir", "out")) / f"seed_{seed}"
        overrides = list(args.set or []) + [
            f"run.seed={seed}",
            f"output.dir={out_dir}",
        ]
        run_args = argparse.Namespace(config=args.config, set=overrides)
        env_backup = os.environ.pop("IBLR_OUT", None)
        try:
            code = cmd_run(run_args)
        finally:
            if env_backup is not None:
                os.environ["IBLR_OUT"] = env_backup
        if code != 0:
            return code
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iblr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p_run.set_defaults(fn=cmd_run)

    p_verify = sub.add_parser("verify", help="run a verification suite")
    p_verify.add_argument("--suite", required=True)
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.set_defaults(fn=cmd_verify)

    p_grid = sub.add_parser("grid", help="export density grids or marginal curves")
    p_grid.add_argument("--model", default=None)
    p_grid.add_argument("--posterior", default=None)
    p_grid.add_argument("--out", required=True)
    p_grid.add_argument("--res", type=int, default=101)
    p_grid.add_argument("--region", type=float, nargs=4, default=[-3.0, 3.0, -3.0, 3.0],
                        metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    p_grid.add_argument("--marginals", action="store_true")
    p_grid.add_argument("--target-samples", default=None)
    p_grid.add_argument("--approx-samples", default=None)
    p_grid.add_argument("--n-samples", type=int, default=2000)
    p_grid.add_argument("--seed", type=int, default=0)
    p_grid.set_defaults(fn=cmd_grid)

    p_sweep = sub.add_parser("sweep", help="run one config across a seed range")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--seeds", required=True, metavar="A..B")
    p_sweep.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p_sweep.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, UnknownDensity, DimensionUnsupported) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except IBLRError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
