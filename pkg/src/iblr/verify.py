"""Self-check suites behind the `iblr verify` command.

Each suite returns (name, passed, detail) rows.  The checks cross analytic
formulas against independent routes: finite differences of the log-partition,
first differences of the Fisher displays, Monte-Carlo Christoffel estimates,
exact matrix-exponential geodesics, and the closed-form feasibility
identities.
"""

from __future__ import annotations

import numpy as np

from iblr.blocks import BlockedPoint, BlockedTangent, PositiveScalar, RealVector, SPD, retraction_step
from iblr.errors import UnknownDensity
from iblr.families import (
    ExponentialApprox,
    GammaApprox,
    GaussianDiag,
    GaussianFull,
    InverseGaussianApprox,
    from_blocked,
)
from iblr.geometry import (
    ORACLES,
    blockwise_step_univariate,
    christoffel_a3,
    christoffel_fd_of_fim,
    christoffel_mc,
    covariance_geodesic_exact,
    fim_fd,
    fim_quadrature,
    gaussian_geodesic_exact,
    raise_first_kind,
    song_step_univariate,
    theorem_half_form,
)
from iblr.linalg import SPDMatrix, min_eigenvalue, random_spd, random_symmetric, symmetrize
from iblr.rng import RngStream
from iblr.special import digamma, exp_e1, log_gamma, log_mills_ratio, tetragamma, trigamma

Check = tuple[str, bool, str]

CHRISTOFFEL_POINTS = {
    "gamma": np.array([2.0, 3.0]),
    "exponential": np.array([2.0]),
    "inverse_gaussian": np.array([4.0, 2.0]),
    "univ_gaussian_precision": np.array([0.0, 1.0]),
}


def _check(name: str, passed: bool, detail: str) -> Check:
    return name, bool(passed), detail


def special_functions_suite(seed: int = 0) -> list[Check]:
    del seed
    checks = []
    euler = 0.5772156649015328606
    checks.append(_check("digamma(1) = -euler", abs(digamma(1.0) + euler) < 1e-10,
                         f"value {digamma(1.0):.12f}"))
    checks.append(_check("trigamma(1) = pi^2/6", abs(trigamma(1.0) - np.pi**2 / 6) < 1e-10,
                         f"value {trigamma(1.0):.12f}"))
    rec = all(abs(digamma(x + 1) - digamma(x) - 1.0 / x) < 1e-11 for x in (0.5, 2.0, 7.3))
    checks.append(_check("digamma recurrence", rec, "x in {0.5, 2, 7.3}"))
    rec_lg = all(abs(log_gamma(x + 1) - log_gamma(x) - np.log(x)) < 1e-11 for x in (1.5, 4.0))
    checks.append(_check("log_gamma recurrence", rec_lg, "x in {1.5, 4}"))
    checks.append(_check("log_gamma(0.5) = log sqrt(pi)",
                         abs(log_gamma(0.5) - 0.5 * np.log(np.pi)) < 1e-10,
                         f"value {log_gamma(0.5):.12f}"))
    h = 1e-4
    fd_ok = all(
        abs((digamma(x + h) - digamma(x - h)) / (2 * h) - trigamma(x)) < 1e-5
        and abs((trigamma(x + h) - trigamma(x - h)) / (2 * h) - tetragamma(x)) < 1e-5
        for x in (0.7, 2.0, 11.0)
    )
    checks.append(_check("polygamma FD ladder", fd_ok, "central differences at h=1e-4"))
    xs = np.array([0.03, 0.5, 1.0, 2.7, 9.0, 40.0, 100.5, 150.0, 1e4])
    bounds = all(1.0 / (x + 1.0) < exp_e1(x) < 1.0 / x for x in xs)
    checks.append(_check("exp_e1 bracketing 1/(x+1) < f < 1/x", bounds, "9-point sweep"))
    asym = 1.0
    term = 1.0
    for n in range(1, 7):
        term *= -n / 150.0
        asym += term
    asym /= 150.0
    checks.append(_check("exp_e1(150) matches asymptotic sum",
                         abs(exp_e1(150.0) - asym) < 1e-6 * asym, f"value {exp_e1(150.0):.8e}"))
    mills0 = np.log(np.sqrt(np.pi / 2.0))
    checks.append(_check("log Mills ratio at 0", abs(log_mills_ratio(0.0) - mills0) < 1e-10,
                         f"value {log_mills_ratio(0.0):.12f}"))
    import math

    x = 5.0
    direct = np.log(0.5 * math.erfc(-x / np.sqrt(2.0))) + 0.5 * x * x + 0.5 * np.log(2 * np.pi)
    checks.append(_check("log Mills ratio at 5 vs erfc", abs(log_mills_ratio(5.0) - direct) < 1e-9,
                         f"value {log_mills_ratio(5.0):.12f}"))
    checks.append(_check("log Mills ratio finite at -30", np.isfinite(log_mills_ratio(-30.0)),
                         f"value {log_mills_ratio(-30.0):.6f}"))
    return checks


def christoffel_suite(seed: int = 0, mc_samples: int = 1_000_000) -> list[Check]:
    checks = []
    for name, coords in CHRISTOFFEL_POINTS.items():
        oracle = ORACLES[name]()
        a3 = christoffel_a3(oracle, coords)
        fd = christoffel_fd_of_fim(oracle.fim, coords)
        worst = 0.0
        for sl in oracle.block_slices:
            block_a3 = a3[sl, sl, sl]
            block_fd = fd[sl, sl, sl]
            scale = np.maximum(np.abs(block_a3), 1e-3)
            worst = max(worst, float(np.max(np.abs(block_a3 - block_fd) / scale)))
        checks.append(_check(f"{name}: analytic vs FD-of-FIM", worst < 1e-6,
                             f"max rel err {worst:.2e}"))
        rng = RngStream(seed, 300 + len(name))
        mc, se = christoffel_mc(oracle, coords, mc_samples, rng)
        ok = True
        detail = []
        for sl in oracle.block_slices:
            i = sl.start
            err = abs(mc[i, i, i] - a3[i, i, i])
            lim = 3.0 * se[i, i, i] + 1e-12
            ok = ok and err <= lim
            detail.append(f"block {i}: |err|={err:.2e} vs 3SE={lim:.2e}")
        checks.append(_check(f"{name}: analytic vs MC ({mc_samples:g} draws)", ok, "; ".join(detail)))
    # the (mean, sdev) table entries, raised from the MC first kind
    oracle = ORACLES["univ_gaussian_musigma"]()
    coords = np.array([0.0, 1.0])
    rng = RngStream(seed, 399)
    mc, se = christoffel_mc(oracle, coords, max(mc_samples // 5, 100_000), rng)
    second = raise_first_kind(mc, oracle.fim(coords))
    ok = abs(second[1, 1, 1] - (-1.0)) < 3.0 * se[1, 1, 1] * 0.5 + 2e-3
    checks.append(_check("(mean, sdev) raised sigma-entry = -1/sigma", ok,
                         f"value {second[1, 1, 1]:.4f}"))
    return checks


def _random_family(rng: RngStream, which: str):
    if which == "gamma":
        return GammaApprox(float(rng.gen.uniform(0.3, 5.0)), float(rng.gen.uniform(0.3, 5.0)))
    if which == "exponential":
        return ExponentialApprox(float(rng.gen.uniform(0.3, 5.0)))
    if which == "inverse_gaussian":
        return InverseGaussianApprox(float(rng.gen.uniform(0.3, 5.0)), float(rng.gen.uniform(0.3, 5.0)))
    if which == "gaussian_diag":
        return GaussianDiag(rng.gen.standard_normal(3), rng.gen.uniform(0.2, 3.0, 3))
    d = int(rng.gen.integers(2, 5))
    return GaussianFull(rng.gen.standard_normal(d), random_spd(rng, d, eps=0.2))


def _random_tangent(rng: RngStream, point: BlockedPoint) -> BlockedTangent:
    values = []
    for c, _ in point.blocks:
        if isinstance(c, RealVector):
            values.append(rng.gen.normal(0.0, 2.0, size=c.dim))
        elif isinstance(c, PositiveScalar):
            values.append(float(rng.gen.normal(0.0, 3.0)))
        else:
            values.append(random_symmetric(rng, c.dim, 2.0))
    return BlockedTangent(values)


def retraction_suite(seed: int = 0, trials: int = 1000) -> list[Check]:
    checks = []
    rng = RngStream(seed, 400)
    fam = _random_family(rng, "gaussian_full")
    point = fam.blocked_point()
    tangent = _random_tangent(rng, point)
    gamma = fam.christoffel_contraction()
    same = retraction_step(point, tangent, 0.0, gamma)
    ok = np.array_equal(same.blocks[0][1], point.blocks[0][1]) and np.array_equal(
        same.blocks[1][1].data, point.blocks[1][1].data
    )
    checks.append(_check("retraction at t=0 returns the point", ok, "full Gaussian probe"))
    h = 1e-5
    plus = retraction_step(point, tangent, h, gamma)
    minus = retraction_step(point, tangent, -h, gamma)
    vel = (plus.blocks[1][1].data - minus.blocks[1][1].data) / (2 * h)
    rel = np.max(np.abs(vel + tangent.values[1])) / max(1.0, np.max(np.abs(tangent.values[1])))
    checks.append(_check("initial velocity equals -tangent", rel < 1e-6, f"rel err {rel:.2e}"))
    families = ["gamma", "exponential", "inverse_gaussian", "gaussian_diag", "gaussian_full"]
    failures = 0
    for i in range(trials):
        which = families[i % len(families)]
        fam = _random_family(rng, which)
        point = fam.blocked_point()
        tangent = _random_tangent(rng, point)
        t = float(rng.gen.uniform(0.0, 2.0)) + 1e-6
        try:
            new_point = retraction_step(point, tangent, t, fam.christoffel_contraction())
            from_blocked(fam.kind, new_point)
        except Exception:  # noqa: BLE001 - any escape is a failure to report
            failures += 1
    checks.append(_check("feasibility sweep across families", failures == 0,
                         f"{trials - failures}/{trials} feasible"))
    return checks


def theorems_suite(seed: int = 0, trials: int = 1000) -> list[Check]:
    checks = []
    rng = RngStream(seed, 500)
    # precision update stays PD and matches the half form
    worst_identity = 0.0
    pd_fail = 0
    dims = [2, 5, 10]
    steps = [0.1, 0.5, 1.0, 2.0]
    for i in range(trials):
        d = dims[i % len(dims)]
        t = steps[(i // len(dims)) % len(steps)]
        s = random_spd(rng, d, eps=0.3)
        g = random_symmetric(rng, d, scale=float(rng.gen.uniform(0.3, 3.0)))
        direct = s.data - t * g + 0.5 * t * t * (g @ s.solve(g))
        half = theorem_half_form(s, g, t)
        scale = max(1.0, float(np.max(np.abs(direct))))
        worst_identity = max(worst_identity, float(np.max(np.abs(direct - half))) / scale)
        if min_eigenvalue(symmetrize(direct)) <= 0:
            pd_fail += 1
    checks.append(_check("precision update positive definite", pd_fail == 0,
                         f"{trials - pd_fail}/{trials} trials PD"))
    checks.append(_check("half-form identity within 1e-10", worst_identity <= 1e-10,
                         f"max rel err {worst_identity:.2e}"))
    # positive-scalar families
    fails = 0
    for i in range(trials):
        which = ["gamma", "exponential", "inverse_gaussian", "gaussian_diag"][i % 4]
        fam = _random_family(rng, which)
        point = fam.blocked_point()
        tangent = _random_tangent(rng, point)
        t = float(rng.gen.uniform(1e-3, 2.0))
        try:
            retraction_step(point, tangent, t, fam.christoffel_contraction())
        except Exception:  # noqa: BLE001
            fails += 1
    checks.append(_check("positive-block updates stay positive", fails == 0,
                         f"{trials - fails}/{trials} trials positive"))
    # geodesic truncation orders
    ratios_r, ratios_n = [], []
    for _ in range(20):
        s = random_spd(rng, 3)
        g = random_symmetric(rng, 3)
        g *= 0.6 / np.linalg.norm(np.linalg.solve(s.data, g), 2)
        errs_r, errs_n = [], []
        for t in (0.4, 0.2, 0.1):
            geo = gaussian_geodesic_exact(s, g, t).data
            retr = s.data - t * g + 0.5 * t * t * symmetrize(g @ s.solve(g))
            errs_r.append(np.max(np.abs(retr - geo)))
            errs_n.append(np.max(np.abs(s.data - t * g - geo)))
        ratios_r += [errs_r[0] / errs_r[1], errs_r[1] / errs_r[2]]
        ratios_n += [errs_n[0] / errs_n[1], errs_n[1] / errs_n[2]]
    ok_r = all(6.5 <= r <= 9.5 for r in ratios_r)
    ok_n = all(3.4 <= r <= 4.6 for r in ratios_n)
    checks.append(_check("second-order update is O(t^3) from the geodesic", ok_r,
                         f"ratios in [{min(ratios_r):.2f}, {max(ratios_r):.2f}]"))
    checks.append(_check("first-order update is O(t^2) from the geodesic", ok_n,
                         f"ratios in [{min(ratios_n):.2f}, {max(ratios_n):.2f}]"))
    # covariance/precision geodesics invert each other
    s = random_spd(rng, 3)
    g_s = random_symmetric(rng, 3)
    sigma = SPDMatrix(s.inverse())
    g_sigma = -symmetrize(sigma.data @ g_s @ sigma.data)
    err = np.max(np.abs(covariance_geodesic_exact(sigma, g_sigma, 0.3).data
                        - gaussian_geodesic_exact(s, g_s, 0.3).inverse()))
    checks.append(_check("covariance geodesic inverts precision geodesic", err <= 1e-8,
                         f"max abs err {err:.2e}"))
    # block-diagonality of the Fisher matrix (quadrature oracle)
    worst_cross = 0.0
    for name in ("gamma", "inverse_gaussian", "univ_gaussian_precision"):
        oracle = ORACLES[name]()
        coords = CHRISTOFFEL_POINTS[name] if name != "univ_gaussian_precision" else np.array([0.3, 1.4])
        f = fim_quadrature(oracle, coords)
        worst_cross = max(worst_cross, abs(float(f[0, 1])))
        block_err = max(
            float(np.max(np.abs(fim_fd(oracle.log_partition, coords, block=sl) - f[sl, sl])))
            for sl in oracle.block_slices
        )
        checks.append(_check(f"{name}: block Fisher matches log-partition Hessian",
                             block_err < 5e-5, f"max abs err {block_err:.2e}"))
    checks.append(_check("Fisher cross-block entries vanish", worst_cross <= 1e-6,
                         f"max |cross| {worst_cross:.2e}"))
    return checks


def counterexample_suite(seed: int = 0) -> list[Check]:
    checks = []
    (mu, sigma), feasible = song_step_univariate((0.0, 1.0), (3.0, 0.0), 1.0, "sigma")
    (mu_b, sigma_b), feasible_b = blockwise_step_univariate((0.0, 1.0), (3.0, 0.0), 1.0, "sigma")
    checks.append(_check(
        "pinned instance: full-symbol sdev vs block-wise sdev",
        (abs(sigma + 1.25) < 1e-12 and not feasible) and (abs(sigma_b - 1.0) < 1e-12 and feasible_b),
        f"full-symbol {sigma:+.4f} (infeasible), block-wise {sigma_b:+.4f} (feasible)",
    ))
    rng = RngStream(seed, 600)
    for kind in ("sigma", "variance"):
        song_viol = 0
        ours_viol = 0
        for _ in range(100):
            scale = float(rng.gen.uniform(0.05, 2.0))
            g = rng.gen.normal(0.0, 3.0, size=2)
            _, ok_song = song_step_univariate((0.0, scale), g, 1.0, kind)
            _, ok_ours = blockwise_step_univariate((0.0, scale), g, 1.0, kind)
            song_viol += not ok_song
            ours_viol += not ok_ours
        checks.append(_check(
            f"({kind}) random draws: full-symbol violates, block-wise never",
            song_viol >= 1 and ours_viol == 0,
            f"full-symbol violations {song_viol}/100, block-wise {ours_viol}/100",
        ))
    return checks


SUITES = {
    "special-functions": special_functions_suite,
    "christoffel": christoffel_suite,
    "retraction": retraction_suite,
    "theorems": theorems_suite,
    "counterexample": counterexample_suite,
}


def run_suite(name: str, seed: int = 0) -> list[Check]:
    if name == "all":
        out = []
        for suite in SUITES.values():
            out.extend(suite(seed))
        return out
    if name not in SUITES:
        raise UnknownDensity(f"unknown verification suite {name!r}")
    return SUITES[name](seed)
