import numpy as np
import pytest

from iblr.errors import StepTooLarge
from iblr.geometry import (
    ORACLES,
    blockwise_step_univariate,
    christoffel_a3,
    christoffel_fd_of_fim,
    christoffel_mc,
    exponential_oracle,
    fim_fd,
    fim_quadrature,
    gamma_oracle,
    gaussian_geodesic_exact,
    inverse_gaussian_oracle,
    raise_first_kind,
    song_step_univariate,
    theorem_half_form,
    univ_gaussian_musigma_oracle,
    univ_gaussian_precision_oracle,
)
from iblr.linalg import SPDMatrix, random_spd, random_symmetric, symmetrize
from iblr.rng import RngStream
from iblr.special import tetragamma, trigamma


class TestFimFd:
    def test_gamma_first_block(self):
        oracle = gamma_oracle()
        f = fim_fd(oracle.log_partition, [2.0, 3.0], block=slice(0, 1))
        assert f[0, 0] == pytest.approx(trigamma(2.0) - 0.5, abs=1e-7)
        assert f[0, 0] == pytest.approx(0.1449340668, abs=1e-7)

    def test_gamma_second_block(self):
        oracle = gamma_oracle()
        f = fim_fd(oracle.log_partition, [2.0, 3.0], block=slice(1, 2))
        assert f[0, 0] == pytest.approx(2.0 / 9.0, abs=1e-8)

    def test_inverse_gaussian_first_block(self):
        oracle = inverse_gaussian_oracle()
        f = fim_fd(oracle.log_partition, [4.0, 2.0], block=slice(0, 1))
        assert f[0, 0] == pytest.approx(1.0 / 16.0, abs=1e-8)

    def test_step_too_large(self):
        oracle = gamma_oracle()
        with pytest.raises(StepTooLarge):
            fim_fd(oracle.log_partition, [1e-5, 3.0], block=slice(0, 1), feasible=oracle.feasible)

    def test_symmetry(self):
        oracle = gamma_oracle()
        f = fim_fd(oracle.log_partition, [2.0, 3.0])
        np.testing.assert_allclose(f, f.T, atol=1e-6)


class TestFimQuadrature:
    @pytest.mark.parametrize(
        "factory", [gamma_oracle, inverse_gaussian_oracle, univ_gaussian_precision_oracle]
    )
    def test_block_diagonal_and_matches_display(self, factory):
        oracle = factory()
        rng = RngStream(41, 0)
        for _ in range(3):
            if oracle.name == "univ_gaussian_precision":
                coords = np.array([rng.gen.uniform(-1, 1), rng.gen.uniform(0.5, 3.0)])
            else:
                coords = rng.gen.uniform(0.5, 4.0, size=2)
            f = fim_quadrature(oracle, coords)
            assert abs(f[0, 1]) <= 1e-6
            np.testing.assert_allclose(np.diag(f), np.diag(oracle.fim(coords)), rtol=2e-5)

    def test_exponential_display(self):
        oracle = exponential_oracle()
        f = fim_quadrature(oracle, [2.0])
        assert f[0, 0] == pytest.approx(0.25, rel=1e-6)

    def test_within_block_fd_of_log_partition_agrees(self):
        # dual route: block Hessian of A vs score-product quadrature
        oracle = gamma_oracle()
        coords = np.array([1.7, 2.4])
        f_quad = fim_quadrature(oracle, coords)
        for sl in oracle.block_slices:
            f_fd = fim_fd(oracle.log_partition, coords, block=sl)
            np.testing.assert_allclose(f_fd, f_quad[sl, sl], rtol=3e-5)


class TestChristoffelA3:
    def test_gamma_second_kind_display(self):
        oracle = gamma_oracle()
        coords = np.array([2.0, 3.0])
        first = christoffel_a3(oracle, coords)
        second = raise_first_kind(first, oracle.fim(coords))
        expected = (tetragamma(2.0) + 0.25) / (2.0 * (trigamma(2.0) - 0.5))
        assert second[0, 0, 0] == pytest.approx(expected, rel=1e-12)
        assert second[1, 1, 1] == pytest.approx(-1.0 / 3.0, rel=1e-12)

    def test_inverse_gaussian_raised_entry(self):
        oracle = inverse_gaussian_oracle()
        coords = np.array([4.0, 2.0])
        second = raise_first_kind(christoffel_a3(oracle, coords), oracle.fim(coords))
        assert second[0, 0, 0] == pytest.approx(-0.1875, rel=1e-12)
        assert second[1, 1, 1] == pytest.approx(-0.5, rel=1e-12)

    def test_gaussian_mean_block_zero(self):
        oracle = univ_gaussian_precision_oracle()
        first = christoffel_a3(oracle, np.array([0.4, 1.3]))
        assert first[0, 0, 0] == 0.0

    def test_fd_fallback_matches_analytic(self):
        oracle = gamma_oracle()
        coords = np.array([1.4, 0.9])
        analytic = christoffel_a3(oracle, coords)
        fd_oracle = gamma_oracle()
        fd_oracle.christoffel_first = None
        fd = christoffel_a3(fd_oracle, coords)
        np.testing.assert_allclose(fd, analytic, rtol=1e-5, atol=1e-8)

    @pytest.mark.parametrize(
        "factory",
        [gamma_oracle, exponential_oracle, inverse_gaussian_oracle, univ_gaussian_precision_oracle],
    )
    def test_matches_fd_of_fim(self, factory):
        oracle = factory()
        rng = RngStream(42, 0)
        for _ in range(3):
            if oracle.name == "univ_gaussian_precision":
                coords = np.array([rng.gen.uniform(-1, 1), rng.gen.uniform(0.5, 3.0)])
            else:
                coords = rng.gen.uniform(0.6, 4.0, size=oracle.n_coords)
            a3 = christoffel_a3(oracle, coords)
            fd = christoffel_fd_of_fim(oracle.fim, coords)
            for sl in oracle.block_slices:
                np.testing.assert_allclose(
                    fd[sl, sl, sl], a3[sl, sl, sl], rtol=1e-6, atol=1e-9
                )


class TestChristoffelMC:
    def test_gamma_block2(self):
        oracle = gamma_oracle()
        rng = RngStream(43, 0)
        gamma, se = christoffel_mc(oracle, [2.0, 3.0], 200_000, rng)
        assert abs(gamma[1, 1, 1] - (-2.0 / 27.0)) <= 3.0 * se[1, 1, 1]

    def test_exponential(self):
        oracle = exponential_oracle()
        rng = RngStream(44, 0)
        gamma, se = christoffel_mc(oracle, [2.0], 200_000, rng)
        assert abs(gamma[0, 0, 0] - (-0.125)) <= 3.0 * se[0, 0, 0]

    def test_musigma_raised_matches_table(self):
        oracle = univ_gaussian_musigma_oracle()
        rng = RngStream(45, 0)
        coords = np.array([0.0, 1.0])
        gamma, se = christoffel_mc(oracle, coords, 200_000, rng)
        second = raise_first_kind(gamma, oracle.fim(coords))
        # sigma-block own entry is -1/sigma; SE propagates through the
        # constant diagonal metric, F^22 = sigma^2/2
        se_raised = se[1, 1, 1] * 0.5
        assert abs(second[1, 1, 1] - (-1.0)) <= 3.0 * se_raised + 1e-3


class TestGeodesic:
    def test_t0(self):
        rng = RngStream(46, 0)
        s = random_spd(rng, 3)
        out = gaussian_geodesic_exact(s, random_symmetric(rng, 3), 0.0)
        np.testing.assert_allclose(out.data, s.data, atol=1e-12)

    def test_scalar_closed_form(self):
        out = gaussian_geodesic_exact(SPDMatrix(np.array([[1.0]])), np.array([[2.0]]), 1.0)
        assert out.data[0, 0] == pytest.approx(np.exp(-2.0), rel=1e-12)

    def test_retraction_is_third_order(self):
        rng = RngStream(47, 0)
        ratios_retr, ratios_ngd = [], []
        for _ in range(5):
            s = random_spd(rng, 3)
            g = random_symmetric(rng, 3)
            g *= 0.6 / np.linalg.norm(np.linalg.solve(s.data, g), 2)
            errs_r, errs_n = [], []
            for t in (0.4, 0.2, 0.1):
                geo = gaussian_geodesic_exact(s, g, t).data
                retr = s.data - t * g + 0.5 * t * t * symmetrize(g @ s.solve(g))
                ngd = s.data - t * g
                errs_r.append(np.max(np.abs(retr - geo)))
                errs_n.append(np.max(np.abs(ngd - geo)))
            ratios_retr += [errs_r[0] / errs_r[1], errs_r[1] / errs_r[2]]
            ratios_ngd += [errs_n[0] / errs_n[1], errs_n[1] / errs_n[2]]
        assert all(6.5 <= r <= 9.5 for r in ratios_retr)
        assert all(3.4 <= r <= 4.6 for r in ratios_ngd)


class TestTheoremIdentity:
    def test_half_form_matches_direct(self):
        rng = RngStream(48, 0)
        for _ in range(20):
            d = int(rng.gen.integers(1, 7))
            s = random_spd(rng, d, eps=0.3)
            g = random_symmetric(rng, d, scale=float(rng.gen.uniform(0.2, 3.0)))
            t = float(rng.gen.uniform(0.05, 2.0))
            direct = s.data - t * g + 0.5 * t * t * (g @ s.solve(g))
            half = theorem_half_form(s, g, t)
            scale = max(1.0, np.max(np.abs(direct)))
            assert np.max(np.abs(direct - half)) <= 1e-10 * scale


class TestSongCounterexample:
    def test_pinned_sigma_instance(self):
        (mu, sigma), feasible = song_step_univariate((0.0, 1.0), (3.0, 0.0), 1.0, "sigma")
        assert sigma == pytest.approx(-1.25, abs=1e-14)
        assert not feasible
        (mu_b, sigma_b), feasible_b = blockwise_step_univariate((0.0, 1.0), (3.0, 0.0), 1.0, "sigma")
        assert sigma_b == pytest.approx(1.0, abs=1e-14)
        assert feasible_b

    def test_pinned_variance_instance(self):
        (_, v), feasible = song_step_univariate((0.0, 1.0), (2.0, 0.0), 1.0, "variance")
        assert v == pytest.approx(-1.0, abs=1e-14)
        assert not feasible

    def test_blockwise_always_feasible_random(self):
        rng = RngStream(49, 0)
        for kind in ("sigma", "variance"):
            for _ in range(200):
                scale = float(rng.gen.uniform(0.05, 2.0))
                g = rng.gen.normal(0, 3.0, size=2)
                _, ok = blockwise_step_univariate((0.0, scale), g, 1.0, kind)
                assert ok

    def test_song_violations_exist(self):
        rng = RngStream(50, 0)
        for kind in ("sigma", "variance"):
            violations = 0
            for _ in range(100):
                scale = float(rng.gen.uniform(0.05, 2.0))
                g = rng.gen.normal(0, 3.0, size=2)
                _, ok = song_step_univariate((0.0, scale), g, 1.0, kind)
                violations += not ok
            assert violations >= 1


def test_oracle_registry_complete():
    assert set(ORACLES) == {
        "gamma",
        "exponential",
        "inverse_gaussian",
        "univ_gaussian_precision",
        "univ_gaussian_musigma",
    }
