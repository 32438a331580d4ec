import numpy as np
import pytest

from iblr.blocks import (
    BlockedPoint,
    BlockedTangent,
    ChristoffelContraction,
    PositiveScalar,
    RealVector,
    SPD,
    ngd_step,
    positive_inverse_contraction,
    retraction_step,
    spd_contraction,
    value_feasible,
)
from iblr.errors import InfeasibleResult, ShapeMismatch
from iblr.linalg import SPDMatrix, min_eigenvalue, random_spd, random_symmetric
from iblr.rng import RngStream


def _scalar_point(value):
    return BlockedPoint([(PositiveScalar(), value)])


def _inverse_gamma_contraction():
    return ChristoffelContraction([positive_inverse_contraction])


class TestRetraction:
    def test_positive_scalar_second_order(self):
        # lam=2, ghat=1, t=1 with symbols -1/lam: 2 - 1 + 0.5 * (1/2) = 1.25
        point = _scalar_point(2.0)
        new = retraction_step(point, BlockedTangent([1.0]), 1.0, _inverse_gamma_contraction())
        assert new.blocks[0][1] == pytest.approx(1.25, abs=1e-14)

    def test_zero_tangent_is_identity(self):
        rng = RngStream(31, 0)
        s = random_spd(rng, 3)
        point = BlockedPoint([(RealVector(3), np.arange(3.0)), (SPD(3), s)])
        gamma = ChristoffelContraction([None, spd_contraction])
        new = retraction_step(point, BlockedTangent.zeros_like(point), 0.7, gamma)
        np.testing.assert_array_equal(new.blocks[0][1], np.arange(3.0))
        np.testing.assert_allclose(new.blocks[1][1].data, s.data)

    def test_scalar_precision_stays_positive(self):
        # S=1, Ghat=2, t=1: 1 - 2 + 0.5*2*1*2 = 1
        point = BlockedPoint([(SPD(1), SPDMatrix(np.array([[1.0]])))])
        gamma = ChristoffelContraction([spd_contraction])
        new = retraction_step(point, BlockedTangent([np.array([[2.0]])]), 1.0, gamma)
        assert new.blocks[0][1].data[0, 0] == pytest.approx(1.0, abs=1e-14)

    def test_t0_returns_point_exactly(self):
        rng = RngStream(32, 0)
        s = random_spd(rng, 4)
        point = BlockedPoint([(PositiveScalar(), 0.3), (SPD(4), s)])
        gamma = ChristoffelContraction([positive_inverse_contraction, spd_contraction])
        tan = BlockedTangent([1.7, random_symmetric(rng, 4)])
        new = retraction_step(point, tan, 0.0, gamma)
        assert new.blocks[0][1] == 0.3
        np.testing.assert_array_equal(new.blocks[1][1].data, s.data)

    def test_initial_velocity_matches_negative_tangent(self):
        # d/dt at 0 of the update equals -ghat per block (central FD, h=1e-5)
        rng = RngStream(33, 0)
        s = random_spd(rng, 3)
        point = BlockedPoint([(PositiveScalar(), 1.3), (SPD(3), s)])
        gamma = ChristoffelContraction([positive_inverse_contraction, spd_contraction])
        tan = BlockedTangent([0.8, random_symmetric(rng, 3)])
        h = 1e-5
        plus = retraction_step(point, tan, h, gamma)
        minus = retraction_step(point, tan, -h, gamma)
        vel_scalar = (plus.blocks[0][1] - minus.blocks[0][1]) / (2 * h)
        vel_spd = (plus.blocks[1][1].data - minus.blocks[1][1].data) / (2 * h)
        assert vel_scalar == pytest.approx(-0.8, rel=1e-6)
        np.testing.assert_allclose(vel_spd, -tan.values[1], rtol=1e-6, atol=1e-8)

    def test_spd_feasibility_random_sweep(self):
        rng = RngStream(34, 0)
        gamma = ChristoffelContraction([spd_contraction])
        for _ in range(300):
            d = int(rng.gen.integers(1, 6))
            s = random_spd(rng, d, eps=0.1)
            g = random_symmetric(rng, d, scale=float(rng.gen.uniform(0.1, 4.0)))
            t = float(rng.gen.uniform(0.0, 2.0))
            new = retraction_step(
                BlockedPoint([(SPD(d), s)]), BlockedTangent([g]), t, gamma
            )
            assert min_eigenvalue(new.blocks[0][1].data) > 0

    def test_unguaranteed_contraction_raises(self):
        # A hostile user-supplied contraction that overshoots into negatives.
        bad = ChristoffelContraction([lambda v, g: 1e6], guaranteed=[False])
        with pytest.raises(InfeasibleResult):
            retraction_step(_scalar_point(0.5), BlockedTangent([0.0]), 1.0, bad)

    def test_shape_mismatch(self):
        point = _scalar_point(1.0)
        with pytest.raises(ShapeMismatch):
            retraction_step(point, BlockedTangent([np.ones(2)]), 0.1, _inverse_gamma_contraction())


class TestNgdStep:
    def test_gamma_infeasible_flagged(self):
        new, feasible = ngd_step(_scalar_point(2.0), BlockedTangent([3.0]), 1.0)
        assert new.blocks[0][1] == pytest.approx(-1.0)
        assert not feasible

    def test_zero_tangent_feasible(self):
        new, feasible = ngd_step(_scalar_point(2.0), BlockedTangent([0.0]), 1.0)
        assert feasible and new.blocks[0][1] == 2.0

    def test_full_gaussian_indefinite_flagged(self):
        # S = I, tangent with an eigenvalue 3: S - G has eigenvalue -2
        g = np.diag([3.0, -1.0])
        point = BlockedPoint([(SPD(2), SPDMatrix(np.eye(2)))])
        new, feasible = ngd_step(point, BlockedTangent([g]), 1.0)
        assert not feasible
        assert min_eigenvalue(np.asarray(new.blocks[0][1])) == pytest.approx(-2.0, abs=1e-10)


class TestFeasibility:
    def test_positive_floor(self):
        assert not value_feasible(PositiveScalar(), 1e-13)
        assert value_feasible(PositiveScalar(), 1e-6)

    def test_spd_floor(self):
        assert value_feasible(SPD(2), np.eye(2))
        assert not value_feasible(SPD(2), np.diag([1.0, -1e-9]))

    def test_real_vector_always(self):
        assert value_feasible(RealVector(2), np.array([-1e30, 4.0]))
        assert not value_feasible(RealVector(2), np.array([np.nan, 0.0]))
