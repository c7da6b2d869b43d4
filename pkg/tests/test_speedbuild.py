"""
Tests for simple speed functions, zoned partitions and their rasterization.
"""

import math
from fractions import Fraction

import numpy as np
import pytest

from models.data_models import RegionTriplet
from tasep import hopflax
from tasep.errors import ConfigurationError, ConsistencyError, ConstructionError, DomainError
from tasep.speedbuild import (
    RegionKind,
    SimpleSpeed,
    SpeedProfile,
    build_regions,
    l1_gap,
    r_upper_star,
    rasterize,
    residual_split,
    solve_diagonal_triplet,
)


# ============================================================================
# Simple speed functions
# ============================================================================


class TestSpeedProfile:
    """Piecewise-constant profiles take the smaller value on a break."""

    @pytest.mark.parametrize("values", [[1.0, 2.0], [2.0, 1.0]])
    def test_lower_semicontinuous(self, values):
        prof = SpeedProfile(np.array([0.0]), np.array(values))
        assert prof(0.0) == 1.0
        assert prof(-0.5) == values[0]
        assert prof(0.5) == values[1]

    def test_value_count(self):
        with pytest.raises(DomainError, match="one more value"):
            SpeedProfile(np.array([0.0]), np.array([1.0]))

    def test_positive(self):
        with pytest.raises(DomainError, match="positive"):
            SpeedProfile(np.empty(0), np.array([0.0]))


class TestSimpleSpeed:
    @pytest.fixture
    def two_piece(self):
        return SimpleSpeed(
            np.array([0.0, 0.5, 1.0]),
            (
                SpeedProfile(np.array([-1.0, 1.0]), np.array([1.0, 0.5, 1.0])),
                SpeedProfile(np.array([0.0]), np.array([1.0, 2.0])),
            ),
        )

    def test_right_continuous_in_time(self, two_piece):
        assert two_piece.evaluate(0.49, 0.5) == 0.5
        assert two_piece.evaluate(0.5, 0.5) == 2.0

    def test_extrema(self, two_piece):
        assert two_piece.max_value == 2.0
        assert two_piece.min_value == 0.5

    def test_outside_horizon(self, two_piece):
        with pytest.raises(DomainError):
            two_piece.evaluate(1.0, 0.0)

    def test_evaluate_many(self, two_piece):
        out = two_piece.evaluate_many([0.1, 0.7, 0.7], [0.0, -1.0, 1.0])
        assert out.tolist() == [0.5, 1.0, 2.0]

    def test_segment_breaks(self, two_piece):
        """The segment meets xi = 1 at u = 1/4, t = 1/2 at u = 1/2 and xi = 0 at u = 3/4."""
        u = two_piece.segment_breaks(0.25, 1.5, 0.75, -0.5)
        assert u.tolist() == pytest.approx([0.25, 0.5, 0.75])

    def test_dict_round_trip(self, two_piece):
        back = SimpleSpeed.from_dict(two_piece.to_dict())
        t = np.array([0.1, 0.3, 0.6, 0.9])
        xi = np.array([-1.0, 0.0, 0.0, 3.0])
        assert np.array_equal(back.evaluate_many(t, xi), two_piece.evaluate_many(t, xi))

    def test_json_round_trip(self, two_piece):
        back = SimpleSpeed.from_json(two_piece.to_json())
        assert back.t_breaks.tolist() == two_piece.t_breaks.tolist()
        assert back.evaluate(0.7, 0.5) == 2.0

    def test_unit_outside_window(self):
        prof = SpeedProfile(np.array([-1.0, 1.0]), np.array([2.0, 0.5, 1.0]))
        with pytest.raises(DomainError, match="equal 1 outside"):
            SimpleSpeed(np.array([0.0, 1.0]), (prof,), r_star=1.0)

    def test_breaks_must_start_at_zero(self):
        with pytest.raises(DomainError):
            SimpleSpeed(np.array([0.1, 1.0]), (SpeedProfile(np.empty(0), np.array([1.0])),))


# ============================================================================
# Edge triplets
# ============================================================================


class TestTriplets:
    def test_r_upper_star(self):
        assert r_upper_star(0.5, 1.0, 0.64) == Fraction(3, 2)
        assert r_upper_star(1.0, 1.0, 0.281 / 0.1875) == 3

    def test_diagonal_buffer(self):
        """kappa + rho = 9/8 on both sides gives the buffer (3/8, 3/4, 2)."""
        left = RegionTriplet(kappa=0.625, rho=0.5, lam=2.5)
        right = RegionTriplet(kappa=0.225, rho=0.9, lam=2.5)
        buf = solve_diagonal_triplet(left, right, 1.0)
        assert (buf.kappa, buf.rho, buf.lam) == pytest.approx((0.375, 0.75, 2.0))
        assert buf.kappa + buf.rho == pytest.approx(1.125)

    def test_non_diverging_pair_keeps_left(self):
        left = RegionTriplet(kappa=0.231, rho=0.3, lam=1.1)
        right = RegionTriplet(kappa=0.281, rho=0.25, lam=0.281 / 0.1875)
        assert solve_diagonal_triplet(left, right, 1.0) == left

    def test_mismatched_edge(self):
        left = RegionTriplet(kappa=0.625, rho=0.5, lam=2.5)
        right = RegionTriplet(kappa=0.3, rho=0.9, lam=0.3 / 0.09)
        with pytest.raises(ConsistencyError):
            solve_diagonal_triplet(left, right, 1.0)

    def test_residual_split(self):
        rho1, rho2, w1, w2 = residual_split(0.16, 0.5)
        assert (rho1, rho2) == pytest.approx((0.8, 0.2))
        assert (w1, w2) == pytest.approx((0.5, 0.5))
        assert rho1 * (1 - rho1) == pytest.approx(0.16)

    def test_residual_weights_average_density(self):
        rho1, rho2, w1, w2 = residual_split(0.21, 0.4)
        assert w1 * rho1 + w2 * rho2 == pytest.approx(0.4)

    @pytest.mark.parametrize("kappa", [0.0, 0.25, 0.3])
    def test_residual_split_domain(self, kappa):
        with pytest.raises(DomainError):
            residual_split(kappa, 0.5)


# ============================================================================
# Zoned partitions
# ============================================================================


class TestBuildRegions:
    """Tiling, edge identities and stripe layout of the partition."""

    def test_diagonal_cut_partition_passes(self, diagonal_cut_tri):
        zp = build_regions(diagonal_cut_tri, 8, 2, 1.0)
        assert zp.report.passed, zp.report.violations
        assert zp.report.covered_area == pytest.approx(6.0)
        assert zp.report.checked_edges > 0
        assert not zp.of_kind(RegionKind.STRIPE)

    def test_diagonal_buffer_copies_non_diverging_triplet(self, diagonal_cut_tri):
        zp = build_regions(diagonal_cut_tri, 8, 2, 1.0)
        buffers = {r.parent: r for r in zp.of_kind(RegionKind.DIAGONAL_BUFFER)}
        kappa, rho, lam = diagonal_cut_tri.triplet((0, 6, "L"))
        assert buffers[("diagonal", 0, 6)].triplet.kappa == pytest.approx(kappa)
        assert buffers[("diagonal", 0, 6)].triplet.rho == pytest.approx(rho)

    def test_vertical_buffers_carry_edge_flux(self, diagonal_cut_tri):
        zp = build_regions(diagonal_cut_tri, 8, 2, 1.0)
        for r in zp.of_kind(RegionKind.VERTICAL_BUFFER):
            assert r.triplet.rho == 0.5
            assert r.triplet.lam == pytest.approx(4 * r.triplet.kappa)
            assert r.triplet.lam <= zp.lambda_max + 1e-12

    @pytest.mark.parametrize("n", [2, 3])
    def test_intermittent_partition(self, intermittent_tri, n):
        """Every triangle of a uniform speed-0.64 deviation gets n stripes and two terminal regions."""
        zp = build_regions(intermittent_tri, 8, n, 0.5)
        assert zp.report.passed, zp.report.violations
        triangles = 2 * intermittent_tri.n_slabs * intermittent_tri.n_cols
        assert len(zp.of_kind(RegionKind.STRIPE)) == n * triangles
        assert len(zp.of_kind(RegionKind.TERMINAL)) == 2 * triangles
        assert zp.report.covered_area == pytest.approx(3.0)

    def test_stripes_and_residuals(self, intermittent_tri):
        zp = build_regions(intermittent_tri, 8, 2, 0.5)
        for r in zp.of_kind(RegionKind.STRIPE):
            assert r.triplet.lam == pytest.approx(0.64)
            assert r.right.base - r.left.base == zp.fine_b
        for r in zp.of_kind(RegionKind.RESIDUAL_HIGH, RegionKind.RESIDUAL_LOW):
            assert r.lam == pytest.approx(1.0)
            assert r.triplet.kappa == pytest.approx(0.16)
        high = zp.of_kind(RegionKind.RESIDUAL_HIGH)
        assert {round(r.triplet.rho, 12) for r in high} == {0.8}

    def test_geometry_is_exact(self, intermittent_tri):
        zp = build_regions(intermittent_tri, 8, 2, 0.5)
        assert all(isinstance(r.t_lo, Fraction) and isinstance(r.left.base, Fraction) for r in zp.regions)
        assert sum((r.area for r in zp.regions), Fraction(0)) == zp.horizon * 2 * zp.r_upper_star

    def test_m_too_small(self, intermittent_tri):
        with pytest.raises(ConstructionError, match="m >= 8"):
            build_regions(intermittent_tri, 7, 2, 0.5)

    def test_n_too_small(self, intermittent_tri):
        with pytest.raises(ConstructionError, match="at least 2"):
            build_regions(intermittent_tri, 8, 1, 0.5)

    def test_wrong_window(self, intermittent_tri):
        with pytest.raises(ConfigurationError):
            build_regions(intermittent_tri, 8, 2, 0.5, r_upper=2.0)

    def test_window_must_match_triangulation(self, intermittent_tri):
        with pytest.raises(ConfigurationError, match="triangulation covers"):
            build_regions(intermittent_tri, 8, 2, 1.0)


# ============================================================================
# Rasterization
# ============================================================================


class TestRasterize:
    """The simple speed read off the partition."""

    def test_uniform_deviation(self, intermittent_tri):
        zp = build_regions(intermittent_tri, 8, 2, 0.5)
        speed = rasterize(zp)
        assert speed.horizon == pytest.approx(1.0)
        assert speed.r_star == pytest.approx(1.5)
        assert speed.max_value == pytest.approx(1.0)
        assert speed.min_value == pytest.approx(0.64)
        # transition zones run at speed one
        assert speed.evaluate(0.01, 0.0) == 1.0
        assert speed.evaluate(0.5, 0.3) == 1.0
        assert speed.evaluate(0.25, 5.0) == 1.0

    def test_diagonal_cut_values(self, diagonal_cut_tri):
        zp = build_regions(diagonal_cut_tri, 8, 2, 1.0)
        speed = rasterize(zp)
        assert speed.max_value == pytest.approx(diagonal_cut_tri.lambda_max)
        # centre of the reduced triangles on either side of the cut
        assert speed.evaluate(0.3, -0.25) == pytest.approx(1.1)
        assert speed.evaluate(0.2, 0.4) == pytest.approx(0.281 / 0.1875)

    def test_scales_must_match(self, intermittent_tri):
        zp = build_regions(intermittent_tri, 8, 2, 0.5)
        with pytest.raises(ConfigurationError):
            rasterize(zp, m=16)

    @pytest.mark.slow
    def test_l1_gap_shrinks_with_m(self, diagonal_cut_tri):
        coarse = l1_gap(rasterize(build_regions(diagonal_cut_tri, 8, 2, 1.0)), diagonal_cut_tri)
        fine = l1_gap(rasterize(build_regions(diagonal_cut_tri, 16, 2, 1.0)), diagonal_cut_tri)
        assert 0 < fine < coarse

    @pytest.mark.slow
    def test_speed_reproduces_deviation(self, diagonal_cut_tri):
        """The Hopf-Lax evolution under the built speed stays close to g."""
        speed = rasterize(build_regions(diagonal_cut_tri, 16, 2, 1.0))
        field = hopflax.solve(speed, diagonal_cut_tri.initial_slice(), (1 / 128, 1 / 128), 2.75, r=1.0, horizon=1.0)
        tt, xx = np.meshgrid(field.t_grid, field.xi_grid, indexing="ij")
        assert np.max(np.abs(field.values - diagonal_cut_tri.value(tt, xx))) <= 0.05

    @pytest.mark.slow
    def test_speed_fidelity_improves_with_scales(self, diagonal_cut_tri):
        """Sup error on [0, T] x [-r_*, r_*] drops from (m, n) = (8, 4) to (16, 8)."""
        errors = []
        for m, n in ((8, 4), (16, 8)):
            speed = rasterize(build_regions(diagonal_cut_tri, m, n, 1.0))
            L = math.ceil(128 * (1.0 + speed.max_value * (1 + 1 / 128))) / 128
            field = hopflax.solve(speed, diagonal_cut_tri.initial_slice(), (1 / 128, 1 / 128), L, r=1.0, horizon=1.0)
            tt, xx = np.meshgrid(field.t_grid, field.xi_grid, indexing="ij")
            errors.append(float(np.max(np.abs(field.values - diagonal_cut_tri.value(tt, xx)))))
        assert errors[1] < errors[0]
        assert errors[1] <= 0.05

    def test_l1_gap_vanishes_on_matching_speed(self, intermittent_tri):
        assert l1_gap(SimpleSpeed.constant(1.0, 1.0), intermittent_tri) == 0.0
        assert math.isfinite(l1_gap(SimpleSpeed.constant(2.0, 1.0), intermittent_tri))
