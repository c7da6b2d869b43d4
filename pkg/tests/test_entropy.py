"""
Tests for Radon-Nikodym densities, entropy estimates and the triangle bound.
"""

import math

import numpy as np
import pytest

from tasep.entropy import (
    entropy_bound,
    entropy_density,
    entropy_mc,
    flux_identity_check,
    paired_discrepancy,
    rn_logdensity,
)
from tasep.errors import ConfigurationError, DomainError
from tasep.lattice import Boundary, HeightProfile, MacroField, bernoulli_profile, triangulate
from tasep.ratefn import rate_functional
from tasep.sim import mobility_intervals, run
from tests.conftest import fine_grid

RATE_2 = 2 * math.log(2) - 1


@pytest.fixture
def tilted_records(rng):
    h = bernoulli_profile(rng, 0, 40, 0.5, Boundary.TORUS)
    return [run(h, 2.0, T=1.0, N=20, seed=300 + i) for i in range(20)]


def uniform_field(r):
    return MacroField.from_function(lambda t, xi: 0.5 * t + 0.5 * xi, fine_grid(0.0, 0.5, 0.125), fine_grid(-r, r, 0.125))


class TestRadonNikodym:
    def test_unit_speed_is_trivial(self, rng):
        rec = run(bernoulli_profile(rng, 0, 30, 0.5, Boundary.TORUS), 1.0, T=1.0, N=10, seed=1)
        assert rn_logdensity(rec, 1.0) == 0.0
        assert entropy_density(rec, 1.0) == 0.0

    def test_constant_speed(self, tilted_records):
        """log of the speed per jump minus the excess rate over mobile time."""
        rec = tilted_records[0]
        _, lo, hi = mobility_intervals(rec)
        expected = rec.events * math.log(2) - float(np.sum(hi - lo))
        assert rn_logdensity(rec, 2.0) == pytest.approx(expected, rel=1e-12)

    def test_empty_torus_costs_nothing(self):
        h = HeightProfile(0, np.zeros(21, dtype=int), Boundary.TORUS)
        rec = run(h, 2.0, T=1.0, N=10, seed=0)
        assert rec.events == 0
        assert rn_logdensity(rec, 2.0) == 0.0
        assert entropy_density(rec, 2.0) == 0.0

    def test_density_counts_mobile_time(self, tilted_records):
        rec = tilted_records[0]
        _, lo, hi = mobility_intervals(rec)
        assert entropy_density(rec, 2.0) == pytest.approx(RATE_2 * float(np.sum(hi - lo)) / rec.N**2)

    def test_density_matches_log_likelihood_on_average(self, tilted_records):
        diffs = [rn_logdensity(r, 2.0) / r.N**2 - entropy_density(r, 2.0) for r in tilted_records]
        assert paired_discrepancy(diffs) < 5.0


class TestEntropyEstimates:
    def test_window_restricts(self, tilted_records):
        rec = tilted_records[0]
        full = entropy_density(rec, 2.0)
        half = entropy_density(rec, 2.0, window=(0.0, 1.0, 0.0, 0.95))
        assert 0 < half < full

    def test_window_must_be_a_box(self, tilted_records):
        with pytest.raises(DomainError):
            entropy_density(tilted_records[0], 2.0, window=(0.5, 0.5, 0.0, 1.0))

    def test_monte_carlo_report(self, tilted_records):
        report = entropy_mc(tilted_records, 2.0)
        assert report.replicas == 20
        assert report.std_error > 0
        # mobility of a stationary half-filled torus is about 1/4 per site
        assert report.mc_estimate == pytest.approx(RATE_2 * 0.25 * 40 * 20 / 400, rel=0.3)

    def test_per_unit_length(self, tilted_records):
        whole = entropy_mc(tilted_records, 2.0)
        per = entropy_mc(tilted_records, 2.0, per_unit_length=True)
        assert per.mc_estimate == pytest.approx(whole.mc_estimate / 2.0)

    def test_needs_replicas(self):
        with pytest.raises(DomainError):
            entropy_mc([], 2.0)

    def test_flux_identity(self, tilted_records):
        assert flux_identity_check(tilted_records, None, (0, 39), 0.0, 1.0) < 5.0


class TestPairedDiscrepancy:
    @pytest.mark.parametrize("diffs, expected", [([0.0, 0.0], 0.0), ([1.0, -1.0], 0.0), ([], 0.0)])
    def test_values(self, diffs, expected):
        assert paired_discrepancy(diffs) == expected

    def test_constant_offset(self):
        assert paired_discrepancy([0.5, 0.5, 0.5]) == math.inf


class TestEntropyBound:
    """Triangle sums of the truncated rate."""

    def test_inner_band_matches_rate_functional(self):
        field = uniform_field(0.5)
        report = entropy_bound(triangulate(field, 0.5, 0.5, 0.5), 0.5)
        assert report.theoretical_bound == pytest.approx(0.125 * RATE_2)
        assert report.breakdown.tail == 0.0
        assert report.theoretical_bound == pytest.approx(rate_functional(field, r=0.5))

    def test_tail_band_uses_full_weight(self):
        tri = triangulate(uniform_field(1.5), 0.5, 0.5, 1.5)
        report = entropy_bound(tri, 0.5)
        assert report.breakdown.inner == pytest.approx(0.125 * RATE_2)
        assert report.breakdown.tail == pytest.approx(RATE_2)
        assert report.theoretical_bound == pytest.approx(1.125 * RATE_2)

    def test_cut_must_fall_on_columns(self):
        tri = triangulate(uniform_field(1.5), 0.5, 0.5, 1.5)
        with pytest.raises(ConfigurationError, match="straddles"):
            entropy_bound(tri, 0.75)

    def test_hydrodynamic_deviation_is_free(self, intermittent_tri):
        assert entropy_bound(intermittent_tri, 0.5).theoretical_bound == 0.0
