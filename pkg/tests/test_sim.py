"""
Tests for the coupled TASEP simulator, its replay observables and the
appendix statistics.
"""

import numpy as np
import pytest

from tasep.errors import DomainError, ProfileError, UnsafeWindowError
from tasep.lattice import Boundary, HeightProfile, MacroField, bernoulli_profile, locality_envelope, mobility_field, wedge_profile
from tasep.sim import (
    DiscreteMeasure,
    EmpiricalYoungMeasure,
    _block_average,
    empirical_flux,
    expected_flux,
    height_at,
    local_density,
    mobility_intervals,
    mv_residual,
    one_block_stat,
    run,
    run_coupled,
    safety_margin,
    scaled_field,
    two_point_measure,
    young_histogram,
    young_measure_at_time,
)
from tasep.speedbuild import SimpleSpeed, SpeedProfile
from tests.conftest import fine_grid


def torus(rng, period, rho=0.5):
    return bernoulli_profile(rng, 0, period, rho, Boundary.TORUS)


def segments(rec):
    """Micro-time pieces on which the recorded state is constant."""
    cuts = np.concatenate(([0.0], rec.event_times, [rec.horizon]))
    return [(a, b) for a, b in zip(cuts[:-1], cuts[1:]) if b > a]


# ============================================================================
# Simulation
# ============================================================================


class TestRun:
    """Reproducibility and conservation of single runs."""

    def test_same_seed_same_record(self, rng):
        h = torus(rng, 60)
        a = run(h, 1.0, T=1.0, N=30, seed=7)
        b = run(h, 1.0, T=1.0, N=30, seed=7)
        assert np.array_equal(a.event_times, b.event_times)
        assert np.array_equal(a.event_sites, b.event_sites)

    def test_different_seed(self, rng):
        h = torus(rng, 60)
        a = run(h, 1.0, T=1.0, N=30, seed=7)
        b = run(h, 1.0, T=1.0, N=30, seed=8)
        assert not np.array_equal(a.event_times, b.event_times)

    def test_torus_conserves_particles(self, rng):
        h = torus(rng, 80, 0.3)
        rec = run(h, 1.0, T=1.0, N=40, seed=1)
        final = height_at(rec, 1.0, macro=True)
        assert rec.events > 0
        assert final.particle_count == h.particle_count
        assert np.all(final.values >= h.values)
        assert final.values.sum() - h.values.sum() == rec.events + np.count_nonzero(rec.event_sites == h.x_min)

    def test_events_only_at_candidate_sites(self):
        h = wedge_profile(-40, 40)
        rec = run(h, 1.0, T=1.0, N=10, seed=3)
        assert rec.events > 0
        assert np.all((rec.event_sites > h.x_min) & (rec.event_sites < h.x_max))
        assert np.all(np.diff(rec.event_times) >= 0)
        assert np.all((rec.event_times > 0) & (rec.event_times < rec.horizon))

    def test_height_at_start(self, rng):
        h = torus(rng, 30)
        rec = run(h, 1.0, T=1.0, N=10, seed=2)
        assert np.array_equal(height_at(rec, 0.0).values, h.values)
        with pytest.raises(DomainError):
            height_at(rec, 2.0, macro=True)

    def test_speed_shapes_event_density(self, rng):
        """Over a short run speed 3 on the right half grows it about three times as fast."""
        h = torus(rng, 200)
        speed = SimpleSpeed(np.array([0.0, 1.0]), (SpeedProfile(np.array([2.0]), np.array([1.0, 3.0])),))
        rec = run(h, speed, T=1.0, N=5, seed=11)
        left = np.count_nonzero(rec.event_sites < 100)
        right = np.count_nonzero(rec.event_sites >= 100)
        assert 2.0 < right / left < 4.0

    def test_speed_must_cover_horizon(self, rng):
        with pytest.raises(DomainError, match="speed defined up to"):
            run(torus(rng, 20), SimpleSpeed.constant(1.0, 0.5), T=1.0, N=10, seed=0)

    def test_positive_scales(self, rng):
        with pytest.raises(DomainError):
            run(torus(rng, 20), 1.0, T=0.0, N=10, seed=0)

    def test_safety_margin(self):
        assert safety_margin(1.0, 100, 1.0) == 160


class TestCoupling:
    """Copies sharing one candidate stream."""

    def test_windows_must_match(self):
        with pytest.raises(ProfileError, match="identical windows"):
            run_coupled([wedge_profile(-10, 10), wedge_profile(-10, 11)], 1.0, T=1.0, N=5, seed=0)

    def test_order_is_preserved(self, rng):
        low = bernoulli_profile(rng, -60, 60, 0.4, Boundary.FROZEN)
        other = bernoulli_profile(rng, -60, 60, 0.6, Boundary.FROZEN)
        high = low.with_values(np.maximum(low.values, other.values))
        rec_low, rec_high = run_coupled([low, high], 1.0, T=1.0, N=20, seed=5)
        for t in np.linspace(0.0, rec_low.horizon, 9):
            assert np.all(height_at(rec_high, t).values >= height_at(rec_low, t).values)

    def test_shifted_copies_move_together(self):
        h = wedge_profile(-30, 30)
        a, b = run_coupled([h, h.shifted(4)], 1.0, T=1.0, N=10, seed=9)
        assert np.array_equal(a.event_times, b.event_times)
        assert np.array_equal(a.event_sites, b.event_sites)

    @staticmethod
    def locality_pair():
        x = np.arange(-20, 21)
        f1 = wedge_profile(-20, 20)
        f2 = HeightProfile(-20, np.where(x < -3, x + 3, np.minimum(np.maximum(x, 0), 3)))
        return x, f1, f2

    def test_locality(self):
        """The event h(t, 0) < 3 only depends on the initial data inside its envelope."""
        x, f1, f2 = self.locality_pair()
        env = locality_envelope(f1, 3, 0)
        assert (env.lower, env.upper) == (-3, 3)
        inside = (x >= env.lower) & (x <= env.upper)
        assert np.array_equal(f1.values[inside], f2.values[inside])
        for seed in range(30):
            r1, r2 = run_coupled([f1, f2], 1.0, T=5.0, N=1, seed=seed)
            end = r1.horizon
            assert (height_at(r1, end).at(0) < 3) == (height_at(r2, end).at(0) < 3)

    @pytest.mark.slow
    def test_locality_seed_sweep(self):
        _, f1, f2 = self.locality_pair()
        mismatches = 0
        for seed in range(500):
            r1, r2 = run_coupled([f1, f2], 1.0, T=5.0, N=1, seed=seed)
            mismatches += (height_at(r1, r1.horizon).at(0) < 3) != (height_at(r2, r2.horizon).at(0) < 3)
        assert mismatches == 0


# ============================================================================
# Observables
# ============================================================================


class TestObservables:
    """Mobility intervals, fluxes and their compensators."""

    @pytest.fixture
    def torus_record(self, rng):
        return run(torus(rng, 40), 1.0, T=1.0, N=20, seed=4)

    def test_every_event_closes_an_interval(self, torus_record):
        sites, lo, hi = mobility_intervals(torus_record)
        closed = set(zip(sites.tolist(), hi.tolist()))
        for t, x in zip(torus_record.event_times.tolist(), torus_record.event_sites.tolist()):
            assert (x, t) in closed
        assert np.all(lo <= hi)
        assert np.all((lo >= 0) & (hi <= torus_record.horizon))

    def test_intervals_match_replay(self, torus_record):
        """Total mobile site-time equals the integral of the replayed mobility."""
        _, lo, hi = mobility_intervals(torus_record)
        brute = sum((b - a) * mobility_field(height_at(torus_record, a))[1].sum() for a, b in segments(torus_record))
        assert float(np.sum(hi - lo)) == pytest.approx(brute, rel=1e-12)

    def test_expected_flux_at_unit_speed(self, torus_record):
        _, lo, hi = mobility_intervals(torus_record)
        window = (0, 39)
        assert expected_flux(torus_record, window, 0.0, 1.0) == pytest.approx(float(np.sum(hi - lo)) / (40 * 20))

    def test_empirical_flux_counts_events(self, torus_record):
        assert empirical_flux(torus_record, (0, 39), 0.0, 1.0) == pytest.approx(torus_record.events / (40 * 20))

    @pytest.mark.slow
    def test_stationary_flux(self, rng):
        rec = run(torus(rng, 400), 1.0, T=1.0, N=400, seed=21)
        assert empirical_flux(rec, (0, 399), 0.0, 1.0) == pytest.approx(0.25, abs=0.02)
        assert expected_flux(rec, (0, 399), 0.0, 1.0) == pytest.approx(0.25, abs=0.02)

    def test_unsafe_window(self):
        h = wedge_profile(-20, 20)
        rec = run(h, 1.0, T=1.0, N=5, seed=0)
        with pytest.raises(UnsafeWindowError):
            empirical_flux(rec, (-20, 20), 0.0, 1.0)

    def test_time_window(self, torus_record):
        with pytest.raises(DomainError):
            empirical_flux(torus_record, (0, 39), 0.5, 0.5)

    def test_scaled_field(self):
        h = wedge_profile(-200, 200)
        rec = run(h, 1.0, T=1.0, N=50, seed=6, observe=(-50, 50))
        assert not rec.margin_violated
        field = scaled_field(rec, [0.0, 0.5, 1.0], fine_grid(-1.0, 1.0, 0.5))
        assert isinstance(field, MacroField)
        assert np.allclose(field.values[0], np.maximum(field.xi_grid, 0.0))
        assert np.all(np.diff(field.values, axis=0) >= 0)
        with pytest.raises(UnsafeWindowError):
            scaled_field(rec, [0.0], fine_grid(-4.5, 4.5, 0.5))

    def test_local_density(self, torus_record):
        sites, dens = local_density(torus_record, 0.5, 4)
        assert sites.size == 40
        assert np.all((dens >= 0) & (dens <= 1))
        assert dens.mean() == pytest.approx(torus_record.initial.particle_count / 40)
        with pytest.raises(DomainError):
            local_density(torus_record, 0.5, 0)


# ============================================================================
# Appendix statistics
# ============================================================================


class TestOneBlock:
    """The incremental one-block statistic against a full replay."""

    @pytest.mark.parametrize("k", [1, 4, 7])
    def test_matches_replay(self, rng, k):
        rec = run(torus(rng, 24), 1.0, T=1.0, N=24, seed=13)
        fast = one_block_stat(rec, lambda t, xi: np.ones_like(xi), k)
        total = 0.0
        for a, b in segments(rec):
            h = height_at(rec, a)
            _, mob = mobility_field(h)
            _, dens = _block_average(h, k)
            total += (b - a) * float(np.sum(mob - dens * (1 - dens)))
        assert fast == pytest.approx(total / rec.N, rel=1e-9, abs=1e-12)

    def test_time_cells_freeze_weights(self, rng):
        rec = run(torus(rng, 24), 1.0, T=1.0, N=24, seed=13)
        whole = one_block_stat(rec, lambda t, xi: np.ones_like(xi), 4)
        split = one_block_stat(rec, lambda t, xi: np.ones_like(xi), 4, time_cells=4)
        assert split == pytest.approx(whole)

    def test_needs_torus(self):
        rec = run(wedge_profile(-10, 10), 1.0, T=1.0, N=5, seed=0)
        with pytest.raises(ProfileError):
            one_block_stat(rec, lambda t, xi: np.ones_like(xi), 2)

    def test_block_width(self, rng):
        rec = run(torus(rng, 12), 1.0, T=1.0, N=5, seed=0)
        with pytest.raises(DomainError, match="block width"):
            one_block_stat(rec, lambda t, xi: np.ones_like(xi), 10)


class TestYoungMeasures:
    def test_two_point_measure(self):
        nu = two_point_measure(0.8, 0.2, 0.5)
        assert nu.mean() == pytest.approx(0.5)
        assert nu.integrate(lambda r: r * (1 - r)) == pytest.approx(0.16)

    def test_two_point_measure_drops_empty_atom(self):
        nu = two_point_measure(0.8, 0.2, 0.8)
        assert nu.atoms.tolist() == [0.8]

    def test_two_point_domain(self):
        with pytest.raises(DomainError):
            two_point_measure(0.8, 0.2, 0.9)

    def test_weights_sum_to_one(self):
        with pytest.raises(DomainError):
            DiscreteMeasure(np.array([0.2, 0.8]), np.array([0.5, 0.4]))

    def test_from_measure_needs_lattice_atoms(self):
        with pytest.raises(DomainError, match="multiples"):
            EmpiricalYoungMeasure.from_measure(two_point_measure(0.75, 0.25, 0.5), [0, 1], [0, 1], 10)

    def test_mv_residual_vanishes_on_matching_flux(self):
        t_edges, xi_edges = np.linspace(0, 1, 5), np.linspace(-1, 1, 5)
        nu = EmpiricalYoungMeasure.from_measure(two_point_measure(0.8, 0.2, 0.5), t_edges, xi_edges, 10)
        cell = nu.cell(1, 2)
        assert cell.mean() == pytest.approx(0.5)
        field = MacroField.from_function(lambda t, xi: 0.16 * t + 0.5 * xi, fine_grid(0, 1, 0.125), fine_grid(-1, 1, 0.125))
        tests = [lambda t, x: np.ones_like(t), lambda t, x: x, lambda t, x: t * x**2]
        assert mv_residual(field, nu, tests) == pytest.approx(0.0, abs=1e-12)
        faster = MacroField.from_function(lambda t, xi: 0.2 * t + 0.5 * xi, fine_grid(0, 1, 0.125), fine_grid(-1, 1, 0.125))
        assert mv_residual(faster, nu, tests[:1]) == pytest.approx(0.04 * 2.0)

    def test_alternating_profile_histogram(self):
        values = np.concatenate(([0], np.cumsum(np.tile([1, 0], 10))))
        h = HeightProfile(0, values, Boundary.TORUS)
        nu = young_measure_at_time(h, 20, 2, 2)
        assert np.allclose(nu.weights[0, :, 1], 1.0)
        assert np.allclose(nu.mean(), 0.5)

    def test_histogram_is_normalised(self, rng):
        rec = run(torus(rng, 40), 1.0, T=1.0, N=20, seed=4)
        nu = young_histogram(rec, 4, (2, 4))
        assert nu.weights.shape == (2, 4, 5)
        assert np.allclose(nu.weights.sum(axis=2), 1.0)

    def test_histogram_weights_holding_times(self, rng):
        """Each block average counts for as long as it holds between events."""
        rec = run(torus(rng, 16), 1.0, T=0.5, N=16, seed=21)
        assert rec.events > 0
        nu = young_histogram(rec, 3, (2, 2))
        cut = rec.horizon / 2
        expected = np.zeros_like(nu.weights)
        for a, b in segments(rec):
            sites, dens = _block_average(height_at(rec, a), 3)
            col = (sites / rec.N >= nu.xi_edges[1]).astype(int)
            for i, (lo, hi) in enumerate([(a, min(b, cut)), (max(a, cut), b)]):
                if hi > lo:
                    np.add.at(expected[i], (col, np.rint(dens * 3).astype(int)), hi - lo)
        expected /= expected.sum(axis=2, keepdims=True)
        assert np.allclose(nu.weights, expected)

    def test_histogram_mean_is_time_averaged_density(self, rng):
        rec = run(torus(rng, 20), 1.0, T=1.0, N=20, seed=5)
        nu = young_histogram(rec, 3, (1, 2))
        averaged = np.zeros(2)
        for a, b in segments(rec):
            sites, dens = _block_average(height_at(rec, a), 3)
            right = sites / rec.N >= 0.5
            averaged += (b - a) * np.array([dens[~right].mean(), dens[right].mean()])
        assert np.allclose(nu.mean()[0], averaged / rec.horizon)

    def test_histogram_block_width(self, rng):
        rec = run(torus(rng, 12), 1.0, T=1.0, N=5, seed=0)
        with pytest.raises(DomainError, match="block width"):
            young_histogram(rec, 10, (1, 1))

    @pytest.mark.parametrize(
        "k, site, expected",
        [(1, 5, 0.0), (1, 6, 1.0), (2, 5, 0.5), (2, 6, 0.5), (2, 7, 0.0), (3, 4, 0.0), (3, 5, 1 / 3), (3, 7, 1 / 3), (3, 8, 0.0)],
    )
    def test_block_placement(self, k, site, expected):
        """One particle on the half-site 5 + 1/2; odd blocks reach one further to the left."""
        bits = np.zeros(12, dtype=int)
        bits[5] = 1
        h = HeightProfile(0, np.concatenate(([0], np.cumsum(bits))), Boundary.TORUS)
        sites, dens = _block_average(h, k)
        assert dens[sites == site][0] == pytest.approx(expected)

    def test_histogram_needs_torus(self):
        rec = run(wedge_profile(-10, 10), 1.0, T=1.0, N=5, seed=0)
        with pytest.raises(ProfileError):
            young_histogram(rec, 2, (1, 1))
