"""
Continuous-time TASEP growth with space-time dependent speed.

Every site owns a random stream keyed by (seed, site). Candidates arrive at
the global rate lambda_max and are accepted with probability
speed(t/N, x/N) / lambda_max; an accepted candidate grows the height at x
when x is mobile. Copies driven by the same streams are basically coupled.
Times inside a record are microscopic (macro time times N).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numba import njit

from config.settings import settings
from tasep.errors import DomainError, ProfileError, UnsafeWindowError
from tasep.lattice import Boundary, HeightProfile, MacroField, scale_profile
from tasep.ratefn import mobility_bound
from tasep.speedbuild import SimpleSpeed

logger = logging.getLogger(__name__)

# expected candidates generated per chunk across all sites
CHUNK_CANDIDATES = 1 << 21

SpeedLike = Union[SimpleSpeed, float]


# ============================================================================
# Kernels
# ============================================================================


@njit(cache=True)
def _replay_kernel(values, torus, count, sites, accepted, front):
    """Apply accepted candidates in order; returns which of them grew."""
    n = sites.size
    period = values.size - 1
    grown = np.zeros(n, dtype=np.bool_)
    for e in range(n):
        if not accepted[e]:
            continue
        i = sites[e]
        if not torus:
            if i == front[0] + 1:
                front[0] += 1
            if i == front[1] - 1:
                front[1] -= 1
        if torus:
            left = values[i - 1] if i > 0 else values[period - 1] - count
        else:
            left = values[i - 1]
        centre = values[i]
        if values[i + 1] - centre == 1 and centre == left:
            values[i] += 1
            if torus and i == 0:
                values[period] += 1
            grown[e] = True
    return grown


@njit(cache=True)
def _mobile(bits, i, torus):
    # site x_min + i is mobile when the half-site to its right is full and the one to its left empty
    n = bits.size
    if torus:
        return bits[i % n] == 1 and bits[(i - 1) % n] == 0
    if i < 1 or i > n - 1:
        return False
    return bits[i] == 1 and bits[i - 1] == 0


@njit(cache=True)
def _interval_kernel(bits, torus, times, sites, horizon):
    """Maximal time intervals on which each site stays mobile."""
    n_sites = bits.size if torus else bits.size + 1
    start = np.full(n_sites, -1.0)
    for i in range(n_sites):
        if _mobile(bits, i, torus):
            start[i] = 0.0
    cap = 3 * times.size + n_sites
    out_site = np.empty(cap, dtype=np.int64)
    out_lo = np.empty(cap)
    out_hi = np.empty(cap)
    m = 0
    nb = bits.size
    for e in range(times.size):
        i = sites[e]
        t = times[e]
        if torus:
            bits[(i - 1) % nb] += 1
            bits[i % nb] -= 1
        else:
            bits[i - 1] += 1
            bits[i] -= 1
        for d in range(-1, 2):
            j = i + d
            if torus:
                j = j % nb
            elif j < 0 or j >= n_sites:
                continue
            now = _mobile(bits, j, torus)
            if start[j] >= 0 and not now:
                out_site[m] = j
                out_lo[m] = start[j]
                out_hi[m] = t
                m += 1
                start[j] = -1.0
            elif start[j] < 0 and now:
                start[j] = t
    for j in range(n_sites):
        if start[j] >= 0:
            out_site[m] = j
            out_lo[m] = start[j]
            out_hi[m] = horizon
            m += 1
    return out_site[:m], out_lo[:m], out_hi[:m]


@njit(cache=True)
def _block_sum(bits, j, k):
    n = bits.size
    half_up = (k + 1) // 2
    total = 0
    for q in range(j - half_up, j - half_up + k):
        total += bits[q % n]
    return total


@njit(cache=True)
def _site_term(bits, blocks, j, w, k):
    n = bits.size
    avg = blocks[j] / k
    mob = 1.0 if (bits[j] == 1 and bits[(j - 1) % n] == 0) else 0.0
    return w[j] * (mob - avg * (1.0 - avg))


@njit(cache=True)
def _shift_bit(bits, blocks, q, d, k):
    n = bits.size
    half_up = (k + 1) // 2
    half_down = k // 2
    bits[q % n] += d
    for j in range(q - half_down + 1, q + half_up + 1):
        blocks[j % n] += d


@njit(cache=True)
def _one_block_kernel(bits, times, sites, edges, weights, k):
    """Time integral of sum_x G(x) (mobility - phi(block average)) on a torus."""
    n = bits.size
    half_up = (k + 1) // 2
    half_down = k // 2
    blocks = np.empty(n, dtype=np.int64)
    for j in range(n):
        blocks[j] = _block_sum(bits, j, k)

    total = 0.0
    e = 0
    for b in range(edges.size - 1):
        w = weights[b]
        s = 0.0
        for j in range(n):
            s += _site_term(bits, blocks, j, w, k)
        t_prev = edges[b]
        while e < times.size and times[e] < edges[b + 1]:
            i = sites[e]
            total += s * (times[e] - t_prev)
            t_prev = times[e]
            lo = min(i - 1, i - half_down)
            hi = max(i + 1, i + half_up)
            for j in range(lo, hi + 1):
                s -= _site_term(bits, blocks, j % n, w, k)
            # growth at x moves the particle from x + 1/2 to x - 1/2
            _shift_bit(bits, blocks, i - 1, 1, k)
            _shift_bit(bits, blocks, i, -1, k)
            for j in range(lo, hi + 1):
                s += _site_term(bits, blocks, j % n, w, k)
            e += 1
        total += s * (edges[b + 1] - t_prev)
    return total


@njit(cache=True)
def _young_kernel(bits, times, sites, edges, cols, n_xi, k):
    """Time each block average holds, per (time cell, column, j) with average j / k."""
    n = bits.size
    half_up = (k + 1) // 2
    half_down = k // 2
    blocks = np.empty(n, dtype=np.int64)
    for j in range(n):
        blocks[j] = _block_sum(bits, j, k)
    since = np.empty(n)
    counts = np.zeros((edges.size - 1, n_xi, k + 1))

    e = 0
    for b in range(edges.size - 1):
        since[:] = edges[b]
        while e < times.size and times[e] < edges[b + 1]:
            i = sites[e]
            t = times[e]
            for q in range(i - half_down, i + half_up + 1):
                j = q % n
                counts[b, cols[j], blocks[j]] += t - since[j]
                since[j] = t
            _shift_bit(bits, blocks, i - 1, 1, k)
            _shift_bit(bits, blocks, i, -1, k)
            e += 1
        for j in range(n):
            counts[b, cols[j], blocks[j]] += edges[b + 1] - since[j]
    return counts


# ============================================================================
# Records
# ============================================================================


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    initial: HeightProfile
    N: int
    T: float
    event_times: np.ndarray
    event_sites: np.ndarray
    seed: int
    speed: SimpleSpeed
    lambda_max: float
    candidates: int = 0
    front_left: Optional[int] = None
    front_right: Optional[int] = None
    observe: Optional[Tuple[int, int]] = None

    @property
    def horizon(self) -> float:
        """Microscopic horizon T N."""
        return self.T * self.N

    @property
    def events(self) -> int:
        return int(self.event_times.size)

    @property
    def torus(self) -> bool:
        return self.initial.boundary is Boundary.TORUS

    def exact_sites(self) -> Tuple[int, int]:
        """Sites whose heights are not influenced by the frozen window ends."""
        if self.torus:
            return self.initial.x_min, self.initial.x_max
        return self.front_left + 1, self.front_right - 1

    @property
    def margin_violated(self) -> bool:
        if self.torus or self.observe is None:
            return False
        lo, hi = self.exact_sites()
        return not (lo <= self.observe[0] and self.observe[1] <= hi)


def safety_margin(lambda_max: float, N: int, T: float) -> int:
    mean = lambda_max * N * T
    return int(math.ceil(mean + settings.MARGIN_SIGMAS * math.sqrt(mean)))


def _as_speed(speed: SpeedLike, T: float) -> SimpleSpeed:
    if isinstance(speed, (int, float)):
        return SimpleSpeed.constant(float(speed), T)
    if speed.horizon < T - 1e-12:
        raise DomainError(f"speed defined up to {speed.horizon}, run needs {T}")
    return speed


def _zigzag(x: int) -> int:
    return 2 * x if x >= 0 else -2 * x - 1


def _candidate_sites(h: HeightProfile) -> np.ndarray:
    if h.boundary is Boundary.TORUS:
        return np.arange(h.period, dtype=np.int64)
    return np.arange(1, h.period, dtype=np.int64)


def _candidates(h: HeightProfile, lam_max: float, horizon: float, seed: int) -> Iterator[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Time-sorted (micro time, relative site, uniform) chunks."""
    rel = _candidate_sites(h)
    streams = [np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_zigzag(h.x_min + int(i)),))) for i in rel]
    expected = lam_max * horizon * max(rel.size, 1)
    n_chunks = max(1, int(math.ceil(expected / CHUNK_CANDIDATES)))
    edges = np.linspace(0.0, horizon, n_chunks + 1)
    for lo, hi in zip(edges[:-1], edges[1:]):
        times, sites, uniforms = [], [], []
        for i, rng in zip(rel, streams):
            count = rng.poisson(lam_max * (hi - lo))
            times.append(lo + (hi - lo) * rng.random(count))
            uniforms.append(rng.random(count))
            sites.append(np.full(count, i, dtype=np.int64))
        times = np.concatenate(times) if times else np.empty(0)
        order = np.argsort(times, kind="stable")
        yield (
            times[order],
            (np.concatenate(sites) if sites else np.empty(0, np.int64))[order],
            (np.concatenate(uniforms) if uniforms else np.empty(0))[order],
        )


def run_coupled(
    initials: Sequence[HeightProfile],
    speed: SpeedLike,
    T: float,
    N: int,
    seed: int,
    observe: Optional[Tuple[int, int]] = None,
) -> List[TrajectoryRecord]:
    """Copies driven by one candidate stream; each applies its own mobility."""
    if T <= 0 or N < 1:
        raise DomainError("T and N must be positive")
    first = initials[0]
    for h in initials[1:]:
        if h.x_min != first.x_min or h.x_max != first.x_max or h.boundary is not first.boundary:
            raise ProfileError("coupled copies need identical windows and boundary modes")
    speed = _as_speed(speed, T)
    lam_max = speed.max_value
    horizon = T * N
    torus = first.boundary is Boundary.TORUS

    states = [np.array(h.values, dtype=np.int64) for h in initials]
    fronts = [np.array([0, first.period], dtype=np.int64) for _ in initials]
    kept_times: List[List[np.ndarray]] = [[] for _ in initials]
    kept_sites: List[List[np.ndarray]] = [[] for _ in initials]
    total = 0
    for times, rel, u in _candidates(first, lam_max, horizon, seed):
        total += times.size
        if not times.size:
            continue
        t_macro = np.minimum(times / N, np.nextafter(speed.horizon, 0))
        ratio = speed.evaluate_many(t_macro, (first.x_min + rel) / N) / lam_max
        accepted = u < ratio
        for c, h in enumerate(initials):
            grown = _replay_kernel(states[c], torus, h.particle_count, rel, accepted, fronts[c])
            kept_times[c].append(times[grown])
            kept_sites[c].append(first.x_min + rel[grown])

    records = []
    for c, h in enumerate(initials):
        rec = TrajectoryRecord(
            initial=h,
            N=N,
            T=T,
            event_times=np.concatenate(kept_times[c]) if kept_times[c] else np.empty(0),
            event_sites=np.concatenate(kept_sites[c]) if kept_sites[c] else np.empty(0, np.int64),
            seed=seed,
            speed=speed,
            lambda_max=lam_max,
            candidates=total,
            front_left=None if torus else first.x_min + int(fronts[c][0]),
            front_right=None if torus else first.x_min + int(fronts[c][1]),
            observe=observe,
        )
        if rec.margin_violated:
            logger.warning(f"Boundary influence reached the observation window {observe} (seed {seed})")
        records.append(rec)
    logger.debug(f"Simulated {len(initials)} copies: {total} candidates, events {[r.events for r in records]}")
    return records


def run(
    initial: HeightProfile,
    speed: SpeedLike,
    T: float,
    N: int,
    seed: int,
    observe: Optional[Tuple[int, int]] = None,
) -> TrajectoryRecord:
    return run_coupled([initial], speed, T, N, seed, observe)[0]


# ============================================================================
# Replay and observables
# ============================================================================


def height_at(rec: TrajectoryRecord, t: float, macro: bool = False) -> HeightProfile:
    micro = t * rec.N if macro else t
    if not -1e-12 <= micro <= rec.horizon + 1e-9:
        raise DomainError(f"t={t} outside the recorded horizon")
    h = rec.initial
    upto = np.searchsorted(rec.event_times, micro, side="right")
    counts = np.bincount(rec.event_sites[:upto] - h.x_min, minlength=h.values.size)
    values = h.values + counts
    if rec.torus:
        values[-1] += counts[0]
    return h.with_values(values)


def _check_window(rec: TrajectoryRecord, lo: int, hi: int):
    safe_lo, safe_hi = rec.exact_sites()
    if lo < safe_lo or hi > safe_hi or lo > hi:
        raise UnsafeWindowError(f"window [{lo}, {hi}] not inside the exact region [{safe_lo}, {safe_hi}]")


def empirical_flux(rec: TrajectoryRecord, window: Tuple[int, int], t1: float, t2: float) -> float:
    """Mean height growth per site per unit macro time over [t1, t2]."""
    lo, hi = window
    _check_window(rec, lo, hi)
    if not 0 <= t1 < t2 <= rec.T + 1e-12:
        raise DomainError(f"[{t1}, {t2}] is not a time window of [0, {rec.T}]")
    times = rec.event_times
    mask = (times > t1 * rec.N) & (times <= t2 * rec.N) & (rec.event_sites >= lo) & (rec.event_sites <= hi)
    return float(np.count_nonzero(mask)) / ((hi - lo + 1) * rec.N * (t2 - t1))


def mobility_intervals(rec: TrajectoryRecord) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(site, start, end) of every maximal micro-time interval on which the site is mobile."""
    h = rec.initial
    bits = np.diff(h.values).astype(np.int64)
    rel, lo, hi = _interval_kernel(bits, rec.torus, rec.event_times, rec.event_sites - h.x_min, rec.horizon)
    return h.x_min + rel, lo, hi


def integrated_speed(
    rec: TrajectoryRecord,
    sites: np.ndarray,
    starts: np.ndarray,
    ends: np.ndarray,
    speed: Optional[SpeedLike] = None,
    transform: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> np.ndarray:
    """Exact integral of transform(speed(t/N, x/N)) over each micro interval."""
    speed = rec.speed if speed is None else _as_speed(speed, rec.T)
    breaks = speed.t_breaks * rec.N
    out = np.zeros(sites.size)
    for k, prof in enumerate(speed.profiles):
        overlap = np.clip(np.minimum(ends, breaks[k + 1]) - np.maximum(starts, breaks[k]), 0.0, None)
        if np.any(overlap):
            values = prof(sites / rec.N)
            out += overlap * (values if transform is None else np.asarray(transform(values), float))
    return out


def expected_flux(
    rec: TrajectoryRecord,
    window: Tuple[int, int],
    t1: float,
    t2: float,
    speed: Optional[SpeedLike] = None,
) -> float:
    """Compensator of empirical_flux: integral of speed times mobility."""
    lo, hi = window
    _check_window(rec, lo, hi)
    sites, starts, ends = mobility_intervals(rec)
    keep = (sites >= lo) & (sites <= hi)
    starts = np.clip(starts[keep], t1 * rec.N, t2 * rec.N)
    ends = np.clip(ends[keep], t1 * rec.N, t2 * rec.N)
    total = float(np.sum(integrated_speed(rec, sites[keep], starts, ends, speed)))
    return total / ((hi - lo + 1) * rec.N * (t2 - t1))


def scaled_field(rec: TrajectoryRecord, t_grid: Sequence[float], xi_grid: Sequence[float]) -> MacroField:
    """Snapshots h(tN, xi N) / N, linear between lattice points."""
    xi_grid = np.asarray(xi_grid, dtype=float)
    lo, hi = rec.exact_sites()
    if xi_grid[0] * rec.N < lo or xi_grid[-1] * rec.N > hi:
        raise UnsafeWindowError(f"[{xi_grid[0]}, {xi_grid[-1]}] leaves the exact region [{lo}, {hi}] / N")
    rows = [scale_profile(height_at(rec, t, macro=True), rec.N)(xi_grid) for t in t_grid]
    return MacroField(np.asarray(t_grid, float), xi_grid, np.vstack(rows))


def local_density(rec: TrajectoryRecord, t: float, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Block averages of the k half-sites nearest each site (for odd k the extra half-site is on the left) at macro time t."""
    if k < 1:
        raise DomainError("block width k must be >= 1")
    h = height_at(rec, t, macro=True)
    return _block_average(h, k)


def _block_average(h: HeightProfile, k: int) -> Tuple[np.ndarray, np.ndarray]:
    bits = np.diff(h.values).astype(float)
    half_up = (k + 1) // 2
    if h.boundary is Boundary.TORUS:
        padded = np.concatenate((bits[-half_up:] if half_up else bits[:0], bits, bits[: k - half_up]))
        sums = np.convolve(padded, np.ones(k), mode="valid")[: bits.size]
        return h.sites[:-1], sums / k
    sums = np.convolve(bits, np.ones(k), mode="valid")
    sites = h.x_min + half_up + np.arange(sums.size)
    return sites, sums / k


# ============================================================================
# Appendix statistics
# ============================================================================


def one_block_stat(
    rec: TrajectoryRecord,
    G: Callable[[float, np.ndarray], np.ndarray],
    k: int,
    time_cells: int = 1,
) -> float:
    """Integral of sum_x G (mobility - phi(block average)); G frozen per time cell."""
    if not rec.torus:
        raise ProfileError("the one-block statistic is defined on a torus")
    h = rec.initial
    if not 1 <= k <= h.period - 3:
        raise DomainError(f"block width k={k} must lie in [1, {h.period - 3}]")
    bits = np.diff(h.values).astype(np.int64)
    edges = np.linspace(0.0, rec.horizon, time_cells + 1)
    xi = h.sites[:-1] / rec.N
    weights = np.vstack([np.broadcast_to(np.asarray(G(0.5 * (a + b) / rec.N, xi), float), xi.shape) for a, b in zip(edges[:-1], edges[1:])])
    micro = _one_block_kernel(bits, rec.event_times, rec.event_sites - h.x_min, edges, weights, k)
    return micro / rec.N


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if atoms.shape != weights.shape or np.any(weights < 0) or not math.isclose(weights.sum(), 1.0, abs_tol=1e-12):
            raise DomainError("weights must be nonnegative and sum to one")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    def mean(self) -> float:
        return float(np.dot(self.atoms, self.weights))

    def integrate(self, fn: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(np.asarray(fn(self.atoms), float), self.weights))


def two_point_measure(rho1: float, rho2: float, rho_bar: float) -> DiscreteMeasure:
    if not rho1 > rho2 or not rho2 <= rho_bar <= rho1:
        raise DomainError(f"need rho2 <= rho_bar <= rho1 with rho1 > rho2, got ({rho1}, {rho2}, {rho_bar})")
    w1 = (rho_bar - rho2) / (rho1 - rho2)
    atoms, weights = np.array([rho1, rho2]), np.array([w1, 1 - w1])
    keep = weights > 0
    return DiscreteMeasure(atoms[keep], weights[keep])


@dataclass(frozen=True, eq=False)
class EmpiricalYoungMeasure:
    t_edges: np.ndarray
    xi_edges: np.ndarray
    k: int
    weights: np.ndarray  # (time cells, space cells, k + 1) over atoms j / k

    @property
    def atoms(self) -> np.ndarray:
        return np.arange(self.k + 1) / self.k

    def mean(self) -> np.ndarray:
        return self.weights @ self.atoms

    def integrate(self, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        return self.weights @ np.asarray(fn(self.atoms), float)

    @classmethod
    def from_measure(cls, measure: DiscreteMeasure, t_edges, xi_edges, k: int) -> "EmpiricalYoungMeasure":
        """The same measure in every cell; atoms must be multiples of 1/k."""
        j = np.rint(measure.atoms * k).astype(int)
        if np.any(np.abs(j - measure.atoms * k) > 1e-9):
            raise DomainError(f"atoms {measure.atoms} are not multiples of 1/{k}")
        row = np.zeros(k + 1)
        np.add.at(row, j, measure.weights)
        t_edges, xi_edges = np.asarray(t_edges, float), np.asarray(xi_edges, float)
        weights = np.broadcast_to(row, (t_edges.size - 1, xi_edges.size - 1, k + 1)).copy()
        return cls(t_edges, xi_edges, k, weights)

    def cell(self, i: int, j: int) -> DiscreteMeasure:
        keep = self.weights[i, j] > 0
        return DiscreteMeasure(self.atoms[keep], self.weights[i, j][keep] / self.weights[i, j][keep].sum())


def young_histogram(
    rec: TrajectoryRecord,
    k: int,
    cells: Tuple[int, int],
) -> EmpiricalYoungMeasure:
    """Histograms of block averages per space-time cell, weighted by how long each value holds between events."""
    if not rec.torus:
        raise ProfileError("Young measures are collected on a torus")
    h0 = rec.initial
    if not 1 <= k <= h0.period - 3:
        raise DomainError(f"block width k={k} must lie in [1, {h0.period - 3}]")
    n_t, n_xi = cells
    t_edges = np.linspace(0.0, rec.T, n_t + 1)
    xi_edges = np.linspace(h0.x_min / rec.N, h0.x_max / rec.N, n_xi + 1)
    sites = h0.sites[:-1]
    cols = np.clip(np.searchsorted(xi_edges, sites / rec.N, side="right") - 1, 0, n_xi - 1).astype(np.int64)
    bits = np.diff(h0.values).astype(np.int64)
    counts = _young_kernel(bits, rec.event_times, rec.event_sites - h0.x_min, t_edges * rec.N, cols, n_xi, k)
    totals = counts.sum(axis=2, keepdims=True)
    return EmpiricalYoungMeasure(t_edges, xi_edges, k, counts / np.where(totals > 0, totals, 1.0))


def young_measure_at_time(h: HeightProfile, N: int, k: int, n_xi: int) -> EmpiricalYoungMeasure:
    """Histogram of a single profile, one time cell."""
    xi_edges = np.linspace(h.x_min / N, h.x_max / N, n_xi + 1)
    sites, dens = _block_average(h, k)
    counts = np.zeros((1, n_xi, k + 1))
    col = np.clip(np.searchsorted(xi_edges, sites / N, side="right") - 1, 0, n_xi - 1)
    np.add.at(counts[0], (col, np.rint(dens * k).astype(int)), 1.0)
    totals = counts.sum(axis=2, keepdims=True)
    return EmpiricalYoungMeasure(np.array([0.0, 0.0]), xi_edges, k, counts / np.where(totals > 0, totals, 1.0))


def mv_residual(
    h: MacroField,
    nu: EmpiricalYoungMeasure,
    test_fns: Sequence[Callable[[np.ndarray, np.ndarray], np.ndarray]],
) -> float:
    """Max over z of |sum over cells z(centre) (int h_t - |cell| int phi dnu)|."""
    if not test_fns:
        return 0.0
    n_t, n_xi = nu.weights.shape[:2]
    flux = nu.integrate(lambda rho: mobility_bound(rho))
    growth = np.zeros((n_t, n_xi))
    for i in range(n_t):
        delta = h.at_time(nu.t_edges[i + 1]).values - h.at_time(nu.t_edges[i]).values
        for j in range(n_xi):
            lo, hi = nu.xi_edges[j], nu.xi_edges[j + 1]
            xs = np.concatenate(([lo], h.xi_grid[(h.xi_grid > lo) & (h.xi_grid < hi)], [hi]))
            ys = np.interp(xs, h.xi_grid, delta)
            growth[i, j] = float(np.sum(0.5 * np.diff(xs) * (ys[1:] + ys[:-1])))
    area = np.outer(np.diff(nu.t_edges), np.diff(nu.xi_edges))
    density = growth - area * flux
    tc = 0.5 * (nu.t_edges[:-1] + nu.t_edges[1:])
    xc = 0.5 * (nu.xi_edges[:-1] + nu.xi_edges[1:])
    tt, xx = np.meshgrid(tc, xc, indexing="ij")
    return float(max(abs(np.sum(np.broadcast_to(np.asarray(z(tt, xx), float), tt.shape) * density)) for z in test_fns))
