"""
Tilting speed functions built from a piecewise-linear deviation g.

The domain [0,T] x [-r*, r*] is cut into slabs and transition zones, then
each slab into buffers around the skeleton edges of the triangulation and
reduced triangles. Reduced triangles with speed below one are filled with
thin intermittent stripes separated by residual strips of speed one.
Geometry is kept in exact rationals; triplets are floats.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from models.data_models import InvariantViolation, PartitionReport, RegionTriplet
from tasep.errors import ConfigurationError, ConsistencyError, ConstructionError, DomainError
from tasep.lattice import TriangleId, Triangulation

logger = logging.getLogger(__name__)


# ============================================================================
# Simple speed functions
# ============================================================================


@dataclass(frozen=True, eq=False)
class SpeedProfile:
    """Piecewise-constant xi-profile: values[k] holds between breaks[k-1] and breaks[k]."""

    breaks: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        breaks = np.asarray(self.breaks, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.size != breaks.size + 1:
            raise DomainError("a profile needs one more value than breaks")
        if np.any(np.diff(breaks) <= 0):
            raise DomainError("profile breaks must be strictly increasing")
        if np.any(values <= 0):
            raise DomainError("speeds must be positive")
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "values", values)

    def __call__(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        idx = np.searchsorted(self.breaks, xi, side="left")
        out = self.values[idx]
        if self.breaks.size:
            clipped = np.minimum(idx, self.breaks.size - 1)
            on_break = (idx < self.breaks.size) & (self.breaks[clipped] == xi)
            # lower semicontinuous: a discontinuity takes the smaller side
            out = np.where(on_break, np.minimum(out, self.values[np.minimum(idx + 1, self.values.size - 1)]), out)
        return out


@dataclass(frozen=True, eq=False)
class SimpleSpeed:
    """Speed piecewise constant in t (right-continuous) with lsc xi-profiles."""

    t_breaks: np.ndarray
    profiles: Tuple[SpeedProfile, ...]
    r_star: Optional[float] = None

    def __post_init__(self):
        t_breaks = np.asarray(self.t_breaks, dtype=float)
        if t_breaks.ndim != 1 or t_breaks.size < 2 or t_breaks[0] != 0 or np.any(np.diff(t_breaks) <= 0):
            raise DomainError("time breakpoints must increase from 0")
        if len(self.profiles) != t_breaks.size - 1:
            raise DomainError("one profile per time interval is required")
        object.__setattr__(self, "t_breaks", t_breaks)
        object.__setattr__(self, "profiles", tuple(self.profiles))
        if self.r_star is not None:
            for p in self.profiles:
                inside = p.breaks.size == 0 or (p.breaks[0] >= -self.r_star - 1e-12 and p.breaks[-1] <= self.r_star + 1e-12)
                if not inside or (p.breaks.size and (p.values[0] != 1 or p.values[-1] != 1)):
                    raise DomainError("speed must equal 1 outside [-r*, r*]")

    @classmethod
    def constant(cls, value: float, horizon: float) -> "SimpleSpeed":
        return cls(np.array([0.0, horizon]), (SpeedProfile(np.empty(0), np.array([value])),))

    @property
    def horizon(self) -> float:
        return float(self.t_breaks[-1])

    @property
    def max_value(self) -> float:
        return float(max(p.values.max() for p in self.profiles))

    @property
    def min_value(self) -> float:
        return float(min(p.values.min() for p in self.profiles))

    def time_breaks(self) -> np.ndarray:
        return self.t_breaks

    def piece(self, t: float) -> int:
        if not 0 <= t < self.horizon:
            raise DomainError(f"t={t} outside [0, {self.horizon})")
        return int(np.searchsorted(self.t_breaks, t, side="right") - 1)

    def evaluate(self, t: float, xi: float) -> float:
        return float(self.profiles[self.piece(t)](xi))

    def evaluate_many(self, t, xi) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        xi = np.asarray(xi, dtype=float)
        t, xi = np.broadcast_arrays(t, xi)
        if t.size and (t.min() < 0 or t.max() >= self.horizon):
            raise DomainError(f"times outside [0, {self.horizon})")
        pieces = np.searchsorted(self.t_breaks, t, side="right") - 1
        out = np.empty(t.shape, dtype=float)
        for k in np.unique(pieces):
            mask = pieces == k
            out[mask] = self.profiles[k](xi[mask])
        return out

    def segment_breaks(self, t0: float, x0: float, t1: float, x1: float) -> np.ndarray:
        """Fractions u in (0,1) where the segment (t0,x0)-(t1,x1) meets a discontinuity."""
        inner_t = self.t_breaks[(self.t_breaks > t0) & (self.t_breaks < t1)]
        cuts = list((inner_t - t0) / (t1 - t0))
        if x1 != x0:
            edges = [0.0] + cuts + [1.0]
            for u_lo, u_hi in zip(edges[:-1], edges[1:]):
                t_mid = t0 + 0.5 * (u_lo + u_hi) * (t1 - t0)
                beta = self.profiles[self.piece(min(max(t_mid, 0.0), np.nextafter(self.horizon, 0)))].breaks
                u = (beta - x0) / (x1 - x0)
                cuts.extend(u[(u > u_lo) & (u < u_hi)])
        return np.unique(np.asarray(cuts, dtype=float))

    def to_dict(self) -> Dict:
        return {
            "t_breaks": self.t_breaks.tolist(),
            "profiles": [{"xi_breaks": p.breaks.tolist(), "values": p.values.tolist()} for p in self.profiles],
            "r_star": self.r_star,
        }

    @classmethod
    def from_dict(cls, doc: Dict) -> "SimpleSpeed":
        profiles = tuple(SpeedProfile(np.asarray(p["xi_breaks"], float), np.asarray(p["values"], float)) for p in doc["profiles"])
        return cls(np.asarray(doc["t_breaks"], float), profiles, doc.get("r_star"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "SimpleSpeed":
        return cls.from_dict(json.loads(text))


# ============================================================================
# Zoned partitions
# ============================================================================


class RegionKind(str, Enum):
    TRANSITION = "transition"
    VERTICAL_BUFFER = "vertical_buffer"
    DIAGONAL_BUFFER = "diagonal_buffer"
    REDUCED_TRIANGLE = "reduced_triangle"
    STRIPE = "intermittent_stripe"
    TERMINAL = "intermittent_terminal"
    RESIDUAL_HIGH = "residual_high"
    RESIDUAL_LOW = "residual_low"


@dataclass(frozen=True)
class Line:
    """xi = base + slope * t."""

    base: Fraction
    slope: Fraction = Fraction(0)

    def at(self, t: Fraction) -> Fraction:
        return self.base + self.slope * t


@dataclass(frozen=True)
class Region:
    rid: int
    kind: RegionKind
    t_lo: Fraction
    t_hi: Fraction
    left: Line
    right: Line
    triplet: Optional[RegionTriplet] = None
    parent: Optional[TriangleId] = None

    @property
    def lam(self) -> float:
        return self.triplet.lam if self.triplet is not None else 1.0

    @property
    def area(self) -> Fraction:
        width_lo = self.right.at(self.t_lo) - self.left.at(self.t_lo)
        width_hi = self.right.at(self.t_hi) - self.left.at(self.t_hi)
        return (self.t_hi - self.t_lo) * (width_lo + width_hi) / 2


@dataclass
class ZonedPartition:
    regions: List[Region]
    tau: Fraction
    b: Fraction
    horizon: Fraction
    m: int
    n: int
    r_star: Fraction
    r_upper_star: Fraction
    lambda_max: float
    report: Optional[PartitionReport] = None

    @property
    def slope(self) -> Fraction:
        return self.b / self.tau

    @property
    def fine_tau(self) -> Fraction:
        return self.tau / (self.m * self.n ** 2)

    @property
    def fine_b(self) -> Fraction:
        return self.b / (self.m * self.n ** 2)

    def of_kind(self, *kinds: RegionKind) -> List[Region]:
        return [r for r in self.regions if r.kind in kinds]

    def band_times(self) -> List[Fraction]:
        return sorted({r.t_lo for r in self.regions} | {r.t_hi for r in self.regions})

    def bands(self) -> Iterable[Tuple[Fraction, Fraction, List[Region]]]:
        """Horizontal bands with their regions sorted left to right."""
        by_span: Dict[Tuple[Fraction, Fraction], List[Region]] = {}
        for r in self.regions:
            by_span.setdefault((r.t_lo, r.t_hi), []).append(r)
        times = self.band_times()
        for lo, hi in zip(times[:-1], times[1:]):
            mid = (lo + hi) / 2
            members = [r for (a, b), rs in by_span.items() if a <= lo and b >= hi for r in rs]
            members.sort(key=lambda r: (r.left.at(mid), r.right.at(mid)))
            yield lo, hi, members


def r_upper_star(r_star: float, horizon: float, lambda_max: float) -> Fraction:
    r = Fraction(r_star)
    return r + r * math.ceil(Fraction(horizon) * Fraction(lambda_max) / r)


def solve_diagonal_triplet(left: RegionTriplet, right: RegionTriplet, slope: float = 1.0) -> RegionTriplet:
    s = float(slope)
    alpha = left.kappa + s * left.rho
    alpha_right = right.kappa + s * right.rho
    if abs(alpha - alpha_right) > 1e-9 * max(1.0, abs(alpha)):
        raise ConsistencyError(f"kappa + slope*rho differs across the edge: {alpha!r} vs {alpha_right!r}")
    if not (2 * left.rho - 1) * left.lam < s < (2 * right.rho - 1) * right.lam:
        return left

    def quadratic(rho: float) -> float:
        return s * rho * rho - 2 * alpha * rho + alpha

    lo, hi = 0.5, 1.0
    if not quadratic(lo) > 0 > quadratic(hi):
        raise ConstructionError(f"no buffer density in (1/2, 1) for alpha={alpha!r}, slope={s!r}")
    rho = brentq(quadratic, lo, hi, xtol=1e-12, rtol=4 * np.finfo(float).eps)
    return RegionTriplet.from_speed(s / (2 * rho - 1), rho)


def residual_split(kappa: float, rho_bar: float) -> Tuple[float, float, float, float]:
    """Densities rho1 > rho2 with rho(1-rho) = kappa and weights averaging to rho_bar."""
    if not 0 < kappa < 0.25:
        raise DomainError(f"kappa={kappa} must lie in (0, 1/4)")
    root = math.sqrt(1 - 4 * kappa)
    rho1 = 0.5 * (1 + root)
    rho2 = 1 - rho1
    if not rho2 - 1e-12 <= rho_bar <= rho1 + 1e-12:
        raise DomainError(f"rho_bar={rho_bar} outside [{rho2}, {rho1}]")
    w1 = min(max((rho_bar - rho2) / (rho1 - rho2), 0.0), 1.0)
    return rho1, rho2, w1, 1 - w1


class _PartitionBuilder:
    def __init__(self, tri: Triangulation, m: int, n: int, r_upper: Fraction):
        self.tri = tri
        self.m, self.n = m, n
        self.tau = Fraction(tri.tau)
        self.b = Fraction(tri.b)
        self.horizon = Fraction(tri.horizon)
        self.r = r_upper
        self.s = self.b / self.tau
        self.tau1 = self.tau / m
        self.b1 = self.b / m
        self.b2 = self.b1 / n ** 2
        self.regions: List[Region] = []

    def add(self, kind, t_lo, t_hi, left: Line, right: Line, triplet=None, parent=None):
        self.regions.append(Region(len(self.regions), kind, t_lo, t_hi, left, right, triplet, parent))

    def column(self, j: int) -> Fraction:
        return -self.r + j * self.b

    def triplet(self, i: int, j: int, side: str) -> RegionTriplet:
        kappa, rho, lam = self.tri.triplet((i, j, side))
        return RegionTriplet(kappa=kappa, rho=rho, lam=lam)

    def build(self) -> List[Region]:
        n_slabs = self.tri.n_slabs
        edge_l, edge_r = Line(-self.r), Line(self.r)
        margin = 3 * self.tau1
        self.add(RegionKind.TRANSITION, Fraction(0), margin, edge_l, edge_r)
        for i in range(n_slabs):
            if i > 0:
                self.add(RegionKind.TRANSITION, i * self.tau - margin, i * self.tau + margin, edge_l, edge_r)
            self.build_slab(i)
        self.add(RegionKind.TRANSITION, self.horizon - margin, self.horizon, edge_l, edge_r)
        return self.regions

    def build_slab(self, i: int):
        t_lo = i * self.tau + 3 * self.tau1
        t_hi = (i + 1) * self.tau - 3 * self.tau1
        n_cols = self.tri.n_cols
        for j in range(n_cols + 1):
            x = self.column(j)
            kappa_e = self.triplet(i, j - 1, "R").kappa if j > 0 else self.triplet(i, j, "L").kappa
            self.add(
                RegionKind.VERTICAL_BUFFER, t_lo, t_hi,
                Line(max(x - self.b1, -self.r)), Line(min(x + self.b1, self.r)),
                RegionTriplet.from_flux(kappa_e, 0.5), ("vertical", i, j),
            )
        for j in range(n_cols):
            diag = Line(self.column(j) - self.s * i * self.tau, self.s)
            lower = Line(diag.base - self.b1, self.s)
            upper = Line(diag.base + self.b1, self.s)
            tri_l, tri_r = self.triplet(i, j, "L"), self.triplet(i, j, "R")
            self.add(RegionKind.DIAGONAL_BUFFER, t_lo, t_hi, lower, upper,
                     solve_diagonal_triplet(tri_l, tri_r, float(self.s)), ("diagonal", i, j))
            left_edge = Line(self.column(j) + self.b1)
            right_edge = Line(self.column(j + 1) - self.b1)
            self.reduced(i, j, "L", tri_l, t_lo, t_hi, left_edge, lower)
            self.reduced(i, j, "R", tri_r, t_lo, t_hi, upper, right_edge)

    def reduced(self, i, j, side, trip: RegionTriplet, t_lo, t_hi, left: Line, right: Line):
        parent = (i, j, side)
        if trip.lam >= 1:
            self.add(RegionKind.REDUCED_TRIANGLE, t_lo, t_hi, left, right, trip, parent)
            return
        rho1, rho2, w1, _ = residual_split(trip.kappa, trip.rho)
        residuals = (RegionTriplet.from_speed(1.0, rho1), RegionTriplet.from_speed(1.0, rho2))
        split = Fraction(w1) * (self.n - 1) * self.b2
        period = self.n * self.b2
        x_j = self.column(j)
        for k in range(3, self.m - 3):
            lo = i * self.tau + k * self.tau1
            hi = lo + self.tau1
            if side == "L":
                start = left.base
                cut = x_j + (k - 2) * self.b1
                for p in range(self.n * (k - 3)):
                    a = start + p * period
                    self.strip(lo, hi, a, trip, residuals, split, parent, stripe_first=True)
                self.add(RegionKind.TERMINAL, lo, hi, Line(cut), right, trip, parent)
            else:
                end = right.base
                cut = x_j + (k + 3) * self.b1
                self.add(RegionKind.TERMINAL, lo, hi, left, Line(cut), trip, parent)
                count = self.n * (self.m - k - 4)
                for p in reversed(range(count)):
                    a = end - (p + 1) * period
                    self.strip(lo, hi, a, trip, residuals, split, parent, stripe_first=False)

    def strip(self, lo, hi, a, trip, residuals, split, parent, stripe_first: bool):
        """One period starting at a: a stripe and the two residual parts."""
        b2 = self.b2
        period = self.n * b2
        stripe_at = a if stripe_first else a + period - b2
        res_at = a + b2 if stripe_first else a
        pieces = [(RegionKind.STRIPE, stripe_at, stripe_at + b2, trip)]
        if split > 0:
            pieces.append((RegionKind.RESIDUAL_HIGH, res_at, res_at + split, residuals[0]))
        if split < (self.n - 1) * b2:
            pieces.append((RegionKind.RESIDUAL_LOW, res_at + split, res_at + (self.n - 1) * b2, residuals[1]))
        for kind, x0, x1, t in sorted(pieces, key=lambda p: p[1]):
            self.add(kind, lo, hi, Line(x0), Line(x1), t, parent)


def _validate(zp: ZonedPartition) -> PartitionReport:
    violations: List[InvariantViolation] = []
    s = float(zp.slope)
    tol = 1e-9
    seen = set()
    for lo, hi, members in zp.bands():
        band = f"band [{float(lo):.6g}, {float(hi):.6g}]"
        if not members:
            violations.append(InvariantViolation(edge_id=band, identity="tiling", detail="no region"))
            continue
        first, last = members[0], members[-1]
        if first.left != Line(-zp.r_upper_star) or last.right != Line(zp.r_upper_star):
            violations.append(InvariantViolation(edge_id=band, identity="tiling", detail="does not span [-r*, r*]"))
        for a, b in zip(members[:-1], members[1:]):
            if a.right != b.left:
                violations.append(InvariantViolation(edge_id=f"{a.rid}|{b.rid}", identity="tiling", detail=f"gap or overlap in {band}"))
                continue
            if (a.rid, b.rid) in seen or a.triplet is None or b.triplet is None:
                continue
            seen.add((a.rid, b.rid))
            violations.extend(_check_edge(a, b, s, tol))
    vmax = max(zp.lambda_max, 1.0)
    for r in zp.of_kind(RegionKind.VERTICAL_BUFFER):
        if r.triplet.lam > vmax + tol:
            violations.append(InvariantViolation(
                edge_id=str(r.rid), identity="buffer speed within range",
                detail=f"4 kappa = {r.triplet.lam:.6g} above {vmax:.6g}",
            ))
    area = sum((r.area for r in zp.regions), Fraction(0))
    expected = zp.horizon * 2 * zp.r_upper_star
    if area != expected:
        violations.append(InvariantViolation(edge_id="domain", identity="tiling", detail=f"area {float(area)} != {float(expected)}"))
    return PartitionReport(
        regions=len(zp.regions), checked_edges=len(seen),
        covered_area=float(area), expected_area=float(expected), violations=violations,
    )


def _check_edge(a: Region, b: Region, s: float, tol: float) -> List[InvariantViolation]:
    edge = f"{a.rid}|{b.rid}"
    lm, lp = a.triplet, b.triplet
    out = []
    if a.right.slope == 0:
        if abs(lm.kappa - lp.kappa) > tol:
            out.append(InvariantViolation(edge_id=edge, identity="flux balance across vertical edge",
                                          detail=f"kappa {lm.kappa:.12g} vs {lp.kappa:.12g}"))
        if not (2 * lm.rho - 1 >= -tol or 2 * lp.rho - 1 <= tol):
            out.append(InvariantViolation(edge_id=edge, identity="non-diverging characteristics across vertical edge",
                                          detail=f"rho {lm.rho:.6g} | {lp.rho:.6g}"))
    else:
        if abs(lm.kappa + s * lm.rho - lp.kappa - s * lp.rho) > tol:
            out.append(InvariantViolation(edge_id=edge, identity="flux balance across diagonal edge",
                                          detail=f"alpha {lm.kappa + s * lm.rho:.12g} vs {lp.kappa + s * lp.rho:.12g}"))
        if not ((2 * lm.rho - 1) * lm.lam >= s - tol or (2 * lp.rho - 1) * lp.lam <= s + tol):
            out.append(InvariantViolation(edge_id=edge, identity="non-diverging characteristics across diagonal edge",
                                          detail=f"(2rho-1)lam {(2 * lm.rho - 1) * lm.lam:.6g} | {(2 * lp.rho - 1) * lp.lam:.6g}"))
    return out


def build_regions(tri: Triangulation, m: int, n: int, r_star: float, r_upper: Optional[float] = None) -> ZonedPartition:
    if m < 8:
        raise ConstructionError(f"m={m} leaves no room for slabs; need m >= 8")
    if n < 2:
        raise ConstructionError(f"n={n} must be at least 2")
    lam_max = tri.lambda_max
    expected = r_upper_star(r_star, tri.horizon, lam_max)
    r_up = Fraction(r_upper) if r_upper is not None else expected
    if r_up != expected:
        raise ConfigurationError(f"r* = {float(r_up)} but r_* + r_* ceil(T lambda_max / r_*) = {float(expected)}")
    if Fraction(tri.r_star) != r_up:
        raise ConfigurationError(f"triangulation covers [-{tri.r_star}, {tri.r_star}], expected r* = {float(r_up)}")
    if Fraction(r_star) % Fraction(tri.b) != 0:
        raise ConfigurationError("r_* must be a multiple of b")

    regions = _PartitionBuilder(tri, m, n, r_up).build()
    zp = ZonedPartition(regions, Fraction(tri.tau), Fraction(tri.b), Fraction(tri.horizon), m, n,
                        Fraction(r_star), r_up, lam_max)
    zp.report = _validate(zp)
    logger.info(f"Built {len(regions)} regions (m={m}, n={n}); {len(zp.report.violations)} invariant violations")
    return zp


# ============================================================================
# Rasterization onto the fine grid
# ============================================================================


def rasterize(zp: ZonedPartition, m: Optional[int] = None, n: Optional[int] = None) -> SimpleSpeed:
    """SimpleSpeed on rectangles fine_tau x fine_b; cut rectangles take the smaller speed."""
    if (m is not None and m != zp.m) or (n is not None and n != zp.n):
        raise ConfigurationError("rasterization scales must match the partition")
    db, dt = zp.fine_b, zp.fine_tau
    r = zp.r_upper_star
    t_breaks: List[Fraction] = []
    rows: List[Tuple[Tuple[int, ...], Tuple[float, ...]]] = []
    for lo, hi, members in zp.bands():
        merged = _merge_equal(members)
        steps = (hi - lo) / dt
        if steps.denominator != 1:
            raise ConstructionError(f"band [{lo}, {hi}] is not a whole number of fine rows")
        for q in range(int(steps)):
            t0 = lo + q * dt
            profile = _row_profile(merged, t0 + dt / 2, r, db)
            if rows and rows[-1] == profile:
                continue
            t_breaks.append(t0)
            rows.append(profile)
    t_breaks.append(zp.horizon)
    profiles = []
    for cols, values in rows:
        xi = np.array([float(-r + c * db) for c in cols])
        vals = np.array((1.0,) + values + (1.0,))
        breaks = np.concatenate(([-float(r)], xi, [float(r)]))
        keep = np.flatnonzero(vals[1:] != vals[:-1])
        profiles.append(SpeedProfile(breaks[keep], np.append(vals[keep], vals[-1])))
    speed = SimpleSpeed(np.array([float(t) for t in t_breaks]), tuple(profiles), float(r))
    logger.info(f"Rasterized into {len(profiles)} time pieces")
    return speed


def _merge_equal(members: Sequence[Region]) -> List[Tuple[Line, Line, float]]:
    merged: List[Tuple[Line, Line, float]] = []
    for reg in members:
        if merged and merged[-1][2] == reg.lam:
            merged[-1] = (merged[-1][0], reg.right, reg.lam)
        else:
            merged.append((reg.left, reg.right, reg.lam))
    return merged


def _row_profile(merged, t_mid: Fraction, r: Fraction, db: Fraction):
    cols: List[int] = []
    values: List[float] = [merged[0][2]]
    for (_, boundary, v_left), (_, _, v_right) in zip(merged[:-1], merged[1:]):
        pos = (boundary.at(t_mid) + r) / db
        if boundary.slope == 0:
            if pos.denominator != 1:
                raise ConstructionError(f"vertical edge at {float(boundary.base)} is off the fine grid")
            col = int(pos)
        else:
            cell = math.floor(pos)
            col = cell if v_right <= v_left else cell + 1
        if cols and col <= cols[-1]:
            raise ConstructionError(f"two skeleton edges cut the fine cell at column {col}")
        cols.append(col)
        values.append(v_right)
    return tuple(cols), tuple(values)


def l1_gap(s: SimpleSpeed, tri: Triangulation) -> float:
    """Sum over triangles of the integral of |s - max(lambda, 1)|."""
    total = 0.0
    slope = tri.slope
    for k, prof in enumerate(s.profiles):
        ta, tb = s.t_breaks[k], s.t_breaks[k + 1]
        i_lo = int(np.floor(ta / tri.tau + 1e-12))
        i_hi = min(int(np.ceil(tb / tri.tau - 1e-12)), tri.n_slabs)
        for i in range(max(i_lo, 0), i_hi):
            a, b_ = max(ta, i * tri.tau), min(tb, (i + 1) * tri.tau)
            if b_ <= a:
                continue
            for j in range(tri.n_cols):
                x0, x1 = tri.column_left(j), tri.column_left(j + 1)
                for side, target in (("L", tri.lam[i, j, 0]), ("R", tri.lam[i, j, 1])):
                    def bounds(t, side=side):
                        d = x0 + slope * (t - i * tri.tau)
                        return (x0, d) if side == "L" else (d, x1)
                    total += _overlap_integral(prof, bounds, a, b_, max(float(target), 1.0))
    return total


def _overlap_integral(prof: SpeedProfile, bounds, a: float, b: float, target: float) -> float:
    edges = np.concatenate(([-np.inf], prof.breaks, [np.inf]))
    weight = np.abs(prof.values - target)
    if not np.any(weight):
        return 0.0
    la, ra = bounds(a)
    lb, rb = bounds(b)
    splits = [a, b]
    for start, end in ((la, lb), (ra, rb)):
        if end != start:
            u = (prof.breaks - start) / (end - start)
            splits.extend(a + u[(u > 0) & (u < 1)] * (b - a))
    times = np.unique(splits)

    def integrand(t):
        lo, hi = bounds(t)
        overlap = np.clip(np.minimum(hi, edges[1:]) - np.maximum(lo, edges[:-1]), 0.0, None)
        return float(np.dot(weight, overlap))

    vals = np.array([integrand(t) for t in times])
    return float(np.sum(0.5 * np.diff(times) * (vals[1:] + vals[:-1])))
