"""
Lattice height profiles and their macroscopic counterparts.

Heights are integer functions with increments in {0,1}; an increment of 1
between x and x+1 is a particle at the half-integer site x+1/2. Macroscopic
fields are sampled on uniform (t, xi) grids and carry the Lipschitz slope
constraint 0 <= d/dxi <= 1 together with monotonicity in t.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Iterator, Optional, Tuple

import numpy as np
import pandas as pd

from config.settings import settings
from tasep.errors import (
    GridError,
    InsufficientMarginError,
    PathSpaceError,
    ProfileError,
    TriangulationError,
)

logger = logging.getLogger(__name__)


class Boundary(str, Enum):
    TORUS = "torus"
    FROZEN = "frozen"


# ============================================================================
# Height profiles
# ============================================================================


@dataclass(frozen=True, eq=False)
class HeightProfile:
    """Integer heights on the window [x_min, x_max].

    In torus mode the window closes on itself with period x_max - x_min and
    h(x_max) - h(x_min) is the conserved particle count.
    """

    x_min: int
    values: np.ndarray
    boundary: Boundary = Boundary.FROZEN
    left_density: Optional[float] = None
    right_density: Optional[float] = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.int64)
        if vals.ndim != 1 or vals.size < 2:
            raise ProfileError("a height profile needs at least two sites")
        steps = np.diff(vals)
        bad = np.flatnonzero((steps != 0) & (steps != 1))
        if bad.size:
            raise ProfileError(f"increment {steps[bad[0]]} between sites {self.x_min + bad[0]} and {self.x_min + bad[0] + 1}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        object.__setattr__(self, "x_min", int(self.x_min))

    @property
    def x_max(self) -> int:
        return self.x_min + self.values.size - 1

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.x_min, self.x_max + 1, dtype=np.int64)

    @property
    def period(self) -> int:
        return self.values.size - 1

    @property
    def particle_count(self) -> int:
        return int(self.values[-1] - self.values[0])

    def at(self, x: int) -> int:
        offset = int(x) - self.x_min
        if self.boundary is Boundary.TORUS:
            laps, pos = divmod(offset, self.period)
            return int(self.values[pos]) + laps * self.particle_count
        if not 0 <= offset < self.values.size:
            raise InsufficientMarginError(f"site {x} outside frozen window [{self.x_min}, {self.x_max}]")
        return int(self.values[offset])

    def shifted(self, k: int) -> "HeightProfile":
        return HeightProfile(self.x_min, self.values + int(k), self.boundary, self.left_density, self.right_density)

    def with_values(self, values: np.ndarray) -> "HeightProfile":
        return HeightProfile(self.x_min, values, self.boundary, self.left_density, self.right_density)

    def to_dict(self) -> Dict:
        doc = {
            "window": [self.x_min, self.x_max],
            "values": self.values.tolist(),
            "boundary": self.boundary.value,
        }
        if self.left_density is not None or self.right_density is not None:
            doc["densities"] = [self.left_density, self.right_density]
        return doc

    @classmethod
    def from_dict(cls, doc: Dict) -> "HeightProfile":
        x_min, x_max = doc["window"]
        values = doc["values"]
        if x_max - x_min + 1 != len(values):
            raise ProfileError(f"window [{x_min}, {x_max}] does not match {len(values)} values")
        left, right = doc.get("densities", [None, None])
        return cls(x_min, values, Boundary(doc.get("boundary", "frozen")), left, right)


@dataclass(frozen=True, eq=False)
class OccupationField:
    """Particle bits on the half-integer sites x_min + 1/2, x_min + 3/2, ..."""

    x_min: int
    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=np.int8)
        if np.any((bits != 0) & (bits != 1)):
            raise ProfileError("occupation bits must be 0 or 1")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def sites(self) -> np.ndarray:
        return self.x_min + 0.5 + np.arange(self.bits.size)

    @property
    def density(self) -> float:
        return float(self.bits.mean()) if self.bits.size else 0.0


def gradient_profile(h: HeightProfile) -> OccupationField:
    return OccupationField(h.x_min, np.diff(h.values))


def integrate_occupation(
    bits: OccupationField, anchor_value: int, boundary: Boundary = Boundary.FROZEN
) -> HeightProfile:
    values = int(anchor_value) + np.concatenate(([0], np.cumsum(bits.bits, dtype=np.int64)))
    return HeightProfile(bits.x_min, values, boundary)


def mobility(h: HeightProfile, x: int) -> int:
    """1 iff h(x+1) - h(x) = 1 and h(x) - h(x-1) = 0."""
    if h.boundary is Boundary.FROZEN and not h.x_min < x < h.x_max:
        raise InsufficientMarginError(f"mobility at {x} needs both neighbours inside [{h.x_min}, {h.x_max}]")
    centre = h.at(x)
    return int(h.at(x + 1) - centre == 1 and centre - h.at(x - 1) == 0)


def mobility_field(h: HeightProfile) -> Tuple[np.ndarray, np.ndarray]:
    """Sites and mobilities of every site that can grow (torus: one period)."""
    v = h.values
    if h.boundary is Boundary.TORUS:
        core = v[:-1]
        right = np.append(v[1:-1], v[0] + h.particle_count)
        left = np.insert(v[:-2], 0, v[-2] - h.particle_count)
        return h.sites[:-1], ((right - core == 1) & (core == left)).astype(np.int8)
    core = v[1:-1]
    return h.sites[1:-1], ((v[2:] - core == 1) & (core == v[:-2])).astype(np.int8)


# ============================================================================
# Initial condition builders
# ============================================================================


def wedge_profile(x_min: int, x_max: int) -> HeightProfile:
    sites = np.arange(x_min, x_max + 1)
    return HeightProfile(x_min, np.maximum(sites, 0), Boundary.FROZEN, 0.0, 1.0)


def flat_profile(x_min: int, x_max: int, value: int = 0) -> HeightProfile:
    return HeightProfile(x_min, np.full(x_max - x_min + 1, value), Boundary.FROZEN, 0.0, 0.0)


def bernoulli_profile(
    rng: np.random.Generator,
    x_min: int,
    x_max: int,
    rho: float,
    boundary: Boundary = Boundary.TORUS,
    anchor: int = 0,
) -> HeightProfile:
    bits = (rng.random(x_max - x_min) < rho).astype(np.int64)
    values = anchor + np.concatenate(([0], np.cumsum(bits)))
    return HeightProfile(x_min, values, boundary, rho, rho)


def two_phase_profile(
    rng: np.random.Generator,
    x_min: int,
    x_max: int,
    rho_left: float,
    rho_right: float,
    boundary: Boundary = Boundary.FROZEN,
) -> HeightProfile:
    """Product Bernoulli with density rho_left left of the origin and rho_right right of it, h(0) = 0."""
    if not x_min < 0 < x_max:
        raise ProfileError(f"window [{x_min}, {x_max}] must contain the phase boundary at 0")
    half_sites = np.arange(x_min, x_max) + 0.5
    rho = np.where(half_sites < 0, rho_left, rho_right)
    bits = (rng.random(half_sites.size) < rho).astype(np.int64)
    values = np.concatenate(([0], np.cumsum(bits)))
    return HeightProfile(x_min, values - values[-x_min], boundary, rho_left, rho_right)


def profile_from_macro(
    f: Callable[[np.ndarray], np.ndarray],
    N: int,
    x_min: int,
    x_max: int,
    boundary: Boundary = Boundary.FROZEN,
) -> HeightProfile:
    """Lattice approximant h(x) = floor(N f(x/N)) of a macroscopic profile."""
    sites = np.arange(x_min, x_max + 1)
    values = np.floor(N * np.asarray(f(sites / N), dtype=float) + 1e-9).astype(np.int64)
    return HeightProfile(x_min, values, boundary)


# ============================================================================
# Macroscopic fields
# ============================================================================


@dataclass(frozen=True, eq=False)
class FieldSlice:
    """A fixed-time profile sampled on an increasing xi grid."""

    xi: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if xi.shape != values.shape or xi.ndim != 1 or xi.size < 2:
            raise GridError("slice grid and values must be matching 1-d arrays")
        if np.any(np.diff(xi) <= 0):
            raise GridError("slice grid must be strictly increasing")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "values", values)

    def __call__(self, xi) -> np.ndarray:
        return np.interp(xi, self.xi, self.values)

    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.xi)

    def check_slopes(self, tol: float = settings.PL_TOLERANCE):
        s = self.slopes()
        bad = np.flatnonzero((s < -tol) | (s > 1 + tol))
        if bad.size:
            raise PathSpaceError(f"slope {s[bad[0]]:.6g} on [{self.xi[bad[0]]:.6g}, {self.xi[bad[0] + 1]:.6g}]")


@dataclass(frozen=True, eq=False)
class MacroField:
    t_grid: np.ndarray
    xi_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t_grid, dtype=float)
        xi = np.asarray(self.xi_grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.shape != (t.size, xi.size):
            raise GridError(f"values shape {v.shape} does not match grids ({t.size}, {xi.size})")
        if np.any(np.diff(t) <= 0) or np.any(np.diff(xi) <= 0):
            raise GridError("grids must be strictly increasing")
        object.__setattr__(self, "t_grid", t)
        object.__setattr__(self, "xi_grid", xi)
        object.__setattr__(self, "values", v)

    @property
    def horizon(self) -> float:
        return float(self.t_grid[-1])

    def slice(self, i: int) -> FieldSlice:
        return FieldSlice(self.xi_grid, self.values[i])

    def at_time(self, t: float) -> FieldSlice:
        """Row interpolated linearly in t."""
        if t < self.t_grid[0] - 1e-12 or t > self.t_grid[-1] + 1e-12:
            raise GridError(f"t={t} outside [{self.t_grid[0]}, {self.t_grid[-1]}]")
        if self.t_grid.size == 1:
            return self.slice(0)
        k = int(np.clip(np.searchsorted(self.t_grid, t, side="right") - 1, 0, self.t_grid.size - 2))
        t0, t1 = self.t_grid[k], self.t_grid[k + 1]
        w = min(max((t - t0) / (t1 - t0), 0.0), 1.0)
        return FieldSlice(self.xi_grid, (1 - w) * self.values[k] + w * self.values[k + 1])

    def column(self, xi: float) -> np.ndarray:
        """Values at a fixed xi for every t, interpolated linearly in xi."""
        return np.array([np.interp(xi, self.xi_grid, row) for row in self.values])

    def check_path_space(self, tol: float = settings.PL_TOLERANCE):
        slopes = np.diff(self.values, axis=1) / np.diff(self.xi_grid)
        if np.any(slopes < -tol) or np.any(slopes > 1 + tol):
            i, j = np.argwhere((slopes < -tol) | (slopes > 1 + tol))[0]
            raise PathSpaceError(f"slope {slopes[i, j]:.6g} at t={self.t_grid[i]:.6g}, xi={self.xi_grid[j]:.6g}")
        growth = np.diff(self.values, axis=0)
        if np.any(growth < -tol):
            i, j = np.argwhere(growth < -tol)[0]
            raise PathSpaceError(f"field decreases in t at t={self.t_grid[i]:.6g}, xi={self.xi_grid[j]:.6g}")

    def to_frame(self) -> pd.DataFrame:
        tt, xx = np.meshgrid(self.t_grid, self.xi_grid, indexing="ij")
        return pd.DataFrame({"t": tt.ravel(), "xi": xx.ravel(), "value": self.values.ravel()})

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "MacroField":
        missing = {"t", "xi", "value"} - set(frame.columns)
        if missing:
            raise GridError(f"field table lacks columns {sorted(missing)}")
        t_grid = np.unique(frame["t"].to_numpy(dtype=float))
        xi_grid = np.unique(frame["xi"].to_numpy(dtype=float))
        if len(frame) != t_grid.size * xi_grid.size:
            raise GridError("field table is not a full tensor grid")
        ordered = frame.sort_values(["t", "xi"], kind="mergesort")
        return cls(t_grid, xi_grid, ordered["value"].to_numpy(dtype=float).reshape(t_grid.size, xi_grid.size))

    @classmethod
    def from_function(cls, fn: Callable, t_grid, xi_grid) -> "MacroField":
        tt, xx = np.meshgrid(np.asarray(t_grid, float), np.asarray(xi_grid, float), indexing="ij")
        return cls(t_grid, xi_grid, np.broadcast_to(fn(tt, xx), tt.shape).astype(float))

    @classmethod
    def from_slice(cls, f0: FieldSlice) -> "MacroField":
        return cls(np.array([0.0]), f0.xi, f0.values[None, :])

    @classmethod
    def from_vertices(cls, heights: np.ndarray, tau: float, b: float, r_star: float, t_grid, xi_grid) -> "MacroField":
        """Piecewise-linear interpolation of vertex heights over the triangulation."""
        tt, xx = np.meshgrid(np.asarray(t_grid, float), np.asarray(xi_grid, float), indexing="ij")
        return cls(t_grid, xi_grid, _interpolate_vertices(np.asarray(heights, float), tau, b, r_star, tt, xx))


def scale_profile(h: HeightProfile, N: int) -> FieldSlice:
    """Slice xi = x/N -> h(x)/N, linear between lattice points."""
    if N < 1:
        raise ProfileError(f"scaling factor must be >= 1, got {N}")
    return FieldSlice(h.sites / N, h.values / N)


def metric_dist(f: FieldSlice, g: FieldSlice, k_max: Optional[int] = None) -> float:
    k_max = k_max or settings.METRIC_DEPTH
    if f.xi.shape != g.xi.shape or not np.array_equal(f.xi, g.xi):
        raise GridError("slices must share one grid; resample before comparing")
    if f.xi[0] > -k_max or f.xi[-1] < k_max:
        raise GridError(f"grid [{f.xi[0]}, {f.xi[-1]}] does not cover [-{k_max}, {k_max}]")
    gap = np.abs(f.values - g.values)
    total = 0.0
    for k in range(1, k_max + 1):
        inside = np.abs(f.xi) <= k
        total += 2.0 ** (-k) * min(float(gap[inside].max()), 1.0)
    return total


def modulus_w_prime(path: MacroField, n: int, r: float) -> float:
    if n < 1:
        raise GridError("n must be >= 1")
    if path.xi_grid[0] > -r or path.xi_grid[-1] < r:
        raise GridError(f"[-{r}, {r}] not inside the field grid")
    inside = np.abs(path.xi_grid) <= r
    T = path.horizon
    start = path.t_grid[0]
    worst = 0.0
    prev = path.at_time(start).values
    for i in range(1, n + 1):
        cur = path.at_time(start + i * (T - start) / n).values
        worst = max(worst, float(np.abs(cur - prev)[inside].max()))
        prev = cur
    return worst


@dataclass(frozen=True)
class LocalityEnvelope:
    lower: int
    upper: int
    lower_infinite: bool = False
    upper_infinite: bool = False

    def contains(self, x: int) -> bool:
        return self.lower <= x <= self.upper


def locality_envelope(f: HeightProfile, b: int, x0: int) -> LocalityEnvelope:
    sites = f.sites
    vals = f.values
    right = np.flatnonzero((sites >= x0) & (vals >= b))
    left = np.flatnonzero((sites <= x0) & (vals - sites >= b - x0))
    return LocalityEnvelope(
        lower=int(sites[left[-1]]) if left.size else f.x_min,
        upper=int(sites[right[0]]) if right.size else f.x_max,
        lower_infinite=not left.size,
        upper_infinite=not right.size,
    )


# ============================================================================
# Triangulations of piecewise-linear deviations
# ============================================================================

TriangleId = Tuple[int, int, str]


def _interpolate_vertices(heights, tau, b, r_star, tt, xx):
    n_slabs, n_cols = heights.shape[0] - 1, heights.shape[1] - 1
    i = np.clip(np.floor(tt / tau).astype(int), 0, n_slabs - 1)
    j = np.clip(np.floor((xx + r_star) / b).astype(int), 0, n_cols - 1)
    u = (tt - i * tau) / tau
    v = (xx + r_star - j * b) / b
    g_a = heights[i, j]
    upper_left = u >= v
    # L: A, B=(top,left), C=(top,right); R: A, D=(bottom,right), C
    dt_part = np.where(upper_left, heights[i + 1, j] - g_a, heights[i + 1, j + 1] - heights[i, j + 1])
    dx_part = np.where(upper_left, heights[i + 1, j + 1] - heights[i + 1, j], heights[i, j + 1] - g_a)
    return g_a + dt_part * u + dx_part * v


@dataclass(frozen=True, eq=False)
class Triangulation:
    """Triangles of the grid Sigma(tau, b) over [0,T] x [-r_star, r_star].

    Arrays are indexed [slab, column, side] with side 0 = L (above the
    diagonal) and side 1 = R.
    """

    tau: float
    b: float
    r_star: float
    horizon: float
    heights: np.ndarray
    kappa: np.ndarray
    rho: np.ndarray
    lam: np.ndarray

    SIDES = ("L", "R")

    @property
    def n_slabs(self) -> int:
        return self.kappa.shape[0]

    @property
    def n_cols(self) -> int:
        return self.kappa.shape[1]

    @property
    def slope(self) -> float:
        return self.b / self.tau

    @property
    def area(self) -> float:
        return 0.5 * self.tau * self.b

    @property
    def lambda_max(self) -> float:
        return float(self.lam.max())

    @property
    def lambda_min(self) -> float:
        return float(self.lam.min())

    def column_left(self, j: int) -> float:
        return -self.r_star + j * self.b

    def triangles(self) -> Iterator[TriangleId]:
        for i in range(self.n_slabs):
            for j in range(self.n_cols):
                for side in self.SIDES:
                    yield (i, j, side)

    def triplet(self, tid: TriangleId) -> Tuple[float, float, float]:
        i, j, side = tid
        s = self.SIDES.index(side)
        return float(self.kappa[i, j, s]), float(self.rho[i, j, s]), float(self.lam[i, j, s])

    def vertices(self, tid: TriangleId) -> np.ndarray:
        i, j, side = tid
        t0, t1 = i * self.tau, (i + 1) * self.tau
        x0, x1 = self.column_left(j), self.column_left(j + 1)
        if side == "L":
            return np.array([[t0, x0], [t1, x0], [t1, x1]])
        return np.array([[t0, x0], [t0, x1], [t1, x1]])

    def value(self, t, xi):
        return _interpolate_vertices(self.heights, self.tau, self.b, self.r_star, np.asarray(t, float), np.asarray(xi, float))

    def initial_slice(self) -> FieldSlice:
        return FieldSlice(self.column_left(np.arange(self.n_cols + 1)), self.heights[0])


def _integral_ratio(value: float, step: float, what: str) -> int:
    count = value / step
    if count < 0.5 or not math.isclose(count, round(count), rel_tol=0, abs_tol=1e-9):
        raise TriangulationError(f"{what} must be a positive integer multiple of the step, got ratio {count}")
    return int(round(count))


def _grid_index(grid: np.ndarray, target: float, what: str) -> int:
    k = int(np.argmin(np.abs(grid - target)))
    if abs(grid[k] - target) > 1e-9:
        raise GridError(f"{what}={target} is not a node of the field grid")
    return k


def triangulate(g: MacroField, tau: float, b: float, r_star: float) -> Triangulation:
    tol = settings.PL_TOLERANCE
    T = g.horizon
    n_slabs = _integral_ratio(T, tau, "T")
    n_cols = _integral_ratio(2 * r_star, b, "2 r_star")
    ti = [_grid_index(g.t_grid, i * tau, "t") for i in range(n_slabs + 1)]
    xj = [_grid_index(g.xi_grid, -r_star + j * b, "xi") for j in range(n_cols + 1)]
    heights = g.values[np.ix_(ti, xj)]

    inside = (g.xi_grid >= -r_star - 1e-12) & (g.xi_grid <= r_star + 1e-12)
    tt, xx = np.meshgrid(g.t_grid, g.xi_grid[inside], indexing="ij")
    gap = np.abs(_interpolate_vertices(heights, tau, b, r_star, tt, xx) - g.values[:, inside])
    if np.any(gap > tol):
        a, c = np.unravel_index(int(np.argmax(gap)), gap.shape)
        t, xi = tt[a, c], xx[a, c]
        i = min(int(t // tau), n_slabs - 1)
        j = min(int((xi + r_star) // b), n_cols - 1)
        side = "L" if (t - i * tau) / tau >= (xi + r_star - j * b) / b else "R"
        raise TriangulationError(
            f"field is not linear on triangle {(i, j, side)} (gap {gap[a, c]:.3g} at t={t:.6g}, xi={xi:.6g})",
            triangle_id=(i, j, side),
        )

    kappa = np.empty((n_slabs, n_cols, 2))
    rho = np.empty((n_slabs, n_cols, 2))
    kappa[:, :, 0] = (heights[1:, :-1] - heights[:-1, :-1]) / tau
    rho[:, :, 0] = (heights[1:, 1:] - heights[1:, :-1]) / b
    kappa[:, :, 1] = (heights[1:, 1:] - heights[:-1, 1:]) / tau
    rho[:, :, 1] = (heights[:-1, 1:] - heights[:-1, :-1]) / b

    for arr, label, bad in (
        (rho, "rho", (rho <= tol) | (rho >= 1 - tol)),
        (kappa, "kappa", kappa <= tol),
    ):
        if np.any(bad):
            i, j, s = np.argwhere(bad)[0]
            tid = (int(i), int(j), Triangulation.SIDES[s])
            raise TriangulationError(f"degenerate {label}={arr[i, j, s]:.6g} on triangle {tid}", triangle_id=tid)

    lam = kappa / (rho * (1 - rho))
    tri = Triangulation(tau, b, r_star, T, heights, kappa, rho, lam)
    _check_edge_identities(tri)
    logger.debug(f"Triangulated field into {2 * n_slabs * n_cols} triangles, lambda in [{tri.lambda_min:.4g}, {tri.lambda_max:.4g}]")
    return tri


def _check_edge_identities(tri: Triangulation, tol: float = 1e-9):
    # vertical edge at column j: L(i, j) meets R(i, j-1)
    vertical = np.abs(tri.kappa[:, 1:, 0] - tri.kappa[:, :-1, 1])
    if np.any(vertical > tol):
        i, j = np.argwhere(vertical > tol)[0]
        raise TriangulationError(f"kappa jumps across the vertical edge left of {(int(i), int(j) + 1, 'L')}", triangle_id=(int(i), int(j) + 1, "L"))
    s = tri.slope
    diagonal = np.abs(tri.kappa[..., 0] + s * tri.rho[..., 0] - tri.kappa[..., 1] - s * tri.rho[..., 1])
    if np.any(diagonal > tol):
        i, j = np.argwhere(diagonal > tol)[0]
        raise TriangulationError(f"kappa + (b/tau) rho jumps across the diagonal of {(int(i), int(j), 'L')}", triangle_id=(int(i), int(j), "L"))
