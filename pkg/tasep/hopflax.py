"""
Variational Hopf-Lax solver for h_t = speed * h_xi (1 - h_xi).

The grid solver is a dynamic programme over nodes: the previous layer is
piecewise linear in xi, so the minimisation over each cell has a closed
form and only cells inside the cone of width max(speed) * dt are scanned.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence, Tuple, runtime_checkable

import numpy as np

from models.data_models import ClosedFormParams
from tasep.errors import ClosedFormError, ConfigurationError, DomainError, GridError
from tasep.lattice import FieldSlice, MacroField
from tasep.ratefn import kernel_hlf
from tasep.speedbuild import SimpleSpeed, SpeedProfile

logger = logging.getLogger(__name__)


@runtime_checkable
class SpeedField(Protocol):
    """What the solver needs from a speed function."""

    @property
    def horizon(self) -> float: ...

    @property
    def max_value(self) -> float: ...

    def evaluate_many(self, t, xi) -> np.ndarray: ...

    def time_breaks(self) -> np.ndarray: ...

    def segment_breaks(self, t0: float, x0: float, t1: float, x1: float) -> np.ndarray: ...


@dataclass(frozen=True)
class DiagonalCutSpeed:
    """lam_minus left of xi = zeta0 + slope (t - s0), lam_plus right of it, min on it."""

    lam_minus: float
    lam_plus: float
    zeta0: float
    s0: float
    slope: float
    horizon: float

    @property
    def max_value(self) -> float:
        return max(self.lam_minus, self.lam_plus)

    def cut(self, t):
        return self.zeta0 + self.slope * (np.asarray(t, dtype=float) - self.s0)

    def evaluate_many(self, t, xi) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        xi = np.asarray(xi, dtype=float)
        if np.any(t < 0) or np.any(t >= self.horizon):
            raise DomainError(f"times outside [0, {self.horizon})")
        gap = xi - self.cut(t)
        return np.where(gap < 0, self.lam_minus, np.where(gap > 0, self.lam_plus, min(self.lam_minus, self.lam_plus)))

    def time_breaks(self) -> np.ndarray:
        return np.array([0.0, self.horizon])

    def segment_breaks(self, t0: float, x0: float, t1: float, x1: float) -> np.ndarray:
        g0 = x0 - float(self.cut(t0))
        g1 = x1 - float(self.cut(t1))
        if g0 == g1 or g0 * g1 >= 0:
            return np.empty(0)
        return np.array([g0 / (g0 - g1)])


# ============================================================================
# Paths and the action functional
# ============================================================================


@dataclass(frozen=True, eq=False)
class Polyline:
    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        if knots.ndim != 2 or knots.shape[1] != 2 or knots.shape[0] < 2:
            raise DomainError("a polyline needs at least two (t, xi) knots")
        if np.any(np.diff(knots[:, 0]) <= 0):
            raise DomainError("knot times must be strictly increasing")
        object.__setattr__(self, "knots", knots)

    def at(self, t) -> np.ndarray:
        return np.interp(t, self.knots[:, 0], self.knots[:, 1])


def action_functional(w: Polyline, speed: SpeedField, t1: float, t2: float) -> float:
    """Integral of speed * hlf(w' / speed) along w over [t1, t2]."""
    times = w.knots[:, 0]
    if t1 < times[0] - 1e-12 or t2 > times[-1] + 1e-12 or t2 < t1:
        raise DomainError(f"path is not defined on [{t1}, {t2}]")
    cuts = np.unique(np.concatenate(([t1, t2], times[(times > t1) & (times < t2)])))
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        xa, xb = float(w.at(a)), float(w.at(b))
        velocity = (xb - xa) / (b - a)
        us = np.concatenate(([0.0], speed.segment_breaks(a, xa, b, xb), [1.0]))
        mids = 0.5 * (us[:-1] + us[1:])
        s = np.asarray(speed.evaluate_many(a + mids * (b - a), xa + mids * (xb - xa)), dtype=float)
        if np.any(s <= 0):
            raise DomainError("speed must be positive along the path")
        total += float(np.sum(np.diff(us) * (b - a) * s * kernel_hlf(velocity / s)))
    return total


# ============================================================================
# Light cones
# ============================================================================


@dataclass(frozen=True)
class LightCone:
    t0: float
    xi0: float
    lambda_max: float

    def contains(self, t: float, xi: float, s0: Optional[float] = None) -> bool:
        """Backward cone; with s0 the cone is cut below at time s0."""
        if t > self.t0 or (s0 is not None and t < s0):
            return False
        return abs(xi - self.xi0) <= self.lambda_max * (self.t0 - t)


def light_cone(t0: float, xi0: float, lambda_max: float) -> LightCone:
    if lambda_max <= 0:
        raise DomainError("lambda_max must be positive")
    return LightCone(float(t0), float(xi0), float(lambda_max))


# ============================================================================
# Grid dynamic programme
# ============================================================================


def _time_steps(speed: SpeedField, s0: float, horizon: float, dt: float) -> np.ndarray:
    breaks = np.asarray(speed.time_breaks(), dtype=float)
    knots = np.unique(np.concatenate(([s0, horizon], breaks[(breaks > s0) & (breaks < horizon)])))
    times = [knots[:1]]
    for a, b in zip(knots[:-1], knots[1:]):
        count = max(1, math.ceil((b - a) / dt - 1e-9))
        times.append(np.linspace(a, b, count + 1)[1:])
    return np.concatenate(times)


def _nodes(L: float, dxi: float) -> np.ndarray:
    cells = 2 * L / dxi
    if abs(cells - round(cells)) > 1e-6 or round(cells) < 2:
        raise ConfigurationError(f"domain [-{L}, {L}] is not a whole number of cells of {dxi}")
    return np.linspace(-L, L, int(round(cells)) + 1)


def _edge_slope(values: np.ndarray, dxi: float, side: int) -> float:
    raw = (values[1] - values[0]) / dxi if side < 0 else (values[-1] - values[-2]) / dxi
    return float(np.clip(raw, 0.0, 1.0))


def _sample_initial(f0: FieldSlice, nodes: np.ndarray) -> np.ndarray:
    values = f0(nodes)
    slopes = f0.slopes()
    left_slope = float(np.clip(slopes[0], 0.0, 1.0))
    right_slope = float(np.clip(slopes[-1], 0.0, 1.0))
    below, above = nodes < f0.xi[0], nodes > f0.xi[-1]
    values = np.where(below, f0.values[0] - left_slope * (f0.xi[0] - nodes), values)
    return np.where(above, f0.values[-1] + right_slope * (nodes - f0.xi[-1]), values)


def _step(h: np.ndarray, nodes: np.ndarray, dxi: float, speed: SpeedField, t: float, dt: float, lam_max: float) -> np.ndarray:
    ghosts = int(math.ceil(lam_max * dt / dxi)) + 1
    offsets = np.arange(-ghosts, ghosts + 1) * dxi
    left = h[0] + _edge_slope(h, dxi, -1) * offsets[:ghosts]
    right = h[-1] + _edge_slope(h, dxi, 1) * offsets[ghosts + 1:]
    padded = np.concatenate((left, h, right))
    xi_pad = np.concatenate((nodes[0] + offsets[:ghosts], nodes, nodes[-1] + offsets[ghosts + 1:]))
    slopes = np.diff(padded) / dxi
    n = nodes.size
    t_mid = t + 0.5 * dt
    best = np.full(n, np.inf)
    for c in range(-ghosts, ghosts):
        k = np.arange(n) + ghosts + c
        lo, hi = xi_pad[k], xi_pad[k + 1]
        s_c = slopes[k]

        def optimum(reach):
            target = nodes - (2 * s_c - 1) * reach
            return np.clip(target, np.maximum(lo, nodes - reach), np.minimum(hi, nodes + reach))

        reach = dt * speed.evaluate_many(t_mid, 0.5 * (nodes + 0.5 * (lo + hi)))
        star = optimum(reach)
        reach = dt * speed.evaluate_many(t_mid, 0.5 * (nodes + star))
        # cell entirely outside the band: the clip bounds cross, fall back to the nearer cell end
        star = np.where(np.maximum(lo, nodes - reach) <= np.minimum(hi, nodes + reach), optimum(reach), np.where(hi < nodes, hi, lo))
        value = padded[k] + s_c * (star - lo) + reach * kernel_hlf((nodes - star) / reach)
        better = value < best
        best = np.where(better, value, best)
    return best


def solve_localized(
    speed: SpeedField,
    boundary: FieldSlice,
    s0: float,
    grid: Tuple[float, Optional[float]],
    L: float,
    r: Optional[float] = None,
    horizon: Optional[float] = None,
) -> MacroField:
    """Grid Hopf-Lax solution on [s0, T] reported on [-r, r]."""
    T = float(speed.horizon if horizon is None else horizon)
    if not 0 <= s0 < T:
        raise DomainError(f"start time {s0} outside [0, {T})")
    lam_max = float(speed.max_value)
    dt, dxi = grid
    dxi = dxi if dxi is not None else lam_max * dt / 8
    reach = lam_max * (T - s0 + dt)
    if r is None:
        r = L - reach
    if r <= 0 or L < r + reach - 1e-12:
        raise ConfigurationError(
            f"domain [-{L}, {L}] does not close the light cone of [-{r}, {r}] (needs L >= {r + reach:.6g})"
        )
    nodes = _nodes(L, dxi)
    times = _time_steps(speed, s0, T, dt)
    keep = np.abs(nodes) <= r + 1e-12
    h = _sample_initial(boundary, nodes)
    layers = [h[keep]]
    for t_prev, t_next in zip(times[:-1], times[1:]):
        h = _step(h, nodes, dxi, speed, t_prev, t_next - t_prev, lam_max)
        layers.append(h[keep])
    logger.debug(f"Hopf-Lax solve: {times.size - 1} steps, {nodes.size} nodes, reported on [-{r:.4g}, {r:.4g}]")
    return MacroField(times, nodes[keep], np.vstack(layers))


def solve(
    speed: SpeedField,
    f0: FieldSlice,
    grid: Tuple[float, Optional[float]],
    L: float,
    r: Optional[float] = None,
    horizon: Optional[float] = None,
) -> MacroField:
    return solve_localized(speed, f0, 0.0, grid, L, r, horizon)


# ============================================================================
# Closed-form solutions
# ============================================================================


def _flux(lam: float, rho: float) -> float:
    return lam * rho * (1 - rho)


def _check_case(case: str, p: ClosedFormParams, tol: float = 1e-9) -> Tuple[float, float]:
    if case == "b":
        k_minus, k_plus = _flux(p.lam_minus, p.rho_minus), _flux(p.lam_plus, p.rho_plus)
        if abs(k_minus - k_plus) > tol:
            raise ClosedFormError(f"kappa {k_minus:.6g} vs {k_plus:.6g}", identity="flux balance across vertical cut")
        if not (2 * p.rho_minus - 1 >= 0 or 2 * p.rho_plus - 1 <= 0):
            raise ClosedFormError("2 rho- - 1 < 0 < 2 rho+ - 1", identity="non-diverging characteristics")
        return k_minus, k_plus
    if case == "c":
        k_minus, k_plus = _flux(p.lam_minus, p.rho_minus), _flux(p.lam_plus, p.rho_plus)
        s = p.slope
        if abs(k_minus + s * p.rho_minus - k_plus - s * p.rho_plus) > tol:
            raise ClosedFormError(
                f"{k_minus + s * p.rho_minus:.6g} vs {k_plus + s * p.rho_plus:.6g}", identity="flux balance across diagonal cut"
            )
        if not (p.lam_minus * (2 * p.rho_minus - 1) >= s or p.lam_plus * (2 * p.rho_plus - 1) <= s):
            raise ClosedFormError("characteristics leave the diagonal cut", identity="non-diverging characteristics")
        return k_minus, k_plus
    if case == "d":
        if abs(p.rho_minus + p.rho_plus - 1) > tol:
            raise ClosedFormError(f"rho- + rho+ = {p.rho_minus + p.rho_plus:.6g}", identity="shock densities sum to one")
        if p.rho_minus < p.rho_plus:
            raise ClosedFormError("rho- < rho+", identity="non-diverging characteristics")
        return _flux(1.0, p.rho_minus), _flux(1.0, p.rho_plus)
    return _flux(p.lam, p.rho), _flux(p.lam, p.rho)


def closed_form(case: str, params: ClosedFormParams, t, xi):
    """Piecewise-linear solution of the four explicit configurations."""
    if case != params.case:
        raise ClosedFormError(f"parameters are for case {params.case}", identity="case")
    k_minus, k_plus = _check_case(case, params)
    t = np.asarray(t, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if np.any(t < params.s0 - 1e-12):
        raise DomainError(f"closed form is defined from s0={params.s0}")
    dt = t - params.s0
    dx = xi - params.zeta0
    if case == "a":
        out = params.f_anchor + k_minus * dt + params.rho * dx
    else:
        cut = params.slope * dt if case == "c" else 0.0
        left = params.f_anchor + k_minus * dt + params.rho_minus * dx
        right = params.f_anchor + k_plus * dt + params.rho_plus * dx
        out = np.where(dx <= cut, left, right)
    return float(out) if np.ndim(out) == 0 else out


def closed_form_initial(params: ClosedFormParams, xi_grid: Sequence[float]) -> FieldSlice:
    xi = np.asarray(xi_grid, dtype=float)
    t0 = np.full_like(xi, params.s0)
    return FieldSlice(xi, np.asarray(closed_form(params.case, params, t0, xi), dtype=float))


def oracle_speed(params: ClosedFormParams, horizon: float):
    """The speed function paired with each closed-form case."""
    if params.case == "a":
        return SimpleSpeed.constant(params.lam, horizon)
    if params.case == "d":
        return SimpleSpeed.constant(1.0, horizon)
    if params.case == "b":
        values = [params.lam_minus, params.lam_plus]
        if values[0] == values[1]:
            return SimpleSpeed.constant(values[0], horizon)
        return SimpleSpeed(np.array([0.0, horizon]), (SpeedProfile(np.array([params.zeta0]), np.array(values)),))
    return DiagonalCutSpeed(params.lam_minus, params.lam_plus, params.zeta0, params.s0, params.slope, horizon)


def sup_error(field: MacroField, params: ClosedFormParams) -> float:
    tt, xx = np.meshgrid(field.t_grid, field.xi_grid, indexing="ij")
    if np.any(tt < params.s0 - 1e-12):
        raise GridError("field starts before the closed-form start time")
    return float(np.max(np.abs(field.values - closed_form(params.case, params, tt, xx))))
