"""
Relative-entropy bookkeeping for tilted TASEP laws.

Trajectory integrals are exact: mobility is piecewise constant between
events and the speed is piecewise constant in time, so every integral is a
finite sum over mobility intervals.
"""

from __future__ import annotations

import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np

from models.data_models import EntropyBreakdown, EntropyReport
from tasep.errors import ConfigurationError, DomainError
from tasep.lattice import Triangulation
from tasep.ratefn import poisson_rate, poisson_rate_trunc
from tasep.sim import (
    SpeedLike,
    TrajectoryRecord,
    _as_speed,
    empirical_flux,
    expected_flux,
    integrated_speed,
    mobility_intervals,
)

logger = logging.getLogger(__name__)

Window = Tuple[float, float, float, float]


def _restrict(rec: TrajectoryRecord, window: Optional[Window]):
    sites, starts, ends = mobility_intervals(rec)
    if window is None:
        return sites, starts, ends
    t1, t2, xi_lo, xi_hi = window
    if not 0 <= t1 < t2 <= rec.T + 1e-12 or xi_hi <= xi_lo:
        raise DomainError(f"window {window} is not a space-time box inside [0, {rec.T}]")
    keep = (sites >= xi_lo * rec.N) & (sites <= xi_hi * rec.N)
    return sites[keep], np.clip(starts[keep], t1 * rec.N, t2 * rec.N), np.clip(ends[keep], t1 * rec.N, t2 * rec.N)


def rn_logdensity(rec: TrajectoryRecord, speed: SpeedLike) -> float:
    """log dQ/dP along the trajectory, Q driven by speed and P by unit rates."""
    speed = _as_speed(speed, rec.T)
    if rec.events:
        t_macro = np.minimum(rec.event_times / rec.N, np.nextafter(speed.horizon, 0))
        at_jumps = speed.evaluate_many(t_macro, rec.event_sites / rec.N)
        if np.any(at_jumps <= 0):
            return -math.inf
        jump_term = float(np.sum(np.log(at_jumps)))
    else:
        jump_term = 0.0
    sites, starts, ends = mobility_intervals(rec)
    drift = integrated_speed(rec, sites, starts, ends, speed, transform=lambda v: v - 1.0)
    return jump_term - float(np.sum(drift))


def entropy_density(
    rec: TrajectoryRecord,
    speed: SpeedLike,
    window: Optional[Window] = None,
) -> float:
    """(1/N^2) sum_x integral of mobility * rate(speed), one replica."""
    sites, starts, ends = _restrict(rec, window)
    cost = integrated_speed(rec, sites, starts, ends, speed, transform=poisson_rate)
    return float(np.sum(cost)) / rec.N ** 2


def entropy_mc(
    recs: Sequence[TrajectoryRecord],
    speed: SpeedLike,
    window: Optional[Window] = None,
    per_unit_length: bool = False,
) -> EntropyReport:
    if not recs:
        raise DomainError("entropy estimate needs at least one replica")
    samples = np.array([entropy_density(rec, speed, window) for rec in recs])
    if per_unit_length:
        rec = recs[0]
        length = (window[3] - window[2]) if window is not None else rec.initial.period / rec.N
        samples = samples / length
    n = samples.size
    err = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    logger.debug(f"entropy over {n} replicas: {samples.mean():.6g} +- {err:.2g}")
    return EntropyReport(mc_estimate=float(samples.mean()), std_error=err, replicas=n)


def entropy_bound(tri: Triangulation, r_star: float, r_upper_star: Optional[float] = None) -> EntropyReport:
    """Inner triangles weighted by rho(1-rho), tail-band triangles by 1."""
    r_up = tri.r_star if r_upper_star is None else r_upper_star
    tol = 1e-9
    inner = tail = 0.0
    weight = tri.rho * (1 - tri.rho) * poisson_rate_trunc(tri.lam)
    for j in range(tri.n_cols):
        lo, hi = tri.column_left(j), tri.column_left(j + 1)
        if lo >= -r_star - tol and hi <= r_star + tol:
            inner += tri.area * float(weight[:, j, :].sum())
        elif hi <= r_up + tol and lo >= -r_up - tol and (hi <= -r_star + tol or lo >= r_star - tol):
            tail += tri.area * float(np.sum(poisson_rate_trunc(tri.lam[:, j, :])))
        elif lo < r_up - tol and hi > -r_up + tol:
            raise ConfigurationError(f"column [{lo}, {hi}] straddles +-r_* = {r_star}")
    return EntropyReport(
        theoretical_bound=inner + tail,
        breakdown=EntropyBreakdown(inner=inner, tail=tail),
    )


def paired_discrepancy(diffs: Sequence[float]) -> float:
    """|mean| of paired differences in units of its standard error."""
    diffs = np.asarray(diffs, dtype=float)
    mean = float(diffs.mean()) if diffs.size else 0.0
    err = float(diffs.std(ddof=1) / math.sqrt(diffs.size)) if diffs.size > 1 else 0.0
    if err == 0:
        return 0.0 if mean == 0 else math.inf
    return abs(mean) / err


def flux_identity_check(
    recs: Sequence[TrajectoryRecord],
    speed: Optional[SpeedLike],
    window: Tuple[int, int],
    t1: float,
    t2: float,
) -> float:
    """Height flux against its compensator, replica by replica, in standard-error units."""
    return paired_discrepancy(
        [empirical_flux(r, window, t1, t2) - expected_flux(r, window, t1, t2, speed) for r in recs]
    )
