"""
Poisson rate functions, mobility bounds and the speed-N^2 rate functionals.

All functions accept scalars or numpy arrays. Infinite costs are returned
as ``np.inf``; callers branch on it explicitly.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid

from models.data_models import RateVariant
from tasep.errors import DomainError, GridError, PathSpaceError
from tasep.lattice import FieldSlice, MacroField

logger = logging.getLogger(__name__)

DEFAULT_VARIANT = RateVariant(variant=2)


def _out(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def poisson_rate(lam, u=1.0):
    """lam log(lam/u) - (lam - u), with 0 log 0 = 0."""
    lam = np.asarray(lam, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise DomainError("reference rate u must be positive")
    if np.any(lam < 0):
        raise DomainError("rate lambda must be nonnegative")
    positive = lam > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        xlogx = np.where(positive, lam * np.log(np.where(positive, lam / u, 1.0)), 0.0)
    return _out(xlogx - (lam - u))


def poisson_rate_trunc(lam):
    return poisson_rate(np.maximum(np.asarray(lam, dtype=float), 1.0), 1.0)


def mobility_bound(rho, v: RateVariant = DEFAULT_VARIANT):
    rho = np.asarray(rho, dtype=float)
    if np.any((rho < 0) | (rho > 1)):
        raise DomainError("density must lie in [0, 1]")
    a = v.truncation_a
    if v.variant == 1:
        phi = np.minimum(rho, 1 - rho)
        if a is not None:
            phi = (1 - a * a) * phi + a * a
        return _out(phi)
    phi = rho * (1 - rho)
    if a is not None:
        edge = a * (1 - a)
        phi = np.where(
            rho < a,
            edge + (1 - 2 * a) * (rho - a),
            np.where(rho > 1 - a, edge + (2 * a - 1) * (rho - (1 - a)), phi),
        )
    return _out(phi)


def local_rate(kappa, rho, v: RateVariant = DEFAULT_VARIANT):
    """Phi(rho) * truncated Poisson rate of kappa / Phi(rho)."""
    kappa = np.asarray(kappa, dtype=float)
    if np.any(kappa < 0):
        raise DomainError("flux kappa must be nonnegative")
    phi = np.asarray(mobility_bound(rho, v), dtype=float)
    phi, kappa = np.broadcast_arrays(phi, kappa)
    positive = phi > 0
    safe_phi = np.where(positive, phi, 1.0)
    value = np.where(positive, safe_phi * np.asarray(poisson_rate_trunc(kappa / safe_phi)), 0.0)
    value = np.where(~positive & (kappa > 0), np.inf, value)
    return _out(value)


def dual_local_rate(kappa, phi):
    """sup over alpha >= 0 of kappa alpha - phi (e^alpha - 1), at the maximiser."""
    kappa = np.asarray(kappa, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any(phi <= 0):
        raise DomainError("mobility bound must be positive in the dual form")
    alpha = np.log(np.maximum(kappa / phi, 1.0))
    return _out(kappa * alpha - phi * np.expm1(alpha))


def kernel_hlf(v):
    v = np.asarray(v, dtype=float)
    return _out(np.where(v <= -1, 0.0, np.where(v >= 1, v, 0.25 * (v + 1) ** 2)))


# ============================================================================
# Functionals on macroscopic paths
# ============================================================================


def _cumulative_integral(x: np.ndarray, y: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Exact integral of the linear interpolant of (x, y) from x[0] to each point."""
    y = np.atleast_2d(y)
    cum = np.concatenate([np.zeros((y.shape[0], 1)), np.cumsum(0.5 * np.diff(x) * (y[:, 1:] + y[:, :-1]), axis=1)], axis=1)
    k = np.clip(np.searchsorted(x, points, side="right") - 1, 0, x.size - 2)
    y_at = np.array([np.interp(points, x, row) for row in y])
    return cum[:, k] + 0.5 * (points - x[k]) * (y[:, k] + y_at)


def rate_functional(path: MacroField, v: RateVariant = DEFAULT_VARIANT, r: float = 1.0, cells: int = 16) -> float:
    """Sum over the rectangles of R_cells(r) of |rect| J(mean h_t, mean h_xi)."""
    path.check_path_space()
    if path.xi_grid[0] > -r + 1e-12 or path.xi_grid[-1] < r - 1e-12:
        raise GridError(f"[-{r}, {r}] is not covered by the field grid")
    t0, T = float(path.t_grid[0]), path.horizon
    t_edges = np.linspace(t0, T, cells + 1)
    xi_edges = np.linspace(-r, r, 2 * cells + 1)
    dt, dxi = (T - t0) / cells, r / cells

    # integrals over xi of every time row, then interpolated linearly in t
    row_int = _cumulative_integral(path.xi_grid, path.values, xi_edges)
    row_int = np.array([np.interp(t_edges, path.t_grid, row_int[:, c]) for c in range(xi_edges.size)]).T
    space_int = np.diff(row_int, axis=1)
    mean_ht = np.diff(space_int, axis=0) / (dt * dxi)

    # integrals over t of every xi column
    cols = np.array([np.interp(xi_edges, path.xi_grid, row) for row in path.values]).T
    col_int = _cumulative_integral(path.t_grid, cols, t_edges)
    mean_hx = np.diff(np.diff(col_int, axis=1), axis=0).T / (dt * dxi)

    dens = local_rate(np.maximum(mean_ht, 0.0), np.clip(mean_hx, 0.0, 1.0), v)
    total = float(np.sum(dens) * dt * dxi)
    logger.debug(f"rate functional with {cells} cells on [-{r}, {r}]: {total:.6g}")
    return total


def path_rate(
    path: MacroField,
    f_ic: FieldSlice,
    v: RateVariant = DEFAULT_VARIANT,
    r: float = 1.0,
    cells: int = 16,
    tol: float = 1e-9,
) -> float:
    """Rate of the whole path: infinite off the path space or away from f_ic."""
    if np.max(np.abs(path.values[0] - f_ic(path.xi_grid))) > tol:
        return np.inf
    try:
        return rate_functional(path, v, r, cells)
    except PathSpaceError as exc:
        logger.debug(f"path outside the path space: {exc}")
        return np.inf


def _dyadic_rows(path: MacroField, n: int) -> np.ndarray:
    steps = path.t_grid.size - 1
    if n < 0 or steps % (2 ** n):
        raise GridError(f"2^{n} does not divide the {steps} time steps of the field")
    return np.arange(0, steps + 1, steps // (2 ** n))


def dyadic_time_functional(path: MacroField, n: int, xi: float) -> float:
    rows = _dyadic_rows(path, n)
    h = path.column(xi)[rows]
    dt = np.diff(path.t_grid[rows])
    return float(np.sum(dt * poisson_rate_trunc(np.maximum(np.diff(h), 0.0) / dt)))


def integrated_dyadic_functional(path: MacroField, n: int, r: Optional[float] = None) -> float:
    """Integral over xi of the dyadic functional, optionally restricted to [-r, r]."""
    rows = _dyadic_rows(path, n)
    dt = np.diff(path.t_grid[rows])[:, None]
    incr = np.maximum(np.diff(path.values[rows], axis=0), 0.0)
    per_xi = np.sum(dt * poisson_rate_trunc(incr / dt), axis=0)
    keep = np.ones_like(path.xi_grid, dtype=bool) if r is None else np.abs(path.xi_grid) <= r
    return float(trapezoid(per_xi[keep], path.xi_grid[keep]))
