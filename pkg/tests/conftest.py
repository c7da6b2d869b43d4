"""
Shared fixtures: reproducible generators, the two-triangle diagonal-cut
deviation and the uniform intermittent deviation.
"""

import numpy as np
import pytest

from config.settings import Settings
from tasep.lattice import MacroField, triangulate

# Vertex heights of g = 0.231 t + 0.3 xi left of xi = t and
# g = 0.281 t + 0.25 xi right of it, on tau = b = 0.5 and [-3, 3].
DIAGONAL_CUT_VERTICES = [
    [-0.9, -0.75, -0.6, -0.45, -0.3, -0.15, 0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75],
    [-0.7845, -0.6345, -0.4845, -0.3345, -0.1845, -0.0345, 0.1155, 0.2655, 0.3905, 0.5155, 0.6405, 0.7655, 0.8905],
    [-0.669, -0.519, -0.369, -0.219, -0.069, 0.081, 0.231, 0.381, 0.531, 0.656, 0.781, 0.906, 1.031],
]


def fine_grid(lo, hi, step):
    return np.linspace(lo, hi, int(round((hi - lo) / step)) + 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def isolated_dirs(tmp_path, monkeypatch):
    """Point the run and log directories at a temporary location."""
    monkeypatch.setattr(Settings, "OUT_DIR", tmp_path / "runs")
    monkeypatch.setattr(Settings, "LOG_DIR", tmp_path / "logs")
    return tmp_path


@pytest.fixture
def diagonal_cut_field():
    t_grid = fine_grid(0.0, 1.0, 0.125)
    xi_grid = fine_grid(-3.0, 3.0, 0.125)
    return MacroField.from_vertices(np.array(DIAGONAL_CUT_VERTICES), 0.5, 0.5, 3.0, t_grid, xi_grid)


@pytest.fixture
def diagonal_cut_tri(diagonal_cut_field):
    return triangulate(diagonal_cut_field, 0.5, 0.5, 3.0)


@pytest.fixture
def intermittent_field():
    """g = 0.16 t + 0.5 xi: uniform speed 0.64 on [0, 1] x [-1.5, 1.5]."""
    return MacroField.from_function(lambda t, xi: 0.16 * t + 0.5 * xi, fine_grid(0.0, 1.0, 0.125), fine_grid(-1.5, 1.5, 0.125))


@pytest.fixture
def intermittent_tri(intermittent_field):
    return triangulate(intermittent_field, 0.5, 0.5, 1.5)


@pytest.fixture
def linear_field():
    """Factory for kappa t + rho xi on a fine grid over [0, T] x [-r, r]."""

    def make(kappa, rho, T=1.0, r=1.0, dt=1 / 16, dxi=1 / 32):
        return MacroField.from_function(lambda t, xi: kappa * t + rho * xi, fine_grid(0.0, T, dt), fine_grid(-r, r, dxi))

    return make
