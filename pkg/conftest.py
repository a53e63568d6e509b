import numpy as np
import pytest

from aleufe.curve import circle_markers, ellipse_markers, fit_closed_spline
from aleufe.mesh import BackgroundMesh


@pytest.fixture
def unit_mesh():
    """16 x 16 cells on the unit square"""
    return BackgroundMesh((0.0, 0.0), 1.0, 16)


@pytest.fixture
def fine_mesh():
    return BackgroundMesh((0.0, 0.0), 1.0, 32)


@pytest.fixture
def circle():
    """Radius 0.25 around the center of the unit square"""
    return fit_closed_spline(circle_markers((0.5, 0.5), 0.25, 128))


@pytest.fixture
def ellipse():
    return fit_closed_spline(ellipse_markers((0.5, 0.5), 0.3, 0.2, 160))


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


@pytest.fixture
def offset_circle():
    """Circle in general position with respect to the grid lines"""
    return fit_closed_spline(circle_markers((0.5031, 0.4969), 0.2437, 128))
