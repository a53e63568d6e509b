import numpy as np
import pytest

from aleufe.alemap import (
    DiscreteALEMap,
    artificial_velocity,
    jacobian_diagnostics,
    solve_one_step_map,
    two_phase_one_step_map,
    velocity_weights,
)
from aleufe.exceptions import OutsideFictitiousDomain
from aleufe.fespace import FESpace
from aleufe.flowmap import BoundaryMap
from aleufe.mesh import BackgroundMesh, classify_cells, two_phase_covers
from aleufe.quad import CutGeometry
from aleufe.timestep import bdf_coeffs

SHIFT = np.array([0.01, -0.005])


class AffineBoundaryMap(BoundaryMap):
    def __init__(self, matrix, offset):
        self.matrix = np.asarray(matrix, dtype=float)
        self.offset = np.asarray(offset, dtype=float)

    def __call__(self, points, params=None, curve_index=None):
        return points @ self.matrix.T + self.offset


@pytest.fixture
def space_and_geometry(offset_circle):
    mesh = BackgroundMesh((0.0, 0.0), 1.0, 8)
    cover = classify_cells(mesh, offset_circle, tau=mesh.h)
    return FESpace(mesh, cover, 3), CutGeometry(mesh, offset_circle, order=8)


def _translation_chain(space, steps, tau=0.1):
    ale = None
    for n in range(1, steps + 1):
        one_step = space.interpolate(lambda X: X - SHIFT)
        ale = DiscreteALEMap(step=n, time=n * tau, tau=tau, one_step=one_step, previous=ale)
    return ale


def test_identity_boundary_data_gives_identity_map(space_and_geometry):
    space, geometry = space_and_geometry
    result = solve_one_step_map(space, geometry, AffineBoundaryMap(np.eye(2), [0.0, 0.0]))
    np.testing.assert_allclose(result.coefficients, space.nodes, atol=1e-9)


def test_affine_boundary_data_is_extended_exactly(space_and_geometry):
    space, geometry = space_and_geometry
    A = np.array([[1.01, 0.02], [-0.01, 0.99]])
    b = np.array([0.003, -0.002])
    result = solve_one_step_map(space, geometry, AffineBoundaryMap(A, b))
    np.testing.assert_allclose(result.coefficients, space.nodes @ A.T + b, atol=1e-9)
    J = result.evaluate([[0.5, 0.5]], derivative_order=1)
    np.testing.assert_allclose(J[0], A, atol=1e-8)


def test_two_phase_map_is_identity_on_box_boundary(offset_circle):
    mesh = BackgroundMesh((0.0, 0.0), 1.0, 8)
    _, outer_cover = two_phase_covers(mesh, offset_circle, tau=mesh.h)
    space = FESpace(mesh, outer_cover, 2)
    geometry = CutGeometry(mesh, offset_circle, order=6)
    result = two_phase_one_step_map(space, geometry, AffineBoundaryMap(np.eye(2), SHIFT))
    outer = space.outer_dofs
    np.testing.assert_allclose(result.coefficients[outer], space.nodes[outer], atol=1e-14)
    iq_nodes = geometry.interface_rule(4).nodes
    np.testing.assert_allclose(result.evaluate(iq_nodes), iq_nodes + SHIFT, atol=2e-3)


def test_compose_translations(space_and_geometry):
    space, _ = space_and_geometry
    ale = _translation_chain(space, 3)
    X = np.array([[0.5, 0.5], [0.6, 0.45]])
    for i in range(4):
        np.testing.assert_allclose(ale.compose(i, X), X - i * SHIFT, atol=1e-13)
    J = ale.compose_jacobian(3, X)
    np.testing.assert_allclose(J, np.broadcast_to(np.eye(2), (2, 2, 2)), atol=1e-11)


def test_identity_step_in_chain(space_and_geometry):
    space, _ = space_and_geometry
    first = DiscreteALEMap(step=0, time=0.0, tau=0.1)
    ale = DiscreteALEMap(step=1, time=0.1, tau=0.1, one_step=space.interpolate(lambda X: X - SHIFT),
                         previous=first)
    X = np.array([[0.5, 0.5]])
    np.testing.assert_allclose(ale.compose(2, X), X - SHIFT, atol=1e-13)


def test_prune_limits_chain(space_and_geometry):
    space, _ = space_and_geometry
    ale = _translation_chain(space, 5)
    ale.prune(2)
    X = np.array([[0.5, 0.5]])
    np.testing.assert_allclose(ale.compose(2, X), X - 2 * SHIFT, atol=1e-13)
    with pytest.raises(ValueError):
        ale.compose(3, X)


def test_escaping_composition_reports_trace(space_and_geometry):
    space, _ = space_and_geometry
    ale = _translation_chain(space, 2)
    with pytest.raises(OutsideFictitiousDomain) as info:
        ale.compose(2, [[0.02, 0.02]])
    assert info.value.step == 2
    assert "X^{2,1}" in str(info.value)


@pytest.mark.parametrize("k", [2, 3, 4])
def test_artificial_velocity_of_translation(k, space_and_geometry):
    space, _ = space_and_geometry
    tau = 0.1
    ale = _translation_chain(space, k, tau)
    w = artificial_velocity(ale, k)
    np.testing.assert_allclose(w.field.coefficients, np.broadcast_to(SHIFT / tau, space.nodes.shape), atol=1e-9)
    assert w.max_norm == pytest.approx(np.linalg.norm(SHIFT) / tau)


def test_lagrange_in_time_hits_nodes(space_and_geometry):
    space, _ = space_and_geometry
    ale = _translation_chain(space, 3, tau=0.1)
    X = np.array([[0.5, 0.5]])
    np.testing.assert_allclose(ale.lagrange_at(X, ale.time, 3), X, atol=1e-13)
    np.testing.assert_allclose(ale.lagrange_at(X, ale.time - 0.2, 3), X - 2 * SHIFT, atol=1e-12)
    np.testing.assert_allclose(ale.lagrange_at(X, ale.time - 0.05, 3), X - 0.5 * SHIFT, atol=1e-12)


@pytest.mark.parametrize("k", [2, 3, 4])
def test_velocity_weights_are_bdf_over_tau(k):
    np.testing.assert_allclose(velocity_weights(k, 0.25) * 0.25, bdf_coeffs(k).coefficients, atol=1e-12)


def test_jacobian_diagnostics_of_translation(space_and_geometry):
    space, _ = space_and_geometry
    ale = _translation_chain(space, 2)
    report = jacobian_diagnostics(ale, 2, np.array([[0.5, 0.5], [0.55, 0.5]]))
    assert report.max_deviation < 1e-10
    assert report.det_min == pytest.approx(1.0)
    assert report.samples == 2


@pytest.mark.parametrize("t_offset", [0.0, 0.05, 0.15])
def test_lagrange_derivative_of_translation_is_constant(t_offset, space_and_geometry):
    space, _ = space_and_geometry
    tau = 0.1
    ale = _translation_chain(space, 3, tau)
    X = np.array([[0.5, 0.5], [0.45, 0.52]])
    rate = ale.lagrange_at(X, ale.time - t_offset, 3, derivative=True)
    np.testing.assert_allclose(rate, np.broadcast_to(SHIFT / tau, X.shape), atol=1e-10)
