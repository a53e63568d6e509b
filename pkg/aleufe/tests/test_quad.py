import numpy as np
import pytest

from aleufe.curve import circle_markers, ellipse_markers, fit_closed_spline
from aleufe.mesh import BackgroundMesh
from aleufe.quad import (
    CUT,
    EMPTY,
    FULL,
    CutGeometry,
    cut_area_rule,
    edge_rule,
    full_cell_rule,
    points_for_degree,
)


def _region_area(geometry, mesh, phase=1):
    status = geometry.status(np.arange(mesh.n_cells), phase)
    full = np.count_nonzero(status == FULL) * mesh.h ** 2
    return full + sum(geometry.cell_area(c, phase) for c in np.nonzero(status == CUT)[0])


@pytest.mark.parametrize("a,b", [(0, 0), (3, 2), (5, 5)])
def test_full_cell_rule_is_exact(a, b):
    rule = full_cell_rule([0.25, 0.5], 0.125, order=3)
    exact = ((0.375 ** (a + 1) - 0.25 ** (a + 1)) / (a + 1)) * ((0.625 ** (b + 1) - 0.5 ** (b + 1)) / (b + 1))
    assert rule.integrate(lambda X: X[:, 0] ** a * X[:, 1] ** b) == pytest.approx(exact, rel=1e-13)


def test_edge_rule_length():
    rule = edge_rule([0.0, 0.0], [0.3, 0.4], order=3)
    assert rule.total_weight == pytest.approx(0.5)


def test_points_for_degree():
    assert points_for_degree(1) == 1
    assert points_for_degree(8) == 5
    assert points_for_degree(9) == 5


@pytest.mark.parametrize("markers", [
    circle_markers((0.5031, 0.4969), 0.2437, 128),
    ellipse_markers((0.4983, 0.5027), 0.3012, 0.1987, 160),
])
def test_cut_areas_match_enclosed_area(markers):
    curve = fit_closed_spline(markers)
    mesh = BackgroundMesh((0.0, 0.0), 1.0, 32)
    geometry = CutGeometry(mesh, curve, order=8)
    assert _region_area(geometry, mesh, phase=1) == pytest.approx(curve.signed_area(), abs=1e-8)
    assert _region_area(geometry, mesh, phase=2) == pytest.approx(1.0 - curve.signed_area(), abs=1e-8)


def test_phases_split_polynomial_integrals(unit_mesh, offset_circle):
    geometry = CutGeometry(unit_mesh, offset_circle, order=8)

    def poly(X):
        return 1.0 + X[:, 0] ** 3 * X[:, 1] - 2.0 * X[:, 1] ** 4

    for cell in geometry.cut_cells:
        lo = unit_mesh.cell_lower_left(cell)
        whole = full_cell_rule(lo, unit_mesh.h, points_for_degree(8)).integrate(poly)
        parts = geometry.area_rule(cell, 1).integrate(poly) + geometry.area_rule(cell, 2).integrate(poly)
        assert parts == pytest.approx(whole, abs=1e-13)


def test_divergence_theorem_on_interface(fine_mesh, offset_circle):
    geometry = CutGeometry(fine_mesh, offset_circle, order=8)
    iq = geometry.interface_rule(8)
    flux = iq.integrate(iq.nodes[:, 0] * iq.normals[:, 0])
    assert flux == pytest.approx(offset_circle.signed_area(), abs=1e-12)
    assert iq.weights.sum() == pytest.approx(offset_circle.arc_length(), rel=1e-10)


def test_status_classification(unit_mesh, offset_circle):
    geometry = CutGeometry(unit_mesh, offset_circle, order=6)
    center = unit_mesh.locate([[0.5, 0.5]])[0]
    corner = unit_mesh.locate([[0.02, 0.02]])[0]
    assert geometry.status(center)[0] == FULL
    assert geometry.status(corner)[0] == EMPTY
    assert geometry.status(corner, phase=2)[0] == FULL
    assert np.all(geometry.status(geometry.cut_cells) == CUT)


def test_cut_rule_outside_and_inside_cells(offset_circle):
    h = 1 / 16
    assert len(cut_area_rule([0.0, 0.0], h, offset_circle, order=6)) == 0
    inside = cut_area_rule([0.5, 0.5], h, offset_circle, order=6)
    assert inside.total_weight == pytest.approx(h * h)


def test_small_closed_curve_inside_one_cell():
    small = fit_closed_spline(circle_markers((0.53, 0.53), 0.01, 32))
    h = 1 / 16
    inner = cut_area_rule([0.5, 0.5], h, small, order=6, curve_degree=0)
    outer = cut_area_rule([0.5, 0.5], h, small, order=6, phase=2, curve_degree=0)
    assert inner.total_weight == pytest.approx(small.signed_area(), rel=1e-10)
    assert outer.total_weight == pytest.approx(h * h - small.signed_area(), rel=1e-10)
    assert (inner.weights > 0).all()
    assert (outer.weights > 0).all()


@pytest.mark.parametrize("phase", [1, 2])
def test_cut_rules_have_positive_weights(unit_mesh, ellipse, phase):
    geometry = CutGeometry(unit_mesh, ellipse, order=8)
    for cell in geometry.cut_cells:
        rule = geometry.area_rule(cell, phase)
        assert (rule.weights > 0).all()


def test_hole_in_a_cut_cell_keeps_positive_weights():
    # one disk crosses the cell, a second one sits inside it
    crossing = fit_closed_spline(circle_markers((0.47, 0.53), 0.05, 64))
    hole = fit_closed_spline(circle_markers((0.548, 0.514), 0.006, 32))
    h = 1 / 16
    rule = cut_area_rule([0.5, 0.5], h, [crossing, hole], order=6, phase=2, curve_degree=0)
    inside = cut_area_rule([0.5, 0.5], h, [crossing, hole], order=6, phase=1, curve_degree=0)
    assert (rule.weights > 0).all()
    assert rule.total_weight + inside.total_weight == pytest.approx(h * h, rel=1e-10)
