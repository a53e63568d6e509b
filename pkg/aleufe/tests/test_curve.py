import numpy as np
import pytest

from aleufe.curve import (
    CurveSet,
    LevelSetGeometry,
    MarkerSet,
    circle_markers,
    closest_point,
    extract_contour,
    fit_closed_spline,
    grid_pieces,
    hausdorff_distance,
    inside,
    intersect_cell,
    polygon_area,
    resample,
)
from aleufe.exceptions import (
    NoContour,
    OnBoundary,
    ProjectionAmbiguous,
    SelfIntersectingPolygon,
    TooFewMarkers,
)


def test_circle_area_and_length(circle):
    assert circle.signed_area() == pytest.approx(np.pi * 0.25 ** 2, rel=1e-6)
    assert circle.arc_length() == pytest.approx(2 * np.pi * 0.25, rel=1e-6)


def test_ellipse_area(ellipse):
    assert ellipse.signed_area() == pytest.approx(np.pi * 0.3 * 0.2, rel=1e-5)


def test_clockwise_markers_are_reoriented():
    ccw = circle_markers((0.5, 0.5), 0.2, 40)
    cw = MarkerSet(ccw.points[::-1], ccw.target_spacing)
    curve = fit_closed_spline(cw)
    assert curve.signed_area() > 0
    np.testing.assert_allclose(curve.markers.points[0], cw.points[0])


def test_too_few_markers():
    with pytest.raises(TooFewMarkers):
        fit_closed_spline(MarkerSet(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), 0.5))


def test_self_intersecting_markers():
    bow_tie = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(SelfIntersectingPolygon):
        fit_closed_spline(MarkerSet(bow_tie, 0.5))


def test_projection_onto_circle(circle):
    cp = closest_point(circle, [0.9, 0.5])
    np.testing.assert_allclose(cp.point, [0.75, 0.5], atol=1e-6)
    assert cp.distance == pytest.approx(0.15, abs=1e-6)
    assert not cp.ambiguous


def test_vectorized_projection_distances(circle, rng):
    theta = rng.uniform(0, 2 * np.pi, 50)
    radius = rng.uniform(0.05, 0.45, 50)
    X = 0.5 + radius[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])
    proj = circle.project(X)
    np.testing.assert_allclose(proj.distances, np.abs(radius - 0.25), atol=1e-6)
    assert np.all((proj.params >= 0) & (proj.params < circle.period))


def test_equidistant_point_is_flagged(ellipse):
    cp = closest_point(ellipse, [0.5, 0.5])
    assert cp.ambiguous
    assert cp.distance == pytest.approx(0.2, abs=1e-6)
    with pytest.raises(ProjectionAmbiguous):
        closest_point(ellipse, [0.5, 0.5], strict=True)


def test_inside_and_on_boundary(circle):
    assert inside(circle, [0.5, 0.5])
    assert not inside(circle, [0.9, 0.9])
    with pytest.raises(OnBoundary):
        inside(circle, circle.point(0.0))


def test_signed_distance_sign(circle):
    sd = circle.signed_distance([[0.5, 0.5], [0.95, 0.5]])
    assert sd[0] == pytest.approx(-0.25, abs=1e-6)
    assert sd[1] == pytest.approx(0.2, abs=1e-6)


def test_resample_keeps_first_marker_and_spacing(circle):
    markers = resample(circle, 0.02)
    np.testing.assert_allclose(markers.points[0], circle.point(0.0), atol=1e-14)
    assert not markers.needs_resample()
    assert markers.gaps == pytest.approx(np.full(len(markers), markers.gaps.mean()), rel=1e-3)


def test_resample_is_idempotent(circle):
    first = resample(circle, 0.02)
    second = resample(fit_closed_spline(first), 0.02)
    assert len(second) == len(first)
    np.testing.assert_allclose(second.points, first.points, atol=1e-6)


def test_resample_rejects_large_spacing(circle):
    with pytest.raises(ValueError):
        resample(circle, 1.0)


def test_needs_resample_bounds():
    markers = circle_markers((0.5, 0.5), 0.25, 64)
    assert not markers.needs_resample()
    assert markers.needs_resample(eta=markers.target_spacing * 3)
    assert markers.needs_resample(eta=markers.target_spacing / 3)


def test_grid_pieces_tile_the_curve(circle, unit_mesh):
    pieces = grid_pieces(circle, unit_mesh.origin_array, unit_mesh.h, unit_mesh.n)
    assert pieces.t_a[0] == 0.0
    assert pieces.t_b[-1] == pytest.approx(circle.period)
    np.testing.assert_allclose(pieces.t_a[1:], pieces.t_b[:-1])
    centers = circle.point(0.5 * (pieces.t_a + pieces.t_b))
    cells, _ = unit_mesh.locate(centers)
    np.testing.assert_array_equal(cells, pieces.cell)


def test_intersect_cell_whole_curve_inside(circle):
    segments = intersect_cell(circle, [0.0, 0.0], [1.0, 1.0])
    assert len(segments) == 1
    assert segments[0].closed


def test_intersect_cell_quarter(circle):
    segments = intersect_cell(circle, [0.5, 0.5], [1.0, 1.0])
    assert len(segments) == 1
    seg = segments[0]
    assert not seg.closed
    assert circle.arc_length(seg.t_start, seg.t_end) == pytest.approx(np.pi * 0.25 / 2, rel=1e-5)


def test_hausdorff_of_concentric_circles(circle):
    bigger = fit_closed_spline(circle_markers((0.5, 0.5), 0.3, 128))
    assert hausdorff_distance(circle, bigger, n_samples=2000) == pytest.approx(0.05, abs=1e-6)
    assert hausdorff_distance(circle, circle, n_samples=2000) < 1e-10


def test_curve_set_area_and_membership():
    a = fit_closed_spline(circle_markers((0.3, 0.5), 0.1, 64))
    b = fit_closed_spline(circle_markers((0.7, 0.5), 0.1, 64))
    pair = CurveSet([a, b])
    assert pair.area() == pytest.approx(2 * np.pi * 0.01, rel=1e-5)
    np.testing.assert_array_equal(pair.contains([[0.3, 0.5], [0.7, 0.5], [0.5, 0.5]]), [True, True, False])
    proj = pair.project([[0.75, 0.5]])
    assert proj.curve_index[0] == 1


def test_empty_curve_set():
    with pytest.raises(NoContour):
        CurveSet([])


def test_extract_contour_of_circle():
    ls = LevelSetGeometry(phi=lambda X, t: np.linalg.norm(X - 0.5, axis=1) - 0.25, band=1 / 64)
    components = extract_contour(ls, 0.0, 0.02)
    assert len(components) == 1
    curve = fit_closed_spline(components[0])
    assert curve.signed_area() == pytest.approx(np.pi * 0.25 ** 2, rel=1e-5)
    radii = np.linalg.norm(components[0].points - 0.5, axis=1)
    np.testing.assert_allclose(radii, 0.25, atol=1e-10)


def test_extract_contour_two_components():
    def phi(X, t):
        return np.minimum(np.linalg.norm(X - [0.3, 0.5], axis=1), np.linalg.norm(X - [0.7, 0.5], axis=1)) - 0.1
    components = extract_contour(LevelSetGeometry(phi=phi, band=1 / 64), 0.0, 0.01)
    assert len(components) == 2
    assert all(polygon_area(m.points) > 0 for m in components)


def test_extract_contour_without_zero_set():
    ls = LevelSetGeometry(phi=lambda X, t: np.ones(len(X)), band=1 / 16)
    with pytest.raises(NoContour):
        extract_contour(ls, 0.0, 0.05)


def test_circle_center_projects_to_parameter_zero(circle):
    cp = closest_point(circle, [0.5, 0.5])
    assert cp.ambiguous
    assert abs(cp.param) < 1e-12
    np.testing.assert_allclose(cp.point, circle.point(0.0), atol=1e-14)
    assert cp.distance == pytest.approx(0.25, rel=1e-6)


def test_spline_approximates_circle_to_fourth_order():
    r = 0.15
    errors = []
    for n in (64, 128, 256):
        curve = fit_closed_spline(circle_markers((0.5, 0.5), r, n))
        _, pts = curve.sample(10000)
        errors.append(np.max(np.abs(np.hypot(pts[:, 0] - 0.5, pts[:, 1] - 0.5) - r)))
        eta = 2 * np.pi * r / n
        assert errors[-1] <= 10.0 * eta ** 4 / r ** 3
    rates = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(rates > 3.5)


def test_inside_matches_the_analytic_ellipse(ellipse, rng):
    X = rng.uniform(0.1, 0.9, size=(1000, 2))
    level = ((X[:, 0] - 0.5) / 0.3) ** 2 + ((X[:, 1] - 0.5) / 0.2) ** 2 - 1.0
    X, level = X[np.abs(level) > 1e-3], level[np.abs(level) > 1e-3]
    np.testing.assert_array_equal(ellipse.contains(X), level < 0)
    assert [inside(ellipse, x) for x in X[:50]] == list(level[:50] < 0)
