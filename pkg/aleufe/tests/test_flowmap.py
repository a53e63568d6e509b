from fractions import Fraction

import numpy as np
import pytest

from aleufe.curve import circle_markers, fit_closed_spline
from aleufe.exceptions import UnsupportedOrder
from aleufe.flowmap import (
    BacktrackBoundaryMap,
    ClosedFormMotion,
    ClosestPointBoundaryMap,
    MarkerSplineBoundaryMap,
    MarkerTrajectories,
    MotionBoundaryMap,
    VelocityMotion,
    backward_boundary_map,
    build_segment_transfer,
    butcher_table,
    rk_advance,
    rk_backtrack,
    sbdf_update_markers,
    track_prescribed,
)


def rotation(X, t):
    X = np.atleast_2d(X)
    return np.column_stack([-(X[:, 1] - 0.5), X[:, 0] - 0.5])


def rotated(X, angle):
    c, s = np.cos(angle), np.sin(angle)
    d = np.atleast_2d(X) - 0.5
    return 0.5 + np.column_stack([c * d[:, 0] - s * d[:, 1], s * d[:, 0] + c * d[:, 1]])


@pytest.mark.parametrize("order", [3, 4, 5])
def test_butcher_conditions(order):
    table = butcher_table(order)
    assert sum(table.d) == 1
    for i in range(table.stages):
        assert sum(table.a[i]) == table.c[i]
    assert sum(d * c for d, c in zip(table.d, table.c)) == Fraction(1, 2)
    assert sum(d * c * c for d, c in zip(table.d, table.c)) == Fraction(1, 3)


def test_unknown_rk_order():
    with pytest.raises(UnsupportedOrder):
        butcher_table(2)


@pytest.mark.parametrize("order", [3, 4, 5])
def test_backtrack_convergence_order(order):
    x = np.array([[0.8, 0.5], [0.5, 0.2]])
    errors = []
    for tau in (0.2, 0.1):
        approx = rk_backtrack(rotation, x, 1.0, tau, order)
        errors.append(np.abs(approx - rotated(x, -tau)).max())
    assert np.log2(errors[0] / errors[1]) > order + 0.5


def test_advance_then_backtrack_is_identity_to_order():
    x = np.array([[0.7, 0.6]])
    there = rk_advance(rotation, x, 0.0, 0.01, 5)
    back = rk_backtrack(rotation, there, 0.01, 0.01, 5)
    np.testing.assert_allclose(back, x, atol=1e-12)


def test_velocity_motion_round_trip():
    motion = VelocityMotion(rotation, order=5, max_substep=0.05)
    x = np.array([[0.75, 0.5]])
    there = motion.advance(x, 0.0, np.pi / 2)
    np.testing.assert_allclose(there, [[0.5, 0.75]], atol=1e-9)
    np.testing.assert_allclose(motion.advance(there, np.pi / 2, 0.0), x, atol=1e-9)
    np.testing.assert_array_equal(motion.advance(x, 0.3, 0.3), x)


def test_closed_form_motion_and_tracking():
    shift = np.array([0.1, -0.05])
    motion = ClosedFormMotion(position=lambda X, t: X + t * shift, initial=lambda X, t: X - t * shift)
    markers = circle_markers((0.5, 0.5), 0.2, 16)
    moved = track_prescribed(motion, markers, t=2.0, t0=1.0)
    np.testing.assert_allclose(moved.points, markers.points + shift)
    back = MotionBoundaryMap(motion, t_n=2.0, t_prev=1.0)(moved.points)
    np.testing.assert_allclose(back, markers.points)


@pytest.mark.parametrize("k", [2, 3, 4])
def test_sbdf_stationary_points(k):
    x = np.random.default_rng(k).uniform(0.2, 0.8, (10, 2))
    zero = [lambda X: np.zeros_like(X)] * k
    result = sbdf_update_markers([x] * k, zero, 0.1, k)
    assert result.direction == "forward"
    np.testing.assert_allclose(result.mapped, x, atol=1e-14)


@pytest.mark.parametrize("k", [2, 3, 4])
def test_sbdf_exact_for_translation(k):
    c = np.array([0.3, -0.2])
    tau = 0.05
    x = np.array([[0.4, 0.6], [0.5, 0.5]])
    positions = [x - (i - 1) * tau * c for i in range(1, k + 1)]
    velocities = [lambda X: np.broadcast_to(c, X.shape)] * k
    result = sbdf_update_markers(positions, velocities, tau, k)
    np.testing.assert_allclose(result.mapped, x + tau * c, atol=1e-13)


def test_sbdf_needs_full_history():
    x = np.zeros((2, 2))
    with pytest.raises(ValueError):
        sbdf_update_markers([x], [lambda X: X], 0.1, 2)


def test_marker_trajectories_depth_and_history(circle):
    trajectories = MarkerTrajectories(circle.markers, depth=2)
    original = circle.markers.points
    for step in range(3):
        trajectories.advance(original + 0.01 * (step + 1))
    assert len(trajectories.past) == 2
    np.testing.assert_allclose(trajectories.past[0], original + 0.02)
    np.testing.assert_allclose(trajectories.past[1], original + 0.01)
    curve = fit_closed_spline(trajectories.markers)
    history = trajectories.history_at(curve, curve.knots[:-1])
    np.testing.assert_allclose(history[0], original + 0.03, atol=1e-14)
    np.testing.assert_allclose(history[1], original + 0.02, atol=1e-14)


def test_segment_transfer_translation(offset_circle, unit_mesh):
    shift = np.array([0.02, 0.01])
    transfer = build_segment_transfer(offset_circle, unit_mesh, lambda X: X + shift, k=3)
    assert len(transfer) > 0
    new_points = offset_circle.markers.points + shift
    result = backward_boundary_map(transfer, points=new_points)
    assert result.direction == "backward"
    np.testing.assert_allclose(result.mapped, offset_circle.markers.points, atol=1e-5)


def test_segment_transfer_identity_segments_are_continuous(circle, unit_mesh):
    transfer = build_segment_transfer(circle, unit_mesh, lambda X: X, k=2)
    ends = transfer.nodes[:, -1]
    starts = np.roll(transfer.nodes[:, 0], -1, axis=0)
    np.testing.assert_allclose(ends, starts, atol=1e-12)


def test_marker_spline_map_interpolates_images(circle):
    images = circle.markers.points - 0.01
    bmap = MarkerSplineBoundaryMap(circle, [images])
    params = circle.knots[:-1]
    np.testing.assert_allclose(bmap(circle.point(params), params=params), images, atol=1e-12)
    np.testing.assert_allclose(bmap(circle.point(params)), images, atol=1e-8)


def test_backtrack_boundary_map():
    bmap = BacktrackBoundaryMap(rotation, t_n=1.0, tau=0.01, order=4)
    x = np.array([[0.75, 0.5]])
    np.testing.assert_allclose(bmap(x), rotated(x, -0.01), atol=1e-11)


def test_closest_point_map(circle):
    bmap = ClosestPointBoundaryMap(circle)
    theta = np.linspace(0, 2 * np.pi, 7, endpoint=False)
    outer = 0.5 + 0.3 * np.column_stack([np.cos(theta), np.sin(theta)])
    expected = 0.5 + 0.25 * np.column_stack([np.cos(theta), np.sin(theta)])
    np.testing.assert_allclose(bmap(outer), expected, atol=1e-6)
