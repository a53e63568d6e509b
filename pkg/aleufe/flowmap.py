"""
Boundary motion: Runge-Kutta backtracking, prescribed tracking, SBDF marker updates and
the segment-transfer construction of the discrete backward boundary map.
"""
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

import config
from aleufe.curve import ClosedCurve, CurveSet, MarkerSet, as_curve_set, grid_pieces, resample_params
from aleufe.exceptions import NewtonDivergence, NonInvertibleF, UnsupportedOrder
from aleufe.lib.polynomial import lagrange_combination
from aleufe.timestep import sbdf_coeffs

logger = logging.getLogger(__name__)

VelocityField = Callable[[np.ndarray, float], np.ndarray]
PointMap = Callable[[np.ndarray], np.ndarray]

F = Fraction


@dataclass(frozen=True)
class ButcherTable:
    """Explicit Runge-Kutta coefficients; a is strictly lower triangular"""
    order: int
    a: Tuple[Tuple[Fraction, ...], ...]
    d: Tuple[Fraction, ...]
    c: Tuple[Fraction, ...]

    @property
    def stages(self) -> int:
        return len(self.d)

    @property
    def a_float(self) -> np.ndarray:
        return np.array([[float(v) for v in row] for row in self.a])

    @property
    def d_float(self) -> np.ndarray:
        return np.array([float(v) for v in self.d])

    @property
    def c_float(self) -> np.ndarray:
        return np.array([float(v) for v in self.c])


def _table(order: int, rows: List[List[Fraction]], d: List[Fraction], c: List[Fraction]) -> ButcherTable:
    s = len(d)
    a = [[F(0)] * s for _ in range(s)]
    for i, row in enumerate(rows, start=1):
        for j, v in enumerate(row):
            a[i][j] = F(v)
    return ButcherTable(order, tuple(tuple(r) for r in a), tuple(F(v) for v in d), tuple(F(v) for v in c))


BUTCHER_TABLES: Dict[int, ButcherTable] = {
    3: _table(3, [[F(1, 2)], [F(-1), F(2)]], [F(1, 6), F(2, 3), F(1, 6)], [F(0), F(1, 2), F(1)]),
    4: _table(4, [[F(1, 2)], [F(0), F(1, 2)], [F(0), F(0), F(1)]],
              [F(1, 6), F(1, 3), F(1, 3), F(1, 6)], [F(0), F(1, 2), F(1, 2), F(1)]),
    5: _table(5, [[F(1, 5)],
                  [F(3, 40), F(9, 40)],
                  [F(44, 45), F(-56, 15), F(32, 9)],
                  [F(19372, 6561), F(-25360, 2187), F(64448, 6561), F(-212, 729)],
                  [F(9017, 3168), F(-355, 33), F(46732, 5247), F(49, 176), F(-5103, 18656)]],
              [F(35, 384), F(0), F(500, 1113), F(125, 192), F(-2187, 6784), F(11, 84)],
              [F(0), F(1, 5), F(3, 10), F(4, 5), F(8, 9), F(1)]),
}


def butcher_table(order: int) -> ButcherTable:
    if order not in BUTCHER_TABLES:
        raise UnsupportedOrder(f"no Runge-Kutta table of order {order}, expected one of {tuple(BUTCHER_TABLES)}")
    return BUTCHER_TABLES[order]


def _rk(v: VelocityField, x: np.ndarray, t: float, tau: float, order: int, direction: float) -> np.ndarray:
    table = butcher_table(order)
    a, d, c = table.a_float, table.d_float, table.c_float
    x = np.asarray(x, dtype=float)
    slopes = []
    for i in range(table.stages):
        xi = x + direction * tau * sum(a[i, j] * slopes[j] for j in range(i)) if i else x
        slopes.append(np.asarray(v(xi, t + direction * c[i] * tau), dtype=float))
    return x + direction * tau * sum(di * s for di, s in zip(d, slopes))


def rk_backtrack(v: VelocityField, x, t_n: float, tau: float, order: int) -> np.ndarray:
    """
    One Runge-Kutta step backwards along the characteristics of v

    Args:
        v: Velocity field v(X, t) on points (M, 2)
        x: Points at time t_n, (2,) or (M, 2)
        t_n: Current time
        tau: Step
        order: 3, 4 or 5

    Returns:
        Approximate positions at t_n - tau
    """
    return _rk(v, x, t_n, tau, order, -1.0)


def rk_advance(v: VelocityField, x, t: float, tau: float, order: int) -> np.ndarray:
    """One Runge-Kutta step forward from t to t + tau"""
    return _rk(v, x, t, tau, order, 1.0)


# prescribed motion

class ClosedFormMotion:
    """Trajectories given in closed form, together with their inverse"""

    def __init__(self, position: Callable[[np.ndarray, float], np.ndarray],
                 initial: Callable[[np.ndarray, float], np.ndarray]):
        self.position = position
        self.initial = initial

    def advance(self, X: np.ndarray, t_from: float, t_to: float) -> np.ndarray:
        return self.position(self.initial(X, t_from), t_to)


class VelocityMotion:
    """Trajectories of a velocity field integrated with sub-stepped Runge-Kutta"""

    def __init__(self, velocity: VelocityField, order: int = 5, max_substep: float = 1.0 / 256):
        self.velocity = velocity
        self.order = order
        self.max_substep = max_substep

    def advance(self, X: np.ndarray, t_from: float, t_to: float) -> np.ndarray:
        span = t_to - t_from
        if span == 0:
            return np.array(X, dtype=float)
        steps = max(1, int(np.ceil(abs(span) / self.max_substep - 1e-12)))
        dt = abs(span) / steps
        x = np.array(X, dtype=float)
        t = t_from
        for _ in range(steps):
            if span > 0:
                x = rk_advance(self.velocity, x, t, dt, self.order)
                t += dt
            else:
                x = rk_backtrack(self.velocity, x, t, dt, self.order)
                t -= dt
        return x


Motion = Union[ClosedFormMotion, VelocityMotion]


def track_prescribed(motion: Motion, markers: MarkerSet, t: float, t0: float = 0.0) -> MarkerSet:
    """
    Marker images at time t under a prescribed motion

    Args:
        motion: Closed-form or velocity-driven motion
        markers: Markers at t0
        t: Target time
        t0: Time of the given markers

    Returns:
        MarkerSet at time t
    """
    return MarkerSet(motion.advance(markers.points, t0, t), markers.target_spacing)


@dataclass
class BoundaryMapSamples:
    """Source points with their images under a forward or backward boundary map"""
    source: np.ndarray
    mapped: np.ndarray
    direction: str = "backward"

    def __post_init__(self):
        if self.source.shape != self.mapped.shape:
            raise ValueError(f"source {self.source.shape} and mapped {self.mapped.shape} differ")
        if not np.all(np.isfinite(self.mapped)):
            raise ValueError("non-finite mapped boundary points")
        if self.direction not in ("forward", "backward"):
            raise ValueError(f"unknown direction '{self.direction}'")


def sbdf_update_markers(positions: Sequence[np.ndarray], velocities: Sequence[PointMap], tau: float,
                        k: int) -> BoundaryMapSamples:
    """
    Explicit SBDF-k forward map of boundary points

    X_F^{n-1,n} = (1/a_0) sum_i [tau b_i v^{n-i}(X_F^{n-1,n-i}) - a_i X_F^{n-1,n-i}]

    Args:
        positions: positions[i-1] = X_F^{n-1,n-i}(x) for i = 1..k; positions[0] are the points x
        velocities: velocities[i-1] evaluates v^{n-i} at points
        tau: Time step
        k: Scheme order

    Returns:
        BoundaryMapSamples in the forward direction
    """
    scheme = sbdf_coeffs(k)
    a, b = scheme.a_float, scheme.b_float
    if len(positions) < k or len(velocities) < k:
        raise ValueError(f"SBDF-{k} needs {k} histories, got {len(positions)} positions, {len(velocities)} velocities")
    total = np.zeros_like(np.asarray(positions[0], dtype=float))
    for i in range(1, k + 1):
        pos = np.asarray(positions[i - 1], dtype=float)
        total += tau * b[i - 1] * np.asarray(velocities[i - 1](pos), dtype=float) - a[i] * pos
    return BoundaryMapSamples(np.asarray(positions[0], dtype=float), total / a[0], direction="forward")


class MarkerTrajectories:
    """Markers of the current boundary with their positions on the previous boundaries"""

    def __init__(self, markers: MarkerSet, depth: int):
        self.markers = markers
        self.depth = depth
        self.past: List[np.ndarray] = []  # past[0] is one step back

    @property
    def positions(self) -> List[np.ndarray]:
        """Current points followed by the stored past positions, newest first"""
        return [self.markers.points] + self.past

    def advance(self, new_points: np.ndarray) -> "MarkerTrajectories":
        self.past = ([self.markers.points] + self.past)[:self.depth]
        self.markers = MarkerSet(new_points, self.markers.target_spacing)
        return self

    def history_at(self, curve: ClosedCurve, params: np.ndarray) -> List[np.ndarray]:
        """Current and past positions at curve parameters, by periodic spline in the current parameter"""
        out = [curve.point(params)]
        for past in self.past:
            closed = np.vstack([past, past[:1]])
            spline = CubicSpline(curve.knots, closed, axis=0, bc_type='periodic')
            out.append(spline(np.mod(params, curve.period)))
        return out

    def resample(self, curve: ClosedCurve, eta: Optional[float] = None) -> "MarkerTrajectories":
        """Redistribute markers uniformly in arc length, carrying the histories along"""
        eta = eta or self.markers.target_spacing
        t = resample_params(curve, eta)
        carried = self.history_at(curve, t)
        logger.warning(f"⚠️  resampling markers: {len(self.markers)} -> {len(t)}")
        self.markers = MarkerSet(carried[0], eta)
        self.past = carried[1:]
        return self


# segment transfer

@dataclass
class SegmentTransfer:
    """Per-segment degree-k maps F (old curve) and G (image curve) sharing the xi-nodes i/k"""
    k: int
    t_start: np.ndarray
    t_end: np.ndarray
    cells: np.ndarray
    curve_index: np.ndarray
    nodes: np.ndarray
    images: np.ndarray

    def __len__(self) -> int:
        return len(self.t_start)

    def old_point(self, seg: np.ndarray, xi: np.ndarray, deriv: int = 0) -> np.ndarray:
        return lagrange_combination(self.k, xi, self.nodes[seg], deriv)

    def new_point(self, seg: np.ndarray, xi: np.ndarray, deriv: int = 0) -> np.ndarray:
        return lagrange_combination(self.k, xi, self.images[seg], deriv)

    def forward(self, seg: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """G o F^{-1} at F(xi) on segment seg"""
        return self.new_point(seg, xi)

    def samples(self, per_segment: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        xi = np.linspace(0.0, 1.0, per_segment)
        seg = np.repeat(np.arange(len(self)), per_segment)
        xis = np.tile(xi, len(self))
        return self.new_point(seg, xis), seg, xis


def _merge_short(t_a: np.ndarray, t_b: np.ndarray, cells: np.ndarray, lengths: np.ndarray,
                 threshold: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    ta, tb, cl, ln = list(t_a), list(t_b), list(cells), list(lengths)
    m = 0
    while m < len(ta) and len(ta) > 1:
        if ln[m] >= threshold:
            m += 1
            continue
        if m > 0:
            tb[m - 1] = tb[m]
            ln[m - 1] += ln[m]
        else:
            ta[1] = ta[0]
            ln[1] += ln[0]
        del ta[m], tb[m], cl[m], ln[m]
    return np.array(ta), np.array(tb), np.array(cl, dtype=np.int64)


def build_segment_transfer(old_curve: Union[ClosedCurve, CurveSet], mesh, forward: PointMap, k: int,
                           merge_factor: float = config.SEGMENT_MERGE_FACTOR) -> SegmentTransfer:
    """
    Degree-k isoparametric pieces of the old curve and of its forward image

    Args:
        old_curve: Boundary at step n-1
        mesh: Background mesh (segments are split at its grid lines and at spline knots)
        forward: Forward boundary map evaluated at points of the old curve
        k: Polynomial degree of F and G
        merge_factor: Segments shorter than merge_factor * h join a neighbour

    Returns:
        SegmentTransfer

    Raises:
        NonInvertibleF: If the parameter derivative of some F changes sign
    """
    curves = as_curve_set(old_curve)
    parts = []
    for ci, curve in enumerate(curves):
        pieces = grid_pieces(curve, mesh.origin_array, mesh.h, mesh.n, ci)
        lengths = curve._interval_integral(curve.speed, pieces.t_a, pieces.t_b)
        ta, tb, cells = _merge_short(pieces.t_a, pieces.t_b, pieces.cell, lengths, merge_factor * mesh.h)
        xi = np.linspace(0.0, 1.0, k + 1)
        t_nodes = ta[:, None] + (tb - ta)[:, None] * xi[None, :]
        nodes = curve.point(t_nodes.ravel()).reshape(len(ta), k + 1, 2)
        check = np.linspace(0.0, 1.0, 2 * k + 1)
        seg = np.repeat(np.arange(len(ta)), len(check))
        dF = lagrange_combination(k, np.tile(check, len(ta)), nodes[seg], deriv=1)
        tangent = curve.derivative((ta[:, None] + (tb - ta)[:, None] * check[None, :]).ravel())
        if np.any(np.einsum('mx,mx->m', dF, tangent) <= 0):
            bad = int(seg[np.einsum('mx,mx->m', dF, tangent) <= 0][0])
            raise NonInvertibleF(f"segment {bad} of curve {ci} (t in [{ta[bad]:.6g}, {tb[bad]:.6g}]) folds over")
        parts.append((ta, tb, cells, np.full(len(ta), ci, dtype=np.int64), nodes))
    ta = np.concatenate([p[0] for p in parts])
    tb = np.concatenate([p[1] for p in parts])
    cells = np.concatenate([p[2] for p in parts])
    cidx = np.concatenate([p[3] for p in parts])
    nodes = np.concatenate([p[4] for p in parts])
    images = np.asarray(forward(nodes.reshape(-1, 2)), dtype=float).reshape(nodes.shape)
    logger.debug(f"segment transfer: {len(ta)} segments of degree {k}")
    return SegmentTransfer(k=k, t_start=ta, t_end=tb, cells=cells, curve_index=cidx, nodes=nodes, images=images)


def _project_on_images(transfer: SegmentTransfer, X: np.ndarray, n_candidates: int = 4,
                       samples: int = 17) -> Tuple[np.ndarray, np.ndarray]:
    pts, seg_s, xi_s = transfer.samples(samples)
    tree = cKDTree(pts)
    n_candidates = min(n_candidates, len(pts))
    _, idx = tree.query(X, k=n_candidates)
    idx = idx.reshape(len(X), n_candidates)
    seg = seg_s[idx].ravel()
    xi0 = xi_s[idx].ravel()
    x = np.repeat(X, n_candidates, axis=0)
    half = 1.0 / (samples - 1)
    lo = np.clip(xi0 - half, 0.0, 1.0)
    hi = np.clip(xi0 + half, 0.0, 1.0)
    xi = xi0.copy()
    converged = np.zeros(len(xi), dtype=bool)
    for _ in range(config.NEWTON_MAXITER):
        g = transfer.new_point(seg, xi) - x
        dg = transfer.new_point(seg, xi, deriv=1)
        ddg = transfer.new_point(seg, xi, deriv=2)
        f = np.einsum('mx,mx->m', dg, g)
        df = np.einsum('mx,mx->m', ddg, g) + np.einsum('mx,mx->m', dg, dg)
        lo = np.where(f < 0, xi, lo)
        hi = np.where(f > 0, xi, hi)
        step = np.where(df > 0, f / np.where(df > 0, df, 1.0), np.inf)
        proposal = xi - step
        outside = ~np.isfinite(proposal) | (proposal <= lo) | (proposal >= hi)
        new_xi = np.where(outside, 0.5 * (lo + hi), proposal)
        done = (np.abs(new_xi - xi) < config.NEWTON_TOL) | (hi - lo < config.NEWTON_TOL)
        xi = np.where(converged, xi, new_xi)
        converged |= done
        if converged.all():
            break
    dist = np.linalg.norm(transfer.new_point(seg, xi) - x, axis=1)
    dist = dist.reshape(len(X), n_candidates)
    best = np.argmin(dist, axis=1)
    rows = np.arange(len(X))
    flat = rows * n_candidates + best
    if not converged[flat].all():
        bad = int(np.nonzero(~converged[flat])[0][0])
        raise NewtonDivergence(f"projection onto segment {int(seg[flat][bad])} did not converge for point "
                               f"{X[bad].tolist()} after {config.NEWTON_MAXITER} iterations")
    return seg[flat], xi[flat]


def backward_boundary_map(transfer: SegmentTransfer, new_curve: Union[ClosedCurve, CurveSet, None] = None,
                          points: Optional[np.ndarray] = None) -> BoundaryMapSamples:
    """
    Backward boundary map: project onto the image curve, then return F at the same xi

    Args:
        transfer: Segment transfer of the previous step
        new_curve: Boundary at step n; its markers are used when points is None
        points: Points on the new boundary

    Returns:
        BoundaryMapSamples in the backward direction

    Raises:
        NewtonDivergence: If the projection does not converge
    """
    if points is None:
        if new_curve is None:
            raise ValueError("either new_curve or points is required")
        points = np.vstack([c.markers.points for c in as_curve_set(new_curve)])
    points = np.atleast_2d(np.asarray(points, dtype=float))
    seg, xi = _project_on_images(transfer, points)
    return BoundaryMapSamples(points, transfer.old_point(seg, xi), direction="backward")


# boundary maps for the ALE boundary data

class BoundaryMap:
    """Backward boundary map g^{n,n-1} evaluated at points of the current boundary"""

    def __call__(self, points: np.ndarray, params: Optional[np.ndarray] = None,
                 curve_index: Optional[np.ndarray] = None) -> np.ndarray:
        raise NotImplementedError


class MotionBoundaryMap(BoundaryMap):
    """Exact backward motion between two times"""

    def __init__(self, motion: Motion, t_n: float, t_prev: float):
        self.motion = motion
        self.t_n = t_n
        self.t_prev = t_prev

    def __call__(self, points, params=None, curve_index=None):
        return self.motion.advance(points, self.t_n, self.t_prev)


class BacktrackBoundaryMap(BoundaryMap):
    """One RK-(k+1) backtracking step of a velocity field"""

    def __init__(self, velocity: VelocityField, t_n: float, tau: float, order: int):
        self.velocity = velocity
        self.t_n = t_n
        self.tau = tau
        self.order = order

    def __call__(self, points, params=None, curve_index=None):
        return rk_backtrack(self.velocity, points, self.t_n, self.tau, self.order)


class MarkerSplineBoundaryMap(BoundaryMap):
    """Periodic spline through the backward images of the markers, in the current curve parameter"""

    def __init__(self, curves: Union[ClosedCurve, CurveSet], images: Sequence[np.ndarray]):
        self.curves = as_curve_set(curves)
        self._splines = []
        for curve, img in zip(self.curves, images):
            closed = np.vstack([img, img[:1]])
            self._splines.append(CubicSpline(curve.knots, closed, axis=0, bc_type='periodic'))

    def __call__(self, points, params=None, curve_index=None):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if params is None:
            proj = self.curves.project(points)
            params, curve_index = proj.params, proj.curve_index
        curve_index = np.zeros(len(points), dtype=np.int64) if curve_index is None else np.asarray(curve_index)
        out = np.zeros((len(points), 2))
        for ci, spline in enumerate(self._splines):
            sel = curve_index == ci
            if sel.any():
                out[sel] = spline(np.mod(params[sel], self.curves[ci].period))
        return out


class TransferBoundaryMap(BoundaryMap):
    """Backward map through a segment transfer"""

    def __init__(self, transfer: SegmentTransfer):
        self.transfer = transfer

    def __call__(self, points, params=None, curve_index=None):
        return backward_boundary_map(self.transfer, points=points).mapped


class ClosestPointBoundaryMap(BoundaryMap):
    """Closest point on the previous boundary"""

    def __init__(self, previous: Union[ClosedCurve, CurveSet]):
        self.previous = as_curve_set(previous)

    def __call__(self, points, params=None, curve_index=None):
        proj = self.previous.project(np.atleast_2d(np.asarray(points, dtype=float)))
        if proj.ambiguous.any():
            logger.debug(f"closest-point map: {int(proj.ambiguous.sum())} tie(s), smallest parameter used")
        return proj.points
