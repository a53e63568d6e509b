"""
Closed marker curves: periodic cubic splines through tracked markers and the
geometric queries built on them (projection, inside test, grid crossings,
arc-length resampling, contour extraction from a level set).
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from matplotlib.path import Path as PolyPath
from scipy.interpolate import CubicSpline, PPoly
from scipy.spatial import cKDTree
from skimage import measure

import config
from aleufe.exceptions import (CurveOutsideDomain, DegenerateCurve, NoContour, OnBoundary,
                               ProjectionAmbiguous, SelfIntersectingPolygon, TooFewMarkers)
from aleufe.lib.polynomial import gauss_legendre

logger = logging.getLogger(__name__)

AMBIGUITY_TOL = 1e-12
TIE_RELATIVE_TOL = 1e-6  # relative distance band of a detected tie
ON_BOUNDARY_TOL = 1e-12
SAMPLES_PER_INTERVAL = 8


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def polygon_area(points: np.ndarray) -> float:
    """Signed shoelace area of a closed polygon (positive when counterclockwise)"""
    p = np.asarray(points, dtype=float)
    q = np.roll(p, -1, axis=0)
    return 0.5 * float(np.sum(_cross(p, q)))


def polygon_is_simple(points: np.ndarray, chunk: int = 256) -> bool:
    """True when no two non-adjacent edges of the closed polygon intersect"""
    p = np.asarray(points, dtype=float)
    n = len(p)
    a = p
    b = np.roll(p, -1, axis=0)
    idx = np.arange(n)
    for start in range(0, n, chunk):
        i = idx[start:start + chunk, None]
        a1, b1 = a[i[:, 0]][:, None, :], b[i[:, 0]][:, None, :]
        a2, b2 = a[None, :, :], b[None, :, :]
        d1 = _cross(b1 - a1, a2 - a1)
        d2 = _cross(b1 - a1, b2 - a1)
        d3 = _cross(b2 - a2, a1 - a2)
        d4 = _cross(b2 - a2, b1 - a2)
        proper = (d1 * d2 < 0) & (d3 * d4 < 0)
        j = idx[None, :]
        adjacent = (j == i) | (j == (i + 1) % n) | (j == (i - 1) % n)
        if np.any(proper & ~adjacent):
            return False
    return True


@dataclass(frozen=True)
class MarkerSet:
    """Ordered control points of one closed curve and their target spacing"""
    points: np.ndarray
    target_spacing: float

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=float))
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"markers must have shape (J, 2), got {pts.shape}")
        pts.setflags(write=False)
        object.__setattr__(self, 'points', pts)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def gaps(self) -> np.ndarray:
        """Chord lengths |p_{j+1} - p_j| including the closing gap"""
        return np.linalg.norm(np.roll(self.points, -1, axis=0) - self.points, axis=1)

    @property
    def cumulative_lengths(self) -> np.ndarray:
        """Cumulative chord lengths L_j, starting at 0 and ending at the closed length"""
        return np.concatenate([[0.0], np.cumsum(self.gaps)])

    def needs_resample(self, eta: Optional[float] = None) -> bool:
        """True when some gap leaves [RESAMPLE_LOWER*eta, RESAMPLE_UPPER*eta]"""
        eta = self.target_spacing if eta is None else eta
        g = self.gaps
        return bool(np.any(g < config.RESAMPLE_LOWER * eta) or np.any(g > config.RESAMPLE_UPPER * eta))


@dataclass
class ClosestPoint:
    """Result of a single-point projection onto a curve"""
    point: np.ndarray
    param: float
    distance: float
    ambiguous: bool = False
    curve_index: int = 0


@dataclass
class Projection:
    """Vectorized projection result"""
    points: np.ndarray
    params: np.ndarray
    distances: np.ndarray
    ambiguous: np.ndarray
    curve_index: np.ndarray


@dataclass(frozen=True)
class CurveSegment:
    """Maximal parameter interval of a curve inside a closed cell"""
    t_start: float
    t_end: float
    entry: np.ndarray
    exit: np.ndarray
    closed: bool = False
    curve_index: int = 0


@dataclass
class CurvePieces:
    """Curve split at grid lines and knots; every piece lies in exactly one cell"""
    curve_index: np.ndarray
    t_a: np.ndarray
    t_b: np.ndarray
    cell: np.ndarray
    start_knot: np.ndarray
    end_knot: np.ndarray

    def __len__(self) -> int:
        return len(self.t_a)

    @classmethod
    def empty(cls) -> "CurvePieces":
        z = np.zeros(0)
        zi = np.zeros(0, dtype=np.int64)
        zb = np.zeros(0, dtype=bool)
        return cls(zi, z, z, zi, zb, zb)

    @classmethod
    def concatenate(cls, parts: Sequence["CurvePieces"]) -> "CurvePieces":
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, name) for p in parts])
                     for name in ('curve_index', 't_a', 't_b', 'cell', 'start_knot', 'end_knot')))


class ClosedCurve:
    """Periodic C2 cubic spline through counterclockwise markers, parameterized by chord length"""

    def __init__(self, markers: MarkerSet):
        pts = markers.points
        self.markers = markers
        self.knots = markers.cumulative_lengths
        if np.any(np.diff(self.knots) <= 0):
            raise DegenerateCurve("coincident consecutive markers")
        self.period = float(self.knots[-1])
        closed = np.vstack([pts, pts[:1]])
        self.spline = CubicSpline(self.knots, closed, axis=0, bc_type='periodic', extrapolate='periodic')
        self._components = [PPoly(self.spline.c[:, :, d], self.spline.x, extrapolate=False) for d in range(2)]
        self._tree = None
        self._paths = {}

    def __repr__(self) -> str:
        return f"ClosedCurve(markers={len(self.markers)}, length={self.period:.6g})"

    @property
    def eta(self) -> float:
        return self.markers.target_spacing

    @property
    def n_markers(self) -> int:
        return len(self.markers)

    # evaluation

    def wrap(self, t) -> np.ndarray:
        return np.mod(np.asarray(t, dtype=float), self.period)

    def point(self, t) -> np.ndarray:
        return self.spline(np.asarray(t, dtype=float))

    def derivative(self, t, nu: int = 1) -> np.ndarray:
        return self.spline(np.asarray(t, dtype=float), nu)

    def speed(self, t) -> np.ndarray:
        return np.linalg.norm(self.derivative(t), axis=-1)

    def tangent(self, t) -> np.ndarray:
        d = self.derivative(t)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def normal(self, t) -> np.ndarray:
        """Unit outward normal (counterclockwise orientation)"""
        tan = self.tangent(t)
        return np.stack([tan[..., 1], -tan[..., 0]], axis=-1)

    def curvature(self, t) -> np.ndarray:
        d1 = self.derivative(t, 1)
        d2 = self.derivative(t, 2)
        return _cross(d1, d2) / np.linalg.norm(d1, axis=-1) ** 3

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        ext = [self.point(self.knots)]
        for d in range(2):
            t = self._components[d].derivative().solve(0.0, discontinuity=False, extrapolate=False)
            t = t[np.isfinite(t)]
            if t.size:
                ext.append(self.point(t))
        allp = np.vstack(ext)
        return allp.min(axis=0), allp.max(axis=0)

    def sample(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        """n parameters uniform in [0, L) and their points"""
        t = np.linspace(0.0, self.period, n, endpoint=False)
        return t, self.point(t)

    # integrals

    def _interval_integral(self, func: Callable[[np.ndarray], np.ndarray], t0, t1, n: int = 10) -> np.ndarray:
        xg, wg = gauss_legendre(n)
        t0 = np.asarray(t0, dtype=float)
        t1 = np.asarray(t1, dtype=float)
        tt = t0[..., None] + (t1 - t0)[..., None] * xg
        return (func(tt) * wg).sum(axis=-1) * (t1 - t0)

    def interval_arc_lengths(self) -> np.ndarray:
        return self._interval_integral(self.speed, self.knots[:-1], self.knots[1:])

    def arc_length(self, t0: float = 0.0, t1: Optional[float] = None) -> float:
        """Arc length between two parameters (t1 >= t0, not wrapped)"""
        if t1 is None:
            return float(self.interval_arc_lengths().sum())
        breaks = self._split_at_knots(t0, t1)
        return float(self._interval_integral(self.speed, breaks[:-1], breaks[1:]).sum())

    def _split_at_knots(self, t0: float, t1: float) -> np.ndarray:
        shift = np.floor(t0 / self.period) * self.period
        knots = []
        for m in range(int(np.floor((t1 - shift) / self.period)) + 1):
            knots.append(self.knots + shift + m * self.period)
        inner = np.concatenate(knots)
        inner = inner[(inner > t0) & (inner < t1)]
        return np.concatenate([[t0], inner, [t1]])

    def signed_area(self) -> float:
        """Enclosed area by the boundary integral 1/2 * int (x y' - y x') dt, exact for the spline"""
        def integrand(tt):
            p = self.point(tt)
            d = self.derivative(tt)
            return 0.5 * _cross(p, d)
        return float(self._interval_integral(integrand, self.knots[:-1], self.knots[1:], n=4).sum())

    # projection

    def _sample_tree(self):
        if self._tree is None:
            m = SAMPLES_PER_INTERVAL
            dt = np.diff(self.knots)
            ts = (self.knots[:-1, None] + dt[:, None] * (np.arange(m) / m)).ravel()
            half = np.repeat(dt / m, m)
            half = np.maximum(half, np.roll(half, 1))
            self._tree = (cKDTree(self.point(ts)), ts, half)
        return self._tree

    def _distance_slope(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        return np.sum((self.point(t) - x) * self.derivative(t), axis=-1)

    def _refine(self, x: np.ndarray, t0: np.ndarray, half: np.ndarray,
                tol: float = config.NEWTON_TOL, maxiter: int = config.NEWTON_MAXITER) -> np.ndarray:
        """Bracketed Newton on (c(t) - x) . c'(t) = 0 around each initial parameter"""
        a = t0 - half
        b = t0 + half
        fa = self._distance_slope(x, a)
        fb = self._distance_slope(x, b)
        for _ in range(3):
            left = fa > 0
            right = fb < 0
            if not (left.any() or right.any()):
                break
            a[left] -= half[left]
            fa[left] = self._distance_slope(x[left], a[left])
            b[right] += half[right]
            fb[right] = self._distance_slope(x[right], b[right])
        bracketed = (fa <= 0) & (fb >= 0)
        t = t0.copy()
        if not bracketed.all():
            nb = ~bracketed
            options = np.stack([a[nb], t0[nb], b[nb]], axis=1)
            dist = np.linalg.norm(self.point(options) - x[nb][:, None, :], axis=-1)
            t[nb] = options[np.arange(options.shape[0]), np.argmin(dist, axis=1)]
        scale = tol * max(self.period, 1.0)
        active = bracketed.copy()
        for _ in range(maxiter):
            if not active.any():
                break
            ia = np.nonzero(active)[0]
            ti = t[ia]
            r = self.point(ti) - x[ia]
            d1 = self.derivative(ti, 1)
            d2 = self.derivative(ti, 2)
            f = np.sum(r * d1, axis=-1)
            fp = np.sum(d1 * d1, axis=-1) + np.sum(r * d2, axis=-1)
            neg = f <= 0
            a[ia[neg]] = ti[neg]
            b[ia[~neg]] = ti[~neg]
            with np.errstate(divide='ignore', invalid='ignore'):
                tn = ti - f / fp
            lo, hi = a[ia], b[ia]
            bad = ~np.isfinite(tn) | (fp <= 0) | (tn < lo) | (tn > hi)
            tn[bad] = 0.5 * (lo[bad] + hi[bad])
            t[ia] = tn
            done = (np.abs(tn - ti) <= scale) | (hi - lo <= scale)
            active[ia[done]] = False
        return t

    def project(self, X, n_candidates: int = 6) -> Projection:
        """
        Closest points on the curve for many query points

        Args:
            X: Query points, shape (M, 2)
            n_candidates: Number of dense-sample seeds refined per point

        Returns:
            Projection with points, wrapped parameters, distances and tie flags
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        M = len(X)
        tree, ts, half = self._sample_tree()
        q = min(n_candidates, len(ts))
        _, idx = tree.query(X, k=q)
        idx = np.asarray(idx).reshape(M, q)
        xc = np.repeat(X, q, axis=0)
        t = self._refine(xc, ts[idx].ravel().copy(), half[idx].ravel().copy())
        pts = self.point(t)
        dist = np.linalg.norm(pts - xc, axis=1).reshape(M, q)
        t = self.wrap(t).reshape(M, q)
        pts = pts.reshape(M, q, 2)
        rows = np.arange(M)
        best = np.argmin(dist, axis=1)
        dbest = dist[rows, best]
        tbest = t[rows, best]
        close = np.abs(dist - dbest[:, None]) <= AMBIGUITY_TOL
        gap = np.abs(t - tbest[:, None])
        gap = np.minimum(gap, self.period - gap)
        separate = np.linalg.norm(pts - pts[rows, best][:, None, :], axis=-1) > 1e-9
        ties = close & (gap > 1e-7 * self.period) & separate
        ambiguous = ties.any(axis=1)
        out_t, out_pts, out_d = t[rows, best], pts[rows, best], dist[rows, best]
        for r in np.nonzero(ambiguous)[0]:
            # the seeds only see part of the tie set; widen it to every sample at the minimal distance
            cand = np.concatenate([t[r, close[r]], ts])
            cand_pts = self.point(cand)
            cand_d = np.linalg.norm(cand_pts - X[r], axis=1)
            tied = cand_d <= dbest[r] * (1.0 + TIE_RELATIVE_TOL) + AMBIGUITY_TOL
            j = np.nonzero(tied)[0][np.argmin(cand[tied])]
            out_t[r], out_pts[r], out_d[r] = cand[j], cand_pts[j], cand_d[j]
        return Projection(points=out_pts, params=out_t, distances=out_d, ambiguous=ambiguous,
                          curve_index=np.zeros(M, dtype=np.int64))

    # inside test

    def _polyline(self, level: int) -> Tuple[PolyPath, float]:
        if level not in self._paths:
            m = 16 * 2 ** level
            dt = np.diff(self.knots)
            ts = (self.knots[:-1, None] + dt[:, None] * (np.arange(m) / m)).ravel()
            verts = self.point(ts)
            mids = self.point(ts + np.repeat(dt / m, m) / 2)
            chord_mid = 0.5 * (verts + np.roll(verts, -1, axis=0))
            err = 1.5 * float(np.max(np.linalg.norm(mids - chord_mid, axis=1))) + 1e-15
            self._paths[level] = (PolyPath(np.vstack([verts, verts[:1]]), closed=True), err)
        return self._paths[level]

    def contains(self, X, projection: Optional[Projection] = None, max_level: int = 3) -> np.ndarray:
        """
        Vectorized winding test against the spline; points on the curve get the normal-side answer

        Args:
            X: Points, shape (M, 2)
            projection: Optional precomputed projection of X
            max_level: Polyline refinement levels before falling back to the normal test

        Returns:
            Boolean array, True for points enclosed by the curve
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        proj = projection or self.project(X)
        result = np.zeros(len(X), dtype=bool)
        pending = np.ones(len(X), dtype=bool)
        for level in range(max_level + 1):
            if not pending.any():
                break
            path, err = self._polyline(level)
            ip = np.nonzero(pending)[0]
            certain = proj.distances[ip] > err
            if certain.any():
                sel = ip[certain]
                result[sel] = path.contains_points(X[sel])
                pending[sel] = False
        if pending.any():
            ip = np.nonzero(pending)[0]
            normal = self.normal(proj.params[ip])
            result[ip] = np.sum((X[ip] - proj.points[ip]) * normal, axis=1) < 0
        return result

    def signed_distance(self, X) -> np.ndarray:
        """Distance to the curve, negative inside"""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        proj = self.project(X)
        inside = self.contains(X, proj)
        return np.where(inside, -proj.distances, proj.distances)

    # grid crossings

    def crossings(self, axis: int, value: float) -> np.ndarray:
        """Parameters in [0, L] where the given coordinate equals value"""
        roots = self._components[axis].solve(value, discontinuity=False, extrapolate=False)
        return np.unique(roots[np.isfinite(roots)])

    def extremal_params(self) -> np.ndarray:
        """Parameters where x'(t) = 0 or y'(t) = 0"""
        out = []
        for d in range(2):
            roots = self._components[d].derivative().solve(0.0, discontinuity=False, extrapolate=False)
            out.append(roots[np.isfinite(roots)])
        return np.unique(np.concatenate(out)) if out else np.zeros(0)

    def dump_csv(self, path: Union[str, Path], n_samples: int = 400) -> Path:
        """Write (parameter, x, y) samples for plotting"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        t, pts = self.sample(n_samples)
        np.savetxt(path, np.column_stack([t, pts]), delimiter=',', header='parameter,x,y', comments='')
        return path


class CurveSet:
    """Disjoint closed curves bounding a (possibly multiply connected) region"""

    def __init__(self, curves: Iterable[ClosedCurve]):
        self.curves: List[ClosedCurve] = list(curves)
        if not self.curves:
            raise NoContour("curve set is empty")

    def __iter__(self) -> Iterator[ClosedCurve]:
        return iter(self.curves)

    def __len__(self) -> int:
        return len(self.curves)

    def __getitem__(self, i: int) -> ClosedCurve:
        return self.curves[i]

    def project(self, X) -> Projection:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        best: Optional[Projection] = None
        for ci, curve in enumerate(self.curves):
            p = curve.project(X)
            p.curve_index = np.full(len(X), ci, dtype=np.int64)
            if best is None:
                best = p
                continue
            better = p.distances < best.distances - AMBIGUITY_TOL
            tie = np.abs(p.distances - best.distances) <= AMBIGUITY_TOL
            best.ambiguous = best.ambiguous | tie
            for name in ('points', 'params', 'distances', 'ambiguous', 'curve_index'):
                getattr(best, name)[better] = getattr(p, name)[better]
        return best

    def contains(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(len(X), dtype=bool)
        for curve in self.curves:
            out |= curve.contains(X)
        return out

    def signed_distance(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        proj = self.project(X)
        return np.where(self.contains(X), -proj.distances, proj.distances)

    def area(self) -> float:
        return sum(c.signed_area() for c in self.curves)

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        boxes = [c.bounding_box() for c in self.curves]
        return np.min([b[0] for b in boxes], axis=0), np.max([b[1] for b in boxes], axis=0)

    def point(self, curve_index: np.ndarray, t: np.ndarray) -> np.ndarray:
        out = np.zeros((len(t), 2))
        for ci, curve in enumerate(self.curves):
            sel = curve_index == ci
            if sel.any():
                out[sel] = curve.point(t[sel])
        return out

    def derivative(self, curve_index: np.ndarray, t: np.ndarray, nu: int = 1) -> np.ndarray:
        out = np.zeros((len(t), 2))
        for ci, curve in enumerate(self.curves):
            sel = curve_index == ci
            if sel.any():
                out[sel] = curve.derivative(t[sel], nu)
        return out


def as_curve_set(curves: Union[ClosedCurve, CurveSet, Sequence[ClosedCurve]]) -> CurveSet:
    if isinstance(curves, CurveSet):
        return curves
    if isinstance(curves, ClosedCurve):
        return CurveSet([curves])
    return CurveSet(curves)


def fit_closed_spline(markers: MarkerSet) -> ClosedCurve:
    """
    Fit the periodic cubic spline through a marker set

    Args:
        markers: At least four markers forming a simple polygon

    Returns:
        ClosedCurve oriented counterclockwise (marker order reversed if needed, first marker kept)

    Raises:
        TooFewMarkers: Fewer than four markers
        SelfIntersectingPolygon: Marker polygon crosses itself
    """
    pts = markers.points
    if len(pts) < 4:
        raise TooFewMarkers(f"need at least 4 markers, got {len(pts)}")
    if not polygon_is_simple(pts):
        raise SelfIntersectingPolygon(f"marker polygon with {len(pts)} points self-intersects")
    if polygon_area(pts) < 0:
        pts = np.vstack([pts[:1], pts[:0:-1]])
        markers = MarkerSet(pts, markers.target_spacing)
    return ClosedCurve(markers)


def resample_params(curve: ClosedCurve, eta: float) -> np.ndarray:
    """
    Curve parameters of markers uniform in arc length with spacing close to eta, starting at t = 0

    Args:
        curve: Source curve
        eta: Target spacing, below a quarter of the arc length

    Returns:
        round(L / eta) increasing parameters
    """
    seg = curve.interval_arc_lengths()
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if not 0 < eta < total / 4:
        raise ValueError(f"eta={eta} must be positive and below a quarter of the arc length {total:.6g}")
    n = max(4, int(round(total / eta)))
    targets = np.arange(n) * (total / n)
    iv = np.clip(np.searchsorted(cum, targets, side='right') - 1, 0, len(seg) - 1)
    t0 = curve.knots[iv]
    dt = np.diff(curve.knots)[iv]
    remaining = targets - cum[iv]
    t = t0 + dt * np.where(seg[iv] > 0, remaining / seg[iv], 0.0)
    for _ in range(30):
        arc = curve._interval_integral(curve.speed, t0, t)
        step = (arc - remaining) / curve.speed(t)
        t = np.clip(t - step, t0, t0 + dt)
        if np.max(np.abs(step)) < 1e-14 * curve.period:
            break
    t[0] = 0.0
    return t


def resample(curve: ClosedCurve, eta: float) -> MarkerSet:
    """Markers uniform in arc length with spacing close to eta, first marker retained"""
    return MarkerSet(curve.point(resample_params(curve, eta)), eta)


def closest_point(curve: ClosedCurve, x, strict: bool = False) -> ClosestPoint:
    """
    Closest point on the curve to a single point

    Args:
        curve: Curve (or curve set)
        x: Query point
        strict: Raise instead of flagging when two candidates tie

    Returns:
        ClosestPoint; ties resolve to the smallest parameter and set the ambiguous flag

    Raises:
        ProjectionAmbiguous: Only when strict is True and a tie is detected
    """
    query = np.asarray(x, dtype=float)[None, :]
    if isinstance(curve, CurveSet):
        proj = curve.project(query)
    else:
        proj = curve.project(query, n_candidates=12)
    if strict and proj.ambiguous[0]:
        raise ProjectionAmbiguous(f"point {list(x)} has several closest points")
    return ClosestPoint(point=proj.points[0], param=float(proj.params[0]), distance=float(proj.distances[0]),
                        ambiguous=bool(proj.ambiguous[0]), curve_index=int(proj.curve_index[0]))


def inside(curve: Union[ClosedCurve, CurveSet], x) -> bool:
    """
    Whether a point is enclosed by the curve

    Raises:
        OnBoundary: If the point is within 1e-12 of the curve
    """
    x = np.asarray(x, dtype=float)[None, :]
    proj = curve.project(x)
    if proj.distances[0] <= ON_BOUNDARY_TOL:
        raise OnBoundary(f"point {x[0].tolist()} lies on the curve")
    return bool(curve.contains(x)[0])


def hausdorff_distance(a: ClosedCurve, b: ClosedCurve, n_samples: int = 10000) -> float:
    """Symmetric Hausdorff distance from dense samples refined by projection"""
    _, pa = a.sample(n_samples)
    _, pb = b.sample(n_samples)
    return float(max(b.project(pa).distances.max(), a.project(pb).distances.max()))


def grid_pieces(curve: ClosedCurve, origin: np.ndarray, h: float, n: int, curve_index: int = 0) -> CurvePieces:
    """
    Split a curve at every grid-line crossing and every knot

    Args:
        curve: Curve to split
        origin: Lower-left corner of the grid
        h: Cell size
        n: Cells per side
        curve_index: Index stored on the pieces

    Returns:
        CurvePieces tiling [0, L], each piece inside one cell

    Raises:
        CurveOutsideDomain: If a piece lies outside the grid
    """
    L = curve.period
    tol = 1e-12 * L
    lo, hi = curve.bounding_box()
    roots = []
    for axis in range(2):
        first = int(np.ceil((lo[axis] - origin[axis]) / h - 1e-12))
        last = int(np.floor((hi[axis] - origin[axis]) / h + 1e-12))
        for i in range(first, last + 1):
            roots.append(curve.crossings(axis, origin[axis] + i * h))
    roots = np.concatenate(roots) if roots else np.zeros(0)
    knots = curve.knots
    if roots.size:
        pos = np.clip(np.searchsorted(knots, roots), 1, len(knots) - 1)
        near = np.minimum(np.abs(roots - knots[pos - 1]), np.abs(roots - knots[pos])) <= tol
        roots = np.sort(roots[~near])
        if roots.size:
            roots = roots[np.concatenate([[True], np.diff(roots) > tol])]
    breaks = np.concatenate([knots, roots])
    is_knot = np.concatenate([np.ones(len(knots), dtype=bool), np.zeros(len(roots), dtype=bool)])
    order = np.argsort(breaks, kind='stable')
    breaks = breaks[order]
    is_knot = is_knot[order]
    t_a, t_b = breaks[:-1], breaks[1:]
    mids = curve.point(0.5 * (t_a + t_b))
    ij = np.floor((mids - origin) / h).astype(np.int64)
    if np.any(ij < 0) or np.any(ij >= n):
        raise CurveOutsideDomain("curve leaves the background grid")
    return CurvePieces(curve_index=np.full(len(t_a), curve_index, dtype=np.int64), t_a=t_a, t_b=t_b,
                       cell=ij[:, 0] + n * ij[:, 1], start_knot=is_knot[:-1], end_knot=is_knot[1:])


def intersect_cell(curve: ClosedCurve, lo, hi) -> List[CurveSegment]:
    """
    Maximal parameter intervals of the curve inside the closed box [lo, hi]

    Args:
        curve: Curve
        lo: Lower-left corner of the cell
        hi: Upper-right corner of the cell

    Returns:
        Segments ordered by parameter; zero-length grazing contacts are dropped
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    L = curve.period
    tol = 1e-12 * L
    roots = [curve.crossings(axis, v) for axis in range(2) for v in (lo[axis], hi[axis])]
    breaks = np.unique(np.concatenate(roots + [np.array([0.0, L])]))
    breaks = breaks[np.concatenate([[True], np.diff(breaks) > tol])]
    breaks[-1] = L
    t_a, t_b = breaks[:-1], breaks[1:]
    mids = curve.point(0.5 * (t_a + t_b))
    eps = 1e-12 * max(1.0, float(np.max(hi - lo)))
    inside_box = np.all((mids >= lo - eps) & (mids <= hi + eps), axis=1)
    intervals: List[List[float]] = []
    for a, b, keep in zip(t_a, t_b, inside_box):
        if not keep:
            continue
        if intervals and abs(intervals[-1][1] - a) <= tol:
            intervals[-1][1] = b
        else:
            intervals.append([a, b])
    if len(intervals) > 1 and intervals[0][0] <= tol and intervals[-1][1] >= L - tol:
        first = intervals.pop(0)
        intervals[-1][1] = L + first[1]
    segments = []
    for a, b in intervals:
        closed = b - a >= L - tol
        segments.append(CurveSegment(t_start=a, t_end=b, entry=curve.point(a), exit=curve.point(b), closed=closed))
    return segments


@dataclass
class LevelSetGeometry:
    """Time-dependent level-set function whose negative region is the domain"""
    phi: Callable[[np.ndarray, float], np.ndarray]
    band: float
    origin: Tuple[float, float] = (0.0, 0.0)
    side: float = 1.0

    def gradient(self, X: np.ndarray, t: float, step: float = 1e-7) -> np.ndarray:
        ex = np.array([step, 0.0])
        ey = np.array([0.0, step])
        gx = (self.phi(X + ex, t) - self.phi(X - ex, t)) / (2 * step)
        gy = (self.phi(X + ey, t) - self.phi(X - ey, t)) / (2 * step)
        return np.stack([gx, gy], axis=-1)

    def refine(self, X: np.ndarray, t: float, tol: float = 1e-12, maxiter: int = 30) -> np.ndarray:
        """Newton steps along the gradient direction onto the zero set"""
        X = np.array(X, dtype=float)
        for _ in range(maxiter):
            val = self.phi(X, t)
            if np.max(np.abs(val)) <= tol:
                break
            g = self.gradient(X, t)
            g2 = np.sum(g * g, axis=1)
            step = np.where(g2 > 0, val / np.where(g2 > 0, g2, 1.0), 0.0)
            X -= step[:, None] * g
        return X


def extract_contour(ls: LevelSetGeometry, t: float, eta: float) -> List[MarkerSet]:
    """
    Marker sets for every closed component of {phi(., t) = 0}

    Args:
        ls: Level-set geometry
        t: Time
        eta: Target marker spacing

    Returns:
        One counterclockwise MarkerSet per component

    Raises:
        NoContour: If no closed zero contour exists in the sampling box
    """
    n = int(np.ceil(ls.side / ls.band))
    axis = np.linspace(0.0, ls.side, n + 1)
    gx, gy = np.meshgrid(ls.origin[0] + axis, ls.origin[1] + axis)
    values = ls.phi(np.column_stack([gx.ravel(), gy.ravel()]), t).reshape(gx.shape)
    spacing = ls.side / n
    components = []
    for contour in measure.find_contours(values, 0.0):
        if len(contour) < 5 or np.linalg.norm(contour[0] - contour[-1]) > 1e-9:
            logger.warning(f"⚠️  skipping open or tiny contour with {len(contour)} points")
            continue
        pts = np.column_stack([ls.origin[0] + contour[:-1, 1] * spacing, ls.origin[1] + contour[:-1, 0] * spacing])
        pts = ls.refine(pts, t)
        keep = np.concatenate([[True], np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-3 * spacing])
        pts = pts[keep]
        if np.linalg.norm(pts[0] - pts[-1]) <= 1e-3 * spacing:
            pts = pts[:-1]
        if len(pts) < 4:
            continue
        coarse = fit_closed_spline(MarkerSet(pts, spacing))
        markers = resample(coarse, min(eta, coarse.arc_length() / 5))
        refined = ls.refine(markers.points, t)
        if polygon_area(refined) < 0:
            refined = np.vstack([refined[:1], refined[:0:-1]])
        components.append(MarkerSet(refined, eta))
    if not components:
        raise NoContour(f"no closed zero contour at t={t}")
    logger.debug(f"extracted {len(components)} contour component(s) at t={t:.6f}")
    return components


def circle_markers(center, radius: float, n: int, phase: float = 0.0) -> MarkerSet:
    """n markers equally spaced on a circle, counterclockwise"""
    th = phase + 2 * np.pi * np.arange(n) / n
    pts = np.column_stack([center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)])
    return MarkerSet(pts, 2 * radius * np.sin(np.pi / n))


def ellipse_markers(center, a: float, b: float, n: int) -> MarkerSet:
    """n markers equally spaced in angle on an axis-aligned ellipse"""
    th = 2 * np.pi * np.arange(n) / n
    pts = np.column_stack([center[0] + a * np.cos(th), center[1] + b * np.sin(th)])
    return MarkerSet(pts, float(np.mean(np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1))))
