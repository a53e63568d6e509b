"""
Quadrature on full cells, mesh edges, curve segments and cut cells.

Cut regions are decomposed into boundary loops (curve arcs joined by pieces of the
cell boundary) and each loop is integrated as a fan of Duffy-mapped triangles from
its centroid. Each curved side is one spline piece between knots/cell crossings.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

import config
from aleufe.curve import ClosedCurve, CurvePieces, CurveSet, as_curve_set, grid_pieces
from aleufe.exceptions import InvalidCellTopology
from aleufe.lib.polynomial import gauss_legendre, lagrange_basis

logger = logging.getLogger(__name__)

MAX_SUBDIVISION = 6
MAX_HOLE_SUBDIVISION = 40
CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])

FULL, CUT, EMPTY = 2, 1, 0


@dataclass
class QuadratureRule:
    """Nodes and weights; curve rules also carry outward normals and curve parameters"""
    nodes: np.ndarray
    weights: np.ndarray
    domain_tag: str
    normals: Optional[np.ndarray] = None
    params: Optional[np.ndarray] = None
    curve_index: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.weights)

    @classmethod
    def empty(cls, domain_tag: str) -> "QuadratureRule":
        return cls(np.zeros((0, 2)), np.zeros(0), domain_tag)

    def integrate(self, f) -> float:
        if not len(self):
            return 0.0
        return float(np.dot(self.weights, f(self.nodes)))

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    @classmethod
    def concatenate(cls, rules: Sequence["QuadratureRule"], domain_tag: str) -> "QuadratureRule":
        rules = [r for r in rules if len(r)]
        if not rules:
            return cls.empty(domain_tag)
        return cls(np.vstack([r.nodes for r in rules]), np.concatenate([r.weights for r in rules]), domain_tag)


def points_for_degree(degree: int) -> int:
    """Gauss points per direction that integrate the given degree exactly"""
    return max(1, int(np.ceil((degree + 1) / 2)))


def full_cell_rule(lo, h: float, order: int) -> QuadratureRule:
    """
    Tensor Gauss rule on the square [lo, lo + h]^2

    Args:
        lo: Lower-left corner
        h: Side length
        order: Gauss points per direction (exact to degree 2*order - 1 in each variable)
    """
    x, w = gauss_legendre(order)
    gx, gy = np.meshgrid(x, x, indexing='xy')
    nodes = np.asarray(lo, dtype=float) + h * np.column_stack([gx.ravel(), gy.ravel()])
    weights = h * h * np.outer(w, w).ravel()
    return QuadratureRule(nodes, weights, 'full-cell')


def edge_rule(p0, p1, order: int) -> QuadratureRule:
    """
    Gauss rule on the straight edge from p0 to p1

    Args:
        p0: Start point
        p1: End point
        order: Gauss points (exact to degree 2*order - 1)
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    x, w = gauss_legendre(order)
    nodes = p0 + x[:, None] * (p1 - p0)
    return QuadratureRule(nodes, w * np.linalg.norm(p1 - p0), 'edge')


def curve_segment_rule(curve: ClosedCurve, t0: float, t1: float, order: int, curve_index: int = 0) -> QuadratureRule:
    """
    Gauss rule in the curve parameter with arc-length weights

    Args:
        curve: Curve
        t0: Start parameter
        t1: End parameter (t1 > t0, may exceed the period)
        order: Gauss points
        curve_index: Index stored on the rule

    Returns:
        Rule with nodes on the curve, outward normals and parameters
    """
    x, w = gauss_legendre(order)
    t = t0 + (t1 - t0) * x
    weights = w * (t1 - t0) * curve.speed(t)
    return QuadratureRule(curve.point(t), weights, 'curve-segment', normals=curve.normal(t), params=t,
                          curve_index=np.full(len(t), curve_index, dtype=np.int64))


# cut cells

@dataclass
class _Side:
    """One side of a loop: a straight segment or a curve piece"""
    kind: str
    p: Optional[np.ndarray] = None
    q: Optional[np.ndarray] = None
    curve_index: int = 0
    t_start: float = 0.0
    t_end: float = 0.0


def _side_eval(side: _Side, curves: CurveSet, u: np.ndarray, curve_degree: int) -> Tuple[np.ndarray, np.ndarray]:
    """Points and u-derivatives of the side map gamma(u), u in [0, 1]"""
    if side.kind == 'line':
        return side.p + u[:, None] * (side.q - side.p), np.broadcast_to(side.q - side.p, (len(u), 2))
    curve = curves[side.curve_index]
    dt = side.t_end - side.t_start
    if curve_degree <= 0:
        t = side.t_start + u * dt
        return curve.point(t), curve.derivative(t) * dt
    nodes = curve.point(side.t_start + np.linspace(0.0, 1.0, curve_degree + 1) * dt)
    b = lagrange_basis(curve_degree, u)
    db = lagrange_basis(curve_degree, u, deriv=1)
    return b @ nodes, db @ nodes


def _perimeter_coord(p: np.ndarray, lo: np.ndarray, h: float) -> float:
    x, y = (p - lo) / h
    dists = [abs(y), abs(1 - x), abs(1 - y), abs(x)]
    edge = int(np.argmin(dists))
    if dists[edge] > 1e-8:
        raise InvalidCellTopology(f"arc endpoint {p.tolist()} is not on the cell boundary")
    if edge == 0:
        return float(np.clip(x, 0, 1))
    if edge == 1:
        return 1.0 + float(np.clip(y, 0, 1))
    if edge == 2:
        return 2.0 + float(np.clip(1 - x, 0, 1))
    return (3.0 + float(np.clip(1 - y, 0, 1))) % 4.0


def _arcs_from_pieces(curves: CurveSet, ci: np.ndarray, ta: np.ndarray, tb: np.ndarray) -> List[List[_Side]]:
    """Merge parameter-contiguous pieces of each curve into arcs (wrapping through t = 0)"""
    arcs: List[List[_Side]] = []
    for c in np.unique(ci):
        sel = np.nonzero(ci == c)[0]
        order = sel[np.argsort(ta[sel])]
        period = curves[int(c)].period
        tol = 1e-12 * period
        groups: List[List[int]] = []
        for p in order:
            if groups and abs(tb[groups[-1][-1]] - ta[p]) <= tol:
                groups[-1].append(p)
            else:
                groups.append([p])
        if len(groups) > 1 and abs(ta[groups[0][0]]) <= tol and abs(tb[groups[-1][-1]] - period) <= tol:
            groups[-1].extend(groups.pop(0))
        for g in groups:
            sides = []
            shift = 0.0
            for m, p in enumerate(g):
                if m and ta[p] + shift < tb[g[m - 1]] - tol and ta[p] <= tol:
                    shift = period
                sides.append(_Side('curve', curve_index=int(c), t_start=ta[p] + shift, t_end=tb[p] + shift))
            arcs.append(sides)
    return arcs


def _arc_is_closed(arc: List[_Side], curves: CurveSet) -> bool:
    period = curves[arc[0].curve_index].period
    return abs((arc[-1].t_end - arc[0].t_start) - period) <= 1e-10 * period


def _reverse_arc(arc: List[_Side]) -> List[_Side]:
    return [_Side('curve', curve_index=s.curve_index, t_start=s.t_end, t_end=s.t_start) for s in reversed(arc)]


def _build_loops(arcs: List[List[_Side]], curves: CurveSet, lo: np.ndarray, h: float) -> List[List[_Side]]:
    """Join open arcs with counterclockwise pieces of the cell boundary into closed loops"""
    if not arcs:
        return []
    entries = [curves[a[0].curve_index].point(a[0].t_start) for a in arcs]
    exits = [curves[a[-1].curve_index].point(a[-1].t_end) for a in arcs]
    s_in = np.array([_perimeter_coord(p, lo, h) for p in entries])
    s_out = np.array([_perimeter_coord(p, lo, h) for p in exits])
    tol = 1e-10
    unused = set(range(len(arcs)))
    loops = []
    while unused:
        start = min(unused)
        current = start
        loop: List[_Side] = []
        for _ in range(len(arcs) + 1):
            unused.discard(current)
            loop.extend(arcs[current])
            gap = np.mod(s_in - s_out[current], 4.0)
            gap[gap > 4.0 - tol] = 0.0
            allowed = np.array([(b in unused) or b == start for b in range(len(arcs))])
            gap[~allowed] = np.inf
            nxt = int(np.argmin(gap))
            if not np.isfinite(gap[nxt]):
                raise InvalidCellTopology("could not close a cut-region loop")
            point = exits[current]
            for c in range(1, 8):
                if s_out[current] + tol < c < s_out[current] + gap[nxt] - tol:
                    corner = lo + h * CORNERS[c % 4]
                    loop.append(_Side('line', p=point, q=corner))
                    point = corner
            if np.linalg.norm(entries[nxt] - point) > 1e-14 * h:
                loop.append(_Side('line', p=point, q=entries[nxt]))
            if nxt == start:
                break
            current = nxt
        else:
            raise InvalidCellTopology("cut-region loop did not close")
        loops.append(loop)
    return loops


def _loop_moments(loop: List[_Side], curves: CurveSet, curve_degree: int) -> Tuple[float, np.ndarray]:
    """Area and centroid of the region bounded by a loop (Green's theorem)"""
    x, w = gauss_legendre(8)
    area = 0.0
    mx = 0.0
    my = 0.0
    for side in loop:
        g, dg = _side_eval(side, curves, x, curve_degree)
        area += 0.5 * np.dot(w, g[:, 0] * dg[:, 1] - g[:, 1] * dg[:, 0])
        mx += np.dot(w, 0.5 * g[:, 0] ** 2 * dg[:, 1])
        my -= np.dot(w, 0.5 * g[:, 1] ** 2 * dg[:, 0])
    if abs(area) < 1e-300:
        return 0.0, np.zeros(2)
    return area, np.array([mx, my]) / area


def _fan_rule(loop: List[_Side], curves: CurveSet, apex: np.ndarray, order: int, curve_degree: int,
              h: float) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Duffy fan from the apex with positive weights; None when some triangle is inverted"""
    n_s = points_for_degree(order + 1)
    n_u = order + 3
    xs, ws = gauss_legendre(n_s)
    xu, wu = gauss_legendre(n_u)
    check_u = np.linspace(0.0, 1.0, 9)
    nodes, weights = [], []
    floor = 1e-13 * h * h
    for side in loop:
        g, dg = _side_eval(side, curves, xu, curve_degree)
        det = (g[:, 0] - apex[0]) * dg[:, 1] - (g[:, 1] - apex[1]) * dg[:, 0]
        gc, dgc = _side_eval(side, curves, check_u, curve_degree)
        det_check = (gc[:, 0] - apex[0]) * dgc[:, 1] - (gc[:, 1] - apex[1]) * dgc[:, 0]
        if np.all(np.abs(det_check) <= floor) and np.all(np.abs(det) <= floor):
            continue
        if np.any(det_check < -floor) or np.any(det < -floor):
            return None
        # degenerate triangles within the floor contribute nothing
        keep = det > 0.0
        pts = apex + xs[:, None, None] * (g[None, keep, :] - apex)
        wts = (ws * xs)[:, None] * (wu[keep] * det[keep])[None, :]
        nodes.append(pts.reshape(-1, 2))
        weights.append(wts.ravel())
    if not nodes:
        return np.zeros((0, 2)), np.zeros(0)
    return np.vstack(nodes), np.concatenate(weights)


def _region_inside(curves: CurveSet, point: np.ndarray, phase: int) -> bool:
    inside = bool(curves.contains(point[None, :])[0])
    return inside if phase == 1 else not inside


def box_pieces(curves: CurveSet, lo: np.ndarray, hi: np.ndarray) -> CurvePieces:
    """Curve pieces (split at knots and box-line crossings) lying inside the closed box"""
    parts = []
    for ci, curve in enumerate(curves):
        L = curve.period
        tol = 1e-12 * L
        roots = [curve.crossings(axis, v) for axis in range(2) for v in (lo[axis], hi[axis])]
        roots = np.concatenate(roots)
        breaks = np.unique(np.concatenate([curve.knots, roots]))
        breaks = breaks[np.concatenate([[True], np.diff(breaks) > tol])]
        breaks[0], breaks[-1] = 0.0, L
        t_a, t_b = breaks[:-1], breaks[1:]
        mids = curve.point(0.5 * (t_a + t_b))
        eps = 1e-12 * max(1.0, float(np.max(hi - lo)))
        keep = np.all((mids >= lo - eps) & (mids <= hi + eps), axis=1)
        n = int(keep.sum())
        parts.append(CurvePieces(curve_index=np.full(n, ci, dtype=np.int64), t_a=t_a[keep], t_b=t_b[keep],
                                 cell=np.zeros(n, dtype=np.int64), start_knot=np.zeros(n, dtype=bool),
                                 end_knot=np.zeros(n, dtype=bool)))
    return CurvePieces.concatenate(parts)


def _cut_rule(lo: np.ndarray, h: float, curves: CurveSet, pieces: CurvePieces, order: int, phase: int,
              curve_degree: int, depth: int) -> QuadratureRule:
    if not len(pieces):
        center = lo + 0.5 * h
        if _region_inside(curves, center, phase):
            return full_cell_rule(lo, h, points_for_degree(order))
        return QuadratureRule.empty('cut-area')
    arcs = _arcs_from_pieces(curves, pieces.curve_index, pieces.t_a, pieces.t_b)
    closed = [a for a in arcs if _arc_is_closed(a, curves)]
    open_arcs = [a for a in arcs if not _arc_is_closed(a, curves)]
    if phase == 2:
        open_arcs = [_reverse_arc(a) for a in open_arcs]
        closed = [_reverse_arc(a) for a in closed]
    if phase == 2 and closed:
        # a hole in the cell: split until every component crosses a child edge
        if depth >= MAX_HOLE_SUBDIVISION:
            raise InvalidCellTopology(f"closed curve inside cell {lo.tolist()} survives {depth} subdivisions")
        logger.log(logging.WARNING if depth == 0 else logging.DEBUG,
                   f"closed interface inside cell {lo.tolist()}, subdividing (depth {depth + 1})")
        return _subdivided_rule(lo, h, curves, order, phase, curve_degree, depth + 1)
    loops = _build_loops(open_arcs, curves, lo, h) + closed
    nodes, weights = [], []
    for loop in loops:
        area, centroid = _loop_moments(loop, curves, curve_degree)
        if abs(area) <= 1e-14 * h * h:
            continue
        fan = _fan_rule(loop, curves, centroid, order, curve_degree, h)
        if fan is None:
            if depth >= MAX_SUBDIVISION:
                raise InvalidCellTopology(f"cut region at cell {lo.tolist()} is not star-shaped "
                                          f"after {depth} subdivisions")
            logger.log(logging.WARNING if depth == 0 else logging.DEBUG,
                       f"fan not star-shaped at cell {lo.tolist()}, subdividing (depth {depth + 1})")
            return _subdivided_rule(lo, h, curves, order, phase, curve_degree, depth + 1)
        nodes.append(fan[0])
        weights.append(fan[1])
    if not nodes:
        return QuadratureRule.empty('cut-area')
    return QuadratureRule(np.vstack(nodes), np.concatenate(weights), 'cut-area')


def _subdivided_rule(lo: np.ndarray, h: float, curves: CurveSet, order: int, phase: int, curve_degree: int,
                     depth: int) -> QuadratureRule:
    rules = []
    half = 0.5 * h
    for corner in CORNERS[[0, 1, 3, 2]]:
        child = lo + half * corner
        pieces = box_pieces(curves, child, child + half)
        rules.append(_cut_rule(child, half, curves, pieces, order, phase, curve_degree, depth))
    return QuadratureRule.concatenate(rules, 'cut-area')


def cut_area_rule(cell_lo, h: float, curve: Union[ClosedCurve, CurveSet], order: int, phase: int = 1,
                  pieces: Optional[CurvePieces] = None,
                  curve_degree: int = config.CURVE_DEGREE) -> QuadratureRule:
    """
    Quadrature on the part of a cell inside (phase 1) or outside (phase 2) the curve

    Args:
        cell_lo: Lower-left corner of the cell
        h: Cell size
        curve: Curve or curve set
        order: Polynomial degree integrated exactly on straight cuts
        phase: 1 for the enclosed region, 2 for its complement
        pieces: Optional precomputed curve pieces inside the cell
        curve_degree: Degree of the curved side map (0 = exact spline piece)

    Returns:
        QuadratureRule (empty when the cell does not meet the region)

    Raises:
        InvalidCellTopology: If the boundary loops cannot be closed
    """
    curves = as_curve_set(curve)
    lo = np.asarray(cell_lo, dtype=float)
    if pieces is None:
        pieces = box_pieces(curves, lo, lo + h)
    return _cut_rule(lo, h, curves, pieces, order, phase, curve_degree, depth=0)


@dataclass
class InterfaceQuadrature:
    """Curve quadrature over all cut cells; normals point out of the enclosed region"""
    nodes: np.ndarray
    weights: np.ndarray
    normals: np.ndarray
    cells: np.ndarray
    params: np.ndarray
    curve_index: np.ndarray

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


class CutGeometry:
    """Per-step cut information of the background mesh: pieces, cell states, cached rules"""

    def __init__(self, mesh, curve: Union[ClosedCurve, CurveSet], order: int,
                 curve_degree: int = config.CURVE_DEGREE):
        self.mesh = mesh
        self.curves = as_curve_set(curve)
        self.order = order
        self.curve_degree = curve_degree
        self.pieces = CurvePieces.concatenate([grid_pieces(c, mesh.origin_array, mesh.h, mesh.n, ci)
                                               for ci, c in enumerate(self.curves)])
        self.cut_cells = np.unique(self.pieces.cell)
        self._by_cell: Dict[int, np.ndarray] = {}
        for idx, cell in enumerate(self.pieces.cell):
            self._by_cell.setdefault(int(cell), []).append(idx)
        self._center_inside: Optional[np.ndarray] = None
        self._rules: Dict[Tuple[int, int], QuadratureRule] = {}

    def cell_pieces(self, cell: int) -> CurvePieces:
        idx = np.asarray(self._by_cell.get(int(cell), []), dtype=np.int64)
        p = self.pieces
        return CurvePieces(p.curve_index[idx], p.t_a[idx], p.t_b[idx], p.cell[idx], p.start_knot[idx],
                           p.end_knot[idx])

    def center_inside(self) -> np.ndarray:
        if self._center_inside is None:
            self._center_inside = self.curves.contains(self.mesh.cell_centers())
        return self._center_inside

    def status(self, cells: np.ndarray, phase: int = 1) -> np.ndarray:
        """FULL, CUT or EMPTY per cell for the given phase"""
        cells = np.asarray(cells)
        inside = self.center_inside()[cells]
        own = inside if phase == 1 else ~inside
        out = np.where(own, FULL, EMPTY)
        out[np.isin(cells, self.cut_cells)] = CUT
        return out

    def area_rule(self, cell: int, phase: int = 1) -> QuadratureRule:
        key = (int(cell), phase)
        if key not in self._rules:
            lo = self.mesh.cell_lower_left(int(cell))
            self._rules[key] = _cut_rule(lo, self.mesh.h, self.curves, self.cell_pieces(cell), self.order,
                                         phase, self.curve_degree, depth=0)
        return self._rules[key]

    def interface_rule(self, n_points: int) -> InterfaceQuadrature:
        """Gauss rule with n_points per curve piece"""
        x, w = gauss_legendre(n_points)
        p = self.pieces
        t = p.t_a[:, None] + (p.t_b - p.t_a)[:, None] * x[None, :]
        ci = np.repeat(p.curve_index, n_points)
        flat_t = t.ravel()
        nodes = self.curves.point(ci, flat_t)
        d = self.curves.derivative(ci, flat_t)
        speed = np.linalg.norm(d, axis=1)
        normals = np.column_stack([d[:, 1], -d[:, 0]]) / speed[:, None]
        weights = (w[None, :] * (p.t_b - p.t_a)[:, None]).ravel() * speed
        return InterfaceQuadrature(nodes=nodes, weights=weights, normals=normals,
                                   cells=np.repeat(p.cell, n_points), params=flat_t, curve_index=ci)

    def cell_area(self, cell: int, phase: int = 1) -> float:
        return self.area_rule(cell, phase).total_weight
