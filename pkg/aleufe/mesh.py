"""
Fixed Cartesian background grid and per-step active covers
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

import config
from aleufe.curve import ClosedCurve, CurvePieces, CurveSet, as_curve_set, grid_pieces, polygon_is_simple
from aleufe.exceptions import CurveOutsideDomain, DegenerateCurve, OutsideFictitiousDomain

logger = logging.getLogger(__name__)

CONTACT_TOL = 1e-14
DILATION_TOL = 1e-9  # relative to h, resolution of the dilation containment test
_CHILD_OFFSETS = np.array([[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]])


@dataclass(frozen=True)
class BackgroundMesh:
    """Uniform partition of the square box D into n x n closed cells"""
    origin: Tuple[float, float] = (0.0, 0.0)
    side: float = 1.0
    n_cells_per_side: int = 16

    def __post_init__(self):
        if self.side <= 0 or self.n_cells_per_side < 1:
            raise ValueError(f"invalid mesh: side={self.side}, n={self.n_cells_per_side}")
        object.__setattr__(self, 'origin', (float(self.origin[0]), float(self.origin[1])))

    @property
    def h(self) -> float:
        return self.side / self.n_cells_per_side

    @property
    def n(self) -> int:
        return self.n_cells_per_side

    @property
    def n_cells(self) -> int:
        return self.n_cells_per_side ** 2

    @property
    def origin_array(self) -> np.ndarray:
        return np.array(self.origin)

    def cell_index(self, i, j):
        return np.asarray(i) + self.n * np.asarray(j)

    def cell_ij(self, c) -> Tuple[np.ndarray, np.ndarray]:
        c = np.asarray(c)
        return c % self.n, c // self.n

    def cell_lower_left(self, c) -> np.ndarray:
        i, j = self.cell_ij(c)
        return self.origin_array + self.h * np.stack([i, j], axis=-1)

    def cell_bounds(self, c) -> Tuple[np.ndarray, np.ndarray]:
        lo = self.cell_lower_left(c)
        return lo, lo + self.h

    def cell_centers(self, cells: Optional[np.ndarray] = None) -> np.ndarray:
        cells = np.arange(self.n_cells) if cells is None else np.asarray(cells)
        return self.cell_lower_left(cells) + 0.5 * self.h

    def contains(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lo = self.origin_array
        return np.all((X >= lo) & (X <= lo + self.side), axis=1)

    def locate(self, X, strict: bool = True) -> Tuple[np.ndarray, np.ndarray]:
        """
        Containing cell and local coordinates in [0, 1]^2

        Args:
            X: Points, shape (M, 2)
            strict: Raise for points outside D; otherwise return cell -1 for them

        Returns:
            Tuple of (cell indices, local coordinates)
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        s = (X - self.origin_array) / self.h
        ij = np.floor(s).astype(np.int64)
        outside = np.any((s < 0) | (s > self.n), axis=1)
        ij = np.clip(ij, 0, self.n - 1)
        local = s - ij
        cells = ij[:, 0] + self.n * ij[:, 1]
        if outside.any():
            if strict:
                raise OutsideFictitiousDomain("point outside the background box", points=X[outside])
            cells = np.where(outside, -1, cells)
        return cells, local

    def interior_edges(self) -> Tuple[np.ndarray, np.ndarray]:
        """All interior edges as (cells (E, 2) minus/plus side, axis (E,)); axis 0 = normal along x"""
        n = self.n
        i, j = np.meshgrid(np.arange(1, n), np.arange(n), indexing='xy')
        vert = np.stack([self.cell_index(i - 1, j).ravel(), self.cell_index(i, j).ravel()], axis=1)
        i, j = np.meshgrid(np.arange(n), np.arange(1, n), indexing='xy')
        horz = np.stack([self.cell_index(i, j - 1).ravel(), self.cell_index(i, j).ravel()], axis=1)
        cells = np.vstack([vert, horz])
        axis = np.concatenate([np.zeros(len(vert), dtype=np.int64), np.ones(len(horz), dtype=np.int64)])
        return cells, axis

    def outer_cells(self) -> np.ndarray:
        """Cells touching the boundary of D"""
        n = self.n
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing='xy')
        mask = (i == 0) | (j == 0) | (i == n - 1) | (j == n - 1)
        return np.sort(self.cell_index(i[mask], j[mask]))


@dataclass(frozen=True)
class GhostEdges:
    """Interior edges carrying the ghost penalty"""
    cells: np.ndarray
    axis: np.ndarray

    def __len__(self) -> int:
        return len(self.axis)

    @property
    def normals(self) -> np.ndarray:
        out = np.zeros((len(self.axis), 2))
        out[np.arange(len(self.axis)), self.axis] = 1.0
        return out


@dataclass(frozen=True)
class ActiveCover:
    """Active cells, boundary-zone cells and ghost edges of one phase at one step"""
    mesh: BackgroundMesh
    active_cells: np.ndarray
    boundary_cells: np.ndarray
    ghost_edges: GhostEdges
    delta: float
    interface_cells: np.ndarray
    phase: int = 1
    outer_cells: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_active(self) -> int:
        return len(self.active_cells)

    @property
    def cell_to_active(self) -> np.ndarray:
        lookup = np.full(self.mesh.n_cells, -1, dtype=np.int64)
        lookup[self.active_cells] = np.arange(len(self.active_cells))
        return lookup

    def is_active(self, cells) -> np.ndarray:
        return np.isin(cells, self.active_cells)

    def contains(self, X) -> np.ndarray:
        """True for points inside a closed active cell"""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        mesh = self.mesh
        lookup = self.cell_to_active
        s = (X - mesh.origin_array) / mesh.h
        found = np.zeros(len(X), dtype=bool)
        for di in (0, -1):
            for dj in (0, -1):
                ij = np.floor(s).astype(np.int64) + np.array([di, dj])
                inside_cell = np.all((s >= ij - 1e-12) & (s <= ij + 1 + 1e-12), axis=1)
                valid = np.all((ij >= 0) & (ij < mesh.n), axis=1) & inside_cell
                c = np.where(valid, ij[:, 0] + mesh.n * ij[:, 1], 0)
                found |= valid & (lookup[c] >= 0)
        return found


def _box_distance(points: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Distance from points (..., 2) to boxes broadcast against them"""
    return np.linalg.norm(points - np.clip(points, lo, hi), axis=-1)


def cell_curve_distance(mesh: BackgroundMesh, curves: CurveSet, cells: np.ndarray) -> np.ndarray:
    """
    Exact distance from closed cells to the curves

    The minimum over a curve of the distance to a box is attained where the curve crosses
    the box, at a parameter with x'(t) = 0 or y'(t) = 0, or at the projection of a box corner.

    Args:
        mesh: Background mesh
        curves: Curve set
        cells: Cell indices

    Returns:
        Distances, one per cell
    """
    cells = np.asarray(cells)
    lo, hi = mesh.cell_bounds(cells)
    best = np.full(len(cells), np.inf)
    if not len(cells):
        return best
    offsets = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]) * mesh.h
    corners = (lo[:, None, :] + offsets[None, :, :]).reshape(-1, 2)
    for curve in curves:
        ext = curve.point(np.concatenate([curve.extremal_params(), curve.knots]))
        d_ext = _box_distance(ext[None, :, :], lo[:, None, :], hi[:, None, :]).min(axis=1)
        proj = curve.project(corners).points.reshape(len(cells), 4, 2)
        d_cor = _box_distance(proj, lo[:, None, :], hi[:, None, :]).min(axis=1)
        best = np.minimum(best, np.minimum(d_ext, d_cor))
    return best


def _leaves_dilation(mesh: BackgroundMesh, curves: CurveSet, cells: np.ndarray, delta: float) -> np.ndarray:
    """
    Whether each closed cell holds a point at distance >= delta from the curves

    Bisects the cell with the 1-Lipschitz bound d(x) <= d(c) + |x - c|: a box is dropped once it lies inside
    the dilation and split while it straddles it. Boxes still open at DILATION_TOL * h count as inside.
    """
    result = np.zeros(len(cells), dtype=bool)
    if not len(cells):
        return result
    lo = mesh.cell_lower_left(cells)
    corners = (lo[:, None, :] + np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])[None] * mesh.h)
    result[(curves.project(corners.reshape(-1, 2)).distances.reshape(-1, 4) >= delta).any(axis=1)] = True
    owner = np.nonzero(~result)[0]
    half = 0.5 * mesh.h
    centers = lo[owner] + half
    while len(owner) and half > DILATION_TOL * mesh.h:
        d = curves.project(centers).distances
        result[owner[d >= delta]] = True
        straddles = (d < delta) & (d + np.sqrt(2.0) * half >= delta) & ~result[owner]
        owner, centers = owner[straddles], centers[straddles]
        half *= 0.5
        centers = (centers[:, None, :] + half * _CHILD_OFFSETS[None]).reshape(-1, 2)
        owner = np.repeat(owner, 4)
    return result


def _check_curves(mesh: BackgroundMesh, curves: CurveSet, delta: float) -> None:
    lo, hi = curves.bounding_box()
    box_lo = mesh.origin_array
    box_hi = box_lo + mesh.side
    if np.any(lo - delta < box_lo) or np.any(hi + delta > box_hi):
        raise CurveOutsideDomain(f"dilated curve box [{lo - delta}, {hi + delta}] leaves D")
    for curve in curves:
        t = np.linspace(0.0, curve.period, 4 * curve.n_markers, endpoint=False)
        if not polygon_is_simple(curve.point(t)):
            raise DegenerateCurve("spline self-intersects")


@dataclass
class _Classification:
    pieces: CurvePieces
    meets_gamma: np.ndarray
    center_inside: np.ndarray
    band: np.ndarray
    distance: np.ndarray


def _classify(mesh: BackgroundMesh, curves: CurveSet, delta: float) -> _Classification:
    pieces = CurvePieces.concatenate([grid_pieces(c, mesh.origin_array, mesh.h, mesh.n, ci)
                                      for ci, c in enumerate(curves)])
    meets = np.zeros(mesh.n_cells, dtype=bool)
    meets[pieces.cell] = True
    centers = mesh.cell_centers()
    sd = curves.signed_distance(centers)
    reach = delta + mesh.h / np.sqrt(2.0) + 1e-12
    band = (np.abs(sd) <= reach) & ~meets
    distance = np.where(meets, 0.0, np.maximum(np.abs(sd) - mesh.h / np.sqrt(2.0), 0.0))
    band_cells = np.nonzero(band)[0]
    if len(band_cells):
        distance[band_cells] = cell_curve_distance(mesh, curves, band_cells)
        touching = band_cells[distance[band_cells] <= CONTACT_TOL]
        meets[touching] = True
        distance[touching] = 0.0
    return _Classification(pieces=pieces, meets_gamma=meets, center_inside=sd < 0, band=band, distance=distance)


def _cover_for_phase(mesh: BackgroundMesh, curves: CurveSet, cls: _Classification, delta: float,
                     phase: int) -> ActiveCover:
    own_side = cls.center_inside if phase == 1 else ~cls.center_inside
    own_side = own_side & ~cls.meets_gamma
    min_dist = np.where(cls.meets_gamma | own_side, 0.0, cls.distance)
    active = min_dist <= delta
    outer = mesh.outer_cells() if phase == 2 else np.zeros(0, dtype=np.int64)
    active[outer] = True
    boundary = cls.meets_gamma & active
    candidates = np.nonzero(active & ~cls.meets_gamma & ~own_side)[0]
    if len(candidates):
        boundary[candidates[_leaves_dilation(mesh, curves, candidates, delta)]] = True
    active_cells = np.nonzero(active)[0]
    boundary_cells = np.nonzero(boundary)[0]
    edge_cells, edge_axis = mesh.interior_edges()
    keep = active[edge_cells].all(axis=1) & boundary[edge_cells].any(axis=1)
    edge_cells, edge_axis = edge_cells[keep], edge_axis[keep]
    order = np.lexsort((edge_cells[:, 1], edge_cells[:, 0]))
    ghost = GhostEdges(cells=edge_cells[order], axis=edge_axis[order])
    cover = ActiveCover(mesh=mesh, active_cells=active_cells, boundary_cells=boundary_cells, ghost_edges=ghost,
                        delta=delta, interface_cells=np.nonzero(cls.meets_gamma)[0], phase=phase,
                        outer_cells=outer)
    logger.debug(f"phase {phase} cover: {len(active_cells)} active, {len(boundary_cells)} boundary, "
                 f"{len(ghost)} ghost edges")
    return cover


def classify_cells(mesh: BackgroundMesh, curve: Union[ClosedCurve, CurveSet], tau: float,
                   delta: Optional[float] = None) -> ActiveCover:
    """
    Active cover of the region enclosed by the curve(s)

    Args:
        mesh: Background mesh
        curve: Closed curve or curve set
        tau: Time step, sets delta = DELTA_FACTOR * tau unless delta is given
        delta: Optional explicit dilation radius

    Returns:
        ActiveCover of phase 1

    Raises:
        CurveOutsideDomain: If the dilated region leaves D
        DegenerateCurve: If a curve self-intersects
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    curves = as_curve_set(curve)
    delta = config.DELTA_FACTOR * tau if delta is None else delta
    _check_curves(mesh, curves, delta)
    return _cover_for_phase(mesh, curves, _classify(mesh, curves, delta), delta, phase=1)


def two_phase_covers(mesh: BackgroundMesh, curve: Union[ClosedCurve, CurveSet], tau: float,
                     delta: Optional[float] = None) -> Tuple[ActiveCover, ActiveCover]:
    """
    Covers of the interior phase and of its complement in D

    Args:
        mesh: Background mesh
        curve: Interface
        tau: Time step
        delta: Optional explicit dilation radius

    Returns:
        Tuple (phase-1 cover, phase-2 cover); the phase-2 cover includes every cell touching the boundary of D
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    curves = as_curve_set(curve)
    delta = config.DELTA_FACTOR * tau if delta is None else delta
    _check_curves(mesh, curves, delta)
    cls = _classify(mesh, curves, delta)
    return (_cover_for_phase(mesh, curves, cls, delta, phase=1),
            _cover_for_phase(mesh, curves, cls, delta, phase=2))
