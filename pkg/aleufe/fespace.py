"""
Q_k Lagrange spaces on active covers, FE functions and cut-cell assembly

Local dof index inside a cell is a + (k+1)*b, with a counting nodes along x and b along y.
Dofs are global lattice nodes of the background grid touched by at least one active cell,
numbered by lattice index.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

import config
from aleufe.curve import ClosedCurve, CurveSet
from aleufe.exceptions import OutsideFictitiousDomain, UnsupportedOrder
from aleufe.lib.polynomial import gauss_legendre, lagrange_basis
from aleufe.linalg import LinearSolver, SparseMatrix, block_matrix, solve_with
from aleufe.mesh import ActiveCover, BackgroundMesh
from aleufe.quad import CUT, FULL, CutGeometry, InterfaceQuadrature

logger = logging.getLogger(__name__)

SUPPORTED_DEGREES = (2, 3, 4)
CHUNK = 1024
LOCATE_TOL = 1e-12

PointFunction = Callable[[np.ndarray], np.ndarray]


class ReferenceElement:
    """Tensor-product Lagrange element of degree k on the unit square"""

    def __init__(self, k: int):
        if k not in SUPPORTED_DEGREES:
            raise UnsupportedOrder(f"element degree {k} not supported, expected one of {SUPPORTED_DEGREES}")
        self.k = k
        self.n_local = (k + 1) ** 2
        x, w = gauss_legendre(k + 1)
        b = lagrange_basis(k, x)
        db = lagrange_basis(k, x, deriv=1)
        self.mass_1d = np.einsum('q,qa,qb->ab', w, b, b)
        self.stiffness_1d = np.einsum('q,qa,qb->ab', w, db, db)

    @cached_property
    def mass(self) -> np.ndarray:
        """Mass matrix on the unit square; scale by h^2"""
        return np.kron(self.mass_1d, self.mass_1d)

    @cached_property
    def stiffness(self) -> np.ndarray:
        """Stiffness matrix, independent of h in two dimensions"""
        return np.kron(self.mass_1d, self.stiffness_1d) + np.kron(self.stiffness_1d, self.mass_1d)

    def values(self, local: np.ndarray) -> np.ndarray:
        """Basis values at local coordinates (..., 2) -> (..., n_local)"""
        px = lagrange_basis(self.k, local[..., 0])
        py = lagrange_basis(self.k, local[..., 1])
        return (py[..., :, None] * px[..., None, :]).reshape(local.shape[:-1] + (self.n_local,))

    def gradients(self, local: np.ndarray) -> np.ndarray:
        """Reference gradients (..., n_local, 2); divide by h for physical gradients"""
        px = lagrange_basis(self.k, local[..., 0])
        py = lagrange_basis(self.k, local[..., 1])
        dpx = lagrange_basis(self.k, local[..., 0], deriv=1)
        dpy = lagrange_basis(self.k, local[..., 1], deriv=1)
        shape = local.shape[:-1] + (self.n_local,)
        gx = (py[..., :, None] * dpx[..., None, :]).reshape(shape)
        gy = (dpy[..., :, None] * px[..., None, :]).reshape(shape)
        return np.stack([gx, gy], axis=-1)

    @cached_property
    def ghost_matrices(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Scale-free ghost penalty matrices on the dofs of two neighbouring cells

        Sum over l = 1..k of h^(2l-1) times the L2 product of the jumps of the l-th normal
        derivative. First matrix: vertical edge (normal along x), second: horizontal edge.
        """
        k = self.k
        ends = np.array([0.0, 1.0])
        vertical = np.zeros((2, k + 1, k + 1, 2, k + 1, k + 1))
        horizontal = np.zeros_like(vertical)
        for l in range(1, k + 1):
            d = lagrange_basis(k, ends, deriv=l)
            jump = np.stack([-d[1], d[0]])  # (side, node), minus cell then plus cell
            outer = np.einsum('sa,tc->satc', jump, jump)
            # layout [side, b, a, side', b', a']
            vertical += np.einsum('satc,bd->sbatdc', outer, self.mass_1d)
            horizontal += np.einsum('sbtd,ac->sbatdc', outer, self.mass_1d)
        size = 2 * self.n_local
        return vertical.reshape(size, size), horizontal.reshape(size, size)


@lru_cache(maxsize=8)
def reference_element(k: int) -> ReferenceElement:
    return ReferenceElement(k)


class FESpace:
    """Continuous Q_k space on the active cells of one cover"""

    def __init__(self, mesh: BackgroundMesh, cover: ActiveCover, degree: int, step: Optional[int] = None):
        self.mesh = mesh
        self.cover = cover
        self.degree = degree
        self.step = step
        self.reference = reference_element(degree)
        k = degree
        i, j = mesh.cell_ij(cover.active_cells)
        a = np.arange(k + 1)
        lattice_x = (k * i)[:, None, None] + a[None, None, :]
        lattice_y = (k * j)[:, None, None] + a[None, :, None]
        width = k * mesh.n + 1
        lattice = (lattice_x + width * lattice_y).reshape(len(i), -1)
        unique, inverse = np.unique(lattice, return_inverse=True)
        self.lattice_index = unique
        self.dof_map = inverse.reshape(lattice.shape).astype(np.int64)
        self._width = width
        self._cell_to_active = cover.cell_to_active
        self._tree = None
        logger.debug(f"Q{k} space: {len(cover.active_cells)} cells, {self.n_dofs} dofs")

    def __repr__(self) -> str:
        return f"FESpace(Q{self.degree}, cells={self.cover.n_active}, dofs={self.n_dofs})"

    @property
    def n_dofs(self) -> int:
        return len(self.lattice_index)

    @cached_property
    def nodes(self) -> np.ndarray:
        spacing = self.mesh.h / self.degree
        ix = self.lattice_index % self._width
        iy = self.lattice_index // self._width
        return self.mesh.origin_array + spacing * np.column_stack([ix, iy]).astype(float)

    @cached_property
    def outer_dofs(self) -> np.ndarray:
        """Dofs on the boundary of the background box"""
        ix = self.lattice_index % self._width
        iy = self.lattice_index // self._width
        last = self._width - 1
        return np.nonzero((ix == 0) | (iy == 0) | (ix == last) | (iy == last))[0]

    def cell_dofs(self, cells: np.ndarray) -> np.ndarray:
        """Global dofs of mesh cells (must be active)"""
        return self.dof_map[self._cell_to_active[np.asarray(cells)]]

    def locate(self, X: np.ndarray, extrapolate: bool = False) -> Tuple[np.ndarray, np.ndarray]:
        """
        Active cell containing each point, and the local coordinates there

        Args:
            X: Points (M, 2)
            extrapolate: Use the nearest active cell for points outside the fictitious domain

        Returns:
            Tuple of (mesh cell indices, local coordinates)

        Raises:
            OutsideFictitiousDomain: If a point is in no active cell and extrapolate is False
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        mesh = self.mesh
        s = (X - mesh.origin_array) / mesh.h
        base = np.floor(s).astype(np.int64)
        cells = np.full(len(X), -1, dtype=np.int64)
        for offset in ((0, 0), (-1, 0), (0, -1), (-1, -1), (1, 0), (0, 1)):
            ij = base + np.array(offset)
            ok = (cells < 0) & np.all((ij >= 0) & (ij < mesh.n), axis=1)
            ok &= np.all((s >= ij - LOCATE_TOL) & (s <= ij + 1 + LOCATE_TOL), axis=1)
            c = np.where(ok, ij[:, 0] + mesh.n * ij[:, 1], 0)
            ok &= self._cell_to_active[c] >= 0
            cells[ok] = c[ok]
        missing = cells < 0
        if missing.any():
            if not extrapolate:
                raise OutsideFictitiousDomain(
                    f"{int(missing.sum())} point(s) outside the fictitious domain of step {self.step}",
                    points=X[missing], step=self.step)
            if self._tree is None:
                self._tree = cKDTree(mesh.cell_centers(self.cover.active_cells))
            _, idx = self._tree.query(X[missing], p=np.inf)
            cells[missing] = self.cover.active_cells[idx]
            logger.debug(f"extrapolating {int(missing.sum())} point(s) from the nearest active cell")
        i, j = mesh.cell_ij(cells)
        local = s - np.column_stack([i, j])
        return cells, local

    def evaluate_in_cells(self, coefficients: np.ndarray, cells: np.ndarray, local: np.ndarray,
                          derivative_order: int = 0) -> np.ndarray:
        """Evaluate at given cells and local coordinates; (M,)/(M, d) values or (M, 2)/(M, d, 2) gradients"""
        dofs = self.cell_dofs(cells)
        coeffs = coefficients[dofs]  # (M, n_local) or (M, n_local, d)
        if derivative_order == 0:
            basis = self.reference.values(local)
            return np.einsum('mi,mi...->m...', basis, coeffs)
        grads = self.reference.gradients(local) / self.mesh.h
        if coeffs.ndim == 2:
            return np.einsum('mix,mi->mx', grads, coeffs)
        return np.einsum('mix,mid->mdx', grads, coeffs)

    def interpolate(self, f: PointFunction) -> "FEFunction":
        """Nodal interpolant of a function of points (M, 2) -> (M,) or (M, d)"""
        return FEFunction(self, np.asarray(f(self.nodes), dtype=float))

    def zero(self, components: Optional[int] = None) -> "FEFunction":
        shape = (self.n_dofs,) if components is None else (self.n_dofs, components)
        return FEFunction(self, np.zeros(shape))


@dataclass
class FEFunction:
    """Coefficient vector (or n x d block for vector fields) bound to a space"""
    space: FESpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape[0] != self.space.n_dofs:
            raise ValueError(f"expected {self.space.n_dofs} coefficients, got {self.coefficients.shape[0]}")

    @property
    def components(self) -> int:
        return 1 if self.coefficients.ndim == 1 else self.coefficients.shape[1]

    def evaluate(self, X, derivative_order: int = 0, extrapolate: bool = False) -> np.ndarray:
        """
        Point evaluation

        Args:
            X: Points (M, 2) or a single point
            derivative_order: 0 for values, 1 for gradients
            extrapolate: Allow points outside the fictitious domain

        Returns:
            Values (M,) / (M, d) or gradients (M, 2) / (M, d, 2)

        Raises:
            OutsideFictitiousDomain: If a point is outside the active cells
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        cells, local = self.space.locate(X, extrapolate=extrapolate)
        return self.space.evaluate_in_cells(self.coefficients, cells, local, derivative_order)

    def __call__(self, X) -> np.ndarray:
        return self.evaluate(X)

    def component(self, i: int) -> "FEFunction":
        return FEFunction(self.space, self.coefficients[:, i])


@dataclass
class AssembledSystem:
    """Sparse matrix with a right-hand side (vector or n x d block)"""
    matrix: SparseMatrix
    rhs: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.n

    def solve(self, solver: Optional[LinearSolver] = None, factorization=None) -> np.ndarray:
        return solve_with(solver or LinearSolver(), self.matrix, self.rhs, factorization)


# quadrature containers

@dataclass
class CellBatch:
    """Quadrature on a group of cells padded to a common node count (padding has zero weight)"""
    cells: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    reference: bool = False


@dataclass
class VolumeQuadrature:
    """Quadrature over the physical part of every active cell of one phase"""
    batches: List[CellBatch]
    phase: int = 1

    @property
    def points(self) -> np.ndarray:
        if not self.batches:
            return np.zeros((0, 2))
        return np.vstack([b.points.reshape(-1, 2) for b in self.batches])

    @property
    def weights(self) -> np.ndarray:
        if not self.batches:
            return np.zeros(0)
        return np.concatenate([b.weights.ravel() for b in self.batches])

    @property
    def cells(self) -> np.ndarray:
        if not self.batches:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([np.repeat(b.cells, b.weights.shape[1]) for b in self.batches])

    def split(self, values: np.ndarray) -> List[np.ndarray]:
        """Cut a flat per-node array back into per-batch (C, Q, ...) blocks"""
        out, start = [], 0
        for b in self.batches:
            size = b.weights.size
            out.append(values[start:start + size].reshape(b.weights.shape + values.shape[1:]))
            start += size
        return out

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))

    @property
    def measure(self) -> float:
        return float(self.weights.sum())


def volume_quadrature(space: FESpace, geometry: CutGeometry, phase: Optional[int] = None) -> VolumeQuadrature:
    """
    Tensor rules on full cells and cut rules on cut cells of the space's active set

    Args:
        space: FE space (its cover decides which cells are visited)
        geometry: Cut geometry of the current step
        phase: Region side, defaults to the cover's phase

    Returns:
        VolumeQuadrature with one batch of full cells and one padded batch of cut cells
    """
    phase = space.cover.phase if phase is None else phase
    mesh = space.mesh
    active = space.cover.active_cells
    status = geometry.status(active, phase)
    batches = []
    full = active[status == FULL]
    if len(full):
        x, w = gauss_legendre(space.degree + 2)
        gx, gy = np.meshgrid(x, x, indexing='xy')
        ref = np.column_stack([gx.ravel(), gy.ravel()])
        lo = mesh.cell_lower_left(full)
        points = lo[:, None, :] + mesh.h * ref[None, :, :]
        weights = np.broadcast_to(mesh.h ** 2 * np.outer(w, w).ravel(), (len(full), len(ref))).copy()
        batches.append(CellBatch(full, points, weights, reference=True))
    cut = active[status == CUT]
    rules = [(c, geometry.area_rule(c, phase)) for c in cut]
    rules = [(c, r) for c, r in rules if len(r)]
    if rules:
        q = max(len(r) for _, r in rules)
        cells = np.array([c for c, _ in rules], dtype=np.int64)
        points = np.zeros((len(rules), q, 2))
        weights = np.zeros((len(rules), q))
        for m, (_, r) in enumerate(rules):
            points[m, :len(r)] = r.nodes
            points[m, len(r):] = r.nodes[0]
            weights[m, :len(r)] = r.weights
        batches.append(CellBatch(cells, points, weights))
    logger.debug(f"volume quadrature phase {phase}: {len(full)} full cells, {len(rules)} cut cells")
    return VolumeQuadrature(batches, phase)


def interface_quadrature(space: FESpace, geometry: CutGeometry, n_points: Optional[int] = None) -> InterfaceQuadrature:
    """Curve quadrature with 2k + 2 Gauss points per curve piece by default"""
    return geometry.interface_rule(n_points or 2 * space.degree + 2)


def as_geometry(space: FESpace, curve: Union[CutGeometry, ClosedCurve, CurveSet]) -> CutGeometry:
    if isinstance(curve, CutGeometry):
        return curve
    return CutGeometry(space.mesh, curve, order=2 * space.degree + config.QUAD_ORDER_OFFSET)


# assembly kernels

def _local_frame(space: FESpace, cells: np.ndarray, points: np.ndarray) -> np.ndarray:
    lo = space.mesh.cell_lower_left(cells)
    return (points - lo[:, None, :]) / space.mesh.h


def _scatter(space: FESpace, dofs: np.ndarray, local: np.ndarray, n: Optional[int] = None,
             row_offset: int = 0, col_offset: int = 0, col_dofs: Optional[np.ndarray] = None):
    col_dofs = dofs if col_dofs is None else col_dofs
    rows = np.broadcast_to(dofs[:, :, None] + row_offset, local.shape)
    cols = np.broadcast_to(col_dofs[:, None, :] + col_offset, local.shape)
    return rows.ravel(), cols.ravel(), local.ravel()


def _to_matrix(n: int, parts: List[Tuple[np.ndarray, np.ndarray, np.ndarray]]) -> SparseMatrix:
    if not parts:
        return SparseMatrix(sp.csr_matrix((n, n)))
    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    return SparseMatrix.from_triplets(n, (rows, cols, vals))


def _chunks(batch: CellBatch):
    for start in range(0, len(batch.cells), CHUNK):
        sl = slice(start, start + CHUNK)
        yield batch.cells[sl], batch.points[sl], batch.weights[sl], sl


def assemble_mass(space: FESpace, vq: VolumeQuadrature, scale: float = 1.0) -> SparseMatrix:
    """scale * (u, v) over the quadrature region"""
    ref = space.reference
    parts = []
    for batch in vq.batches:
        for cells, points, weights, _ in _chunks(batch):
            dofs = space.cell_dofs(cells)
            if batch.reference:
                local = np.broadcast_to(scale * space.mesh.h ** 2 * ref.mass, (len(cells),) + ref.mass.shape)
            else:
                B = ref.values(_local_frame(space, cells, points))
                local = scale * np.einsum('cq,cqi,cqj->cij', weights, B, B, optimize=True)
            parts.append(_scatter(space, dofs, local))
    return _to_matrix(space.n_dofs, parts)


def assemble_stiffness(space: FESpace, vq: VolumeQuadrature, nu: float = 1.0) -> SparseMatrix:
    """nu * (grad u, grad v) over the quadrature region"""
    ref = space.reference
    h = space.mesh.h
    parts = []
    for batch in vq.batches:
        for cells, points, weights, _ in _chunks(batch):
            dofs = space.cell_dofs(cells)
            if batch.reference:
                local = np.broadcast_to(nu * ref.stiffness, (len(cells),) + ref.stiffness.shape)
            else:
                G = ref.gradients(_local_frame(space, cells, points)) / h
                local = nu * np.einsum('cq,cqix,cqjx->cij', weights, G, G, optimize=True)
            parts.append(_scatter(space, dofs, local))
    return _to_matrix(space.n_dofs, parts)


def assemble_transport(space: FESpace, vq: VolumeQuadrature, w: Union[FEFunction, np.ndarray]) -> SparseMatrix:
    """
    (w . grad u, v) over the quadrature region

    Args:
        space: FE space
        vq: Volume quadrature
        w: Vector FE function on the same space, or its values (N, 2) at the quadrature points
    """
    ref = space.reference
    h = space.mesh.h
    if isinstance(w, FEFunction):
        cells = vq.cells
        local = _local_frame(space, cells, vq.points[:, None, :])[:, 0, :]
        w = space.evaluate_in_cells(w.coefficients, cells, local) if w.space is space else w.evaluate(vq.points)
    w_blocks = vq.split(np.asarray(w, dtype=float))
    parts = []
    for batch, wb in zip(vq.batches, w_blocks):
        for cells, points, weights, sl in _chunks(batch):
            lf = _local_frame(space, cells, points)
            B = ref.values(lf)
            G = ref.gradients(lf) / h
            local = np.einsum('cq,cqx,cqjx,cqi->cij', weights, wb[sl], G, B, optimize=True)
            parts.append(_scatter(space, space.cell_dofs(cells), local))
    return _to_matrix(space.n_dofs, parts)


def assemble_load(space: FESpace, vq: VolumeQuadrature, values: np.ndarray) -> np.ndarray:
    """(f, v) from values (N,) or (N, d) of f at the quadrature points"""
    values = np.asarray(values, dtype=float)
    out = np.zeros((space.n_dofs,) + values.shape[1:])
    ref = space.reference
    for batch, fb in zip(vq.batches, vq.split(values)):
        for cells, points, weights, sl in _chunks(batch):
            B = ref.values(_local_frame(space, cells, points))
            local = np.einsum('cq,cq...,cqi->ci...', weights, fb[sl], B)
            np.add.at(out, space.cell_dofs(cells), local)
    return out


def assemble_ghost_penalty(space: FESpace, scale: float = 1.0) -> SparseMatrix:
    """
    Ghost penalty sum_l h^(2l-1) <[d_n^l u], [d_n^l v]> over the cover's ghost edges

    Args:
        space: FE space
        scale: Multiplier (the phase viscosity)
    """
    edges = space.cover.ghost_edges
    if not len(edges):
        return SparseMatrix(sp.csr_matrix((space.n_dofs, space.n_dofs)))
    mats = space.reference.ghost_matrices
    parts = []
    for axis in (0, 1):
        sel = edges.axis == axis
        if not sel.any():
            continue
        pairs = edges.cells[sel]
        dofs = np.hstack([space.cell_dofs(pairs[:, 0]), space.cell_dofs(pairs[:, 1])])
        local = np.broadcast_to(scale * mats[axis], (len(pairs),) + mats[axis].shape)
        parts.append(_scatter(space, dofs, local))
    return _to_matrix(space.n_dofs, parts)


def _interface_basis(space: FESpace, iq: InterfaceQuadrature, normal_sign: float = 1.0):
    lo = space.mesh.cell_lower_left(iq.cells)
    local = (iq.nodes - lo) / space.mesh.h
    B = space.reference.values(local)
    G = space.reference.gradients(local) / space.mesh.h
    Dn = np.einsum('mix,mx->mi', G, normal_sign * iq.normals)
    return B, Dn


def assemble_nitsche_boundary(space: FESpace, iq: InterfaceQuadrature, gamma0: float, nu: float = 1.0,
                              normal_sign: float = 1.0) -> SparseMatrix:
    """-nu<v, d_n u> - nu<u, d_n v> + nu gamma0/h <u, v> on the curve"""
    if not len(iq):
        return SparseMatrix(sp.csr_matrix((space.n_dofs, space.n_dofs)))
    B, Dn = _interface_basis(space, iq, normal_sign)
    penalty = gamma0 / space.mesh.h
    w = nu * iq.weights
    local = w[:, None, None] * (penalty * B[:, :, None] * B[:, None, :]
                                - B[:, :, None] * Dn[:, None, :] - Dn[:, :, None] * B[:, None, :])
    return _to_matrix(space.n_dofs, [_scatter(space, space.cell_dofs(iq.cells), local)])


def _boundary_values(g, iq: InterfaceQuadrature) -> np.ndarray:
    if callable(g):
        return np.asarray(g(iq.nodes), dtype=float)
    return np.asarray(g, dtype=float)


def assemble_diffusion_nitsche(space: FESpace, curve: Union[CutGeometry, ClosedCurve, CurveSet],
                               gamma0: float = config.GAMMA0, nu: float = 1.0,
                               vq: Optional[VolumeQuadrature] = None,
                               iq: Optional[InterfaceQuadrature] = None) -> AssembledSystem:
    """
    Diffusion with Nitsche boundary terms and the ghost penalty on one phase

    Args:
        space: FE space of the phase
        curve: Cut geometry or the boundary curve(s)
        gamma0: Nitsche penalty
        nu: Diffusion coefficient
        vq: Optional precomputed volume quadrature
        iq: Optional precomputed interface quadrature

    Returns:
        AssembledSystem with a zero right-hand side
    """
    if gamma0 <= 0:
        raise ValueError(f"gamma0 must be positive, got {gamma0}")
    geometry = as_geometry(space, curve)
    vq = vq or volume_quadrature(space, geometry)
    iq = iq or interface_quadrature(space, geometry)
    sign = 1.0 if space.cover.phase == 1 else -1.0
    matrix = (assemble_stiffness(space, vq, nu) + assemble_nitsche_boundary(space, iq, gamma0, nu, sign)
              + assemble_ghost_penalty(space, nu))
    return AssembledSystem(matrix, np.zeros(space.n_dofs))


def assemble_nitsche_rhs(space: FESpace, curve: Union[CutGeometry, ClosedCurve, CurveSet], g,
                         gamma0: float = config.GAMMA0, nu: float = 1.0,
                         iq: Optional[InterfaceQuadrature] = None) -> np.ndarray:
    """
    <g, nu gamma0/h v - nu d_n v> on the curve

    Args:
        space: FE space
        curve: Cut geometry or curve(s)
        g: Callable on points, or values at the interface quadrature nodes; (M,) or (M, d)
        gamma0: Nitsche penalty
        nu: Diffusion coefficient
        iq: Optional precomputed interface quadrature

    Returns:
        Right-hand side (n_dofs,) or (n_dofs, d)
    """
    geometry = as_geometry(space, curve)
    iq = iq or interface_quadrature(space, geometry)
    values = _boundary_values(g, iq)
    out = np.zeros((space.n_dofs,) + values.shape[1:])
    if not len(iq):
        return out
    sign = 1.0 if space.cover.phase == 1 else -1.0
    B, Dn = _interface_basis(space, iq, sign)
    test = nu * iq.weights[:, None] * (gamma0 / space.mesh.h * B - Dn)
    np.add.at(out, space.cell_dofs(iq.cells), np.einsum('mi,m...->mi...', test, values))
    return out


def assemble_boundary_load(space: FESpace, iq: InterfaceQuadrature, g) -> np.ndarray:
    """<g, v> on the curve"""
    values = _boundary_values(g, iq)
    out = np.zeros((space.n_dofs,) + values.shape[1:])
    if not len(iq):
        return out
    B, _ = _interface_basis(space, iq)
    np.add.at(out, space.cell_dofs(iq.cells), np.einsum('m,mi,m...->mi...', iq.weights, B, values))
    return out


def assemble_mass_and_transport(space: FESpace, curve: Union[CutGeometry, ClosedCurve, CurveSet],
                                w: Optional[Union[FEFunction, np.ndarray]], lambda0: float, tau: float,
                                vq: Optional[VolumeQuadrature] = None) -> SparseMatrix:
    """
    (lambda0/tau)(u, v) - (w . grad u, v) on the physical region

    Args:
        space: FE space
        curve: Cut geometry or curve(s)
        w: Artificial velocity (vector FE function or values at quadrature points); None for zero
        lambda0: Leading BDF coefficient
        tau: Time step
        vq: Optional precomputed volume quadrature
    """
    vq = vq or volume_quadrature(space, as_geometry(space, curve))
    matrix = assemble_mass(space, vq, lambda0 / tau)
    if w is not None:
        matrix = matrix + assemble_transport(space, vq, w).scaled(-1.0)
    return matrix


def assemble_history_rhs(space: FESpace, history, maps, coeffs: Sequence[float], tau: float,
                         vq: VolumeQuadrature) -> np.ndarray:
    """
    -(1/tau) sum_i lambda_i (u^{n-i} o X^{n,n-i}, v) with compositions at the quadrature nodes

    Args:
        space: Current FE space
        history: SolutionHistory whose back(i).solution are the past FE functions
        maps: Object with compose(i, X) -> mapped points (identity when None)
        coeffs: lambda_1..lambda_k
        tau: Time step
        vq: Volume quadrature of the current step

    Raises:
        OutsideFictitiousDomain: With node, offset and mapped points attached
    """
    points = vq.points
    total = None
    for i, lam in enumerate(coeffs, start=1):
        past = history.back(i).solution
        mapped = points if maps is None else maps.compose(i, points)
        try:
            values = past.evaluate(mapped)
        except OutsideFictitiousDomain as e:
            raise OutsideFictitiousDomain(f"history offset {i}: {e}", points=e.points, step=e.step,
                                          trace=f"{e.trace} offset={i}".strip()) from e
        term = (-lam / tau) * values
        total = term if total is None else total + term
    return assemble_load(space, vq, total)


def interface_weights(nus: Tuple[float, float]) -> Tuple[float, float, float]:
    """kappa_1, kappa_2 and the averaged viscosity kappa_1 nu_1 + kappa_2 nu_2"""
    nu1, nu2 = nus
    kappa1 = nu2 / (nu1 + nu2)
    kappa2 = nu1 / (nu1 + nu2)
    return kappa1, kappa2, kappa1 * nu1 + kappa2 * nu2


def _two_phase_interface_vectors(spaces: Tuple[FESpace, FESpace], iq: InterfaceQuadrature,
                                 nus: Tuple[float, float]):
    kappa1, kappa2, _ = interface_weights(nus)
    B1, D1 = _interface_basis(spaces[0], iq)
    B2, D2 = _interface_basis(spaces[1], iq)
    jump = np.hstack([B1, -B2])
    flux = np.hstack([kappa1 * nus[0] * D1, kappa2 * nus[1] * D2])
    dofs = np.hstack([spaces[0].cell_dofs(iq.cells), spaces[1].cell_dofs(iq.cells) + spaces[0].n_dofs])
    return jump, flux, dofs


def assemble_two_phase(spaces: Tuple[FESpace, FESpace], curve: Union[CutGeometry, ClosedCurve, CurveSet],
                       nus: Tuple[float, float], gamma0: float = config.GAMMA0,
                       vqs: Optional[Tuple[VolumeQuadrature, VolumeQuadrature]] = None,
                       iq: Optional[InterfaceQuadrature] = None) -> AssembledSystem:
    """
    Block diffusion system over (u1, u2) with averaged Nitsche coupling on the interface

    Args:
        spaces: Phase-1 and phase-2 spaces
        curve: Cut geometry or interface curve(s)
        nus: (nu1, nu2)
        gamma0: Interface penalty
        vqs: Optional volume quadratures of both phases
        iq: Optional interface quadrature

    Returns:
        AssembledSystem of size n1 + n2 with zero right-hand side
    """
    geometry = as_geometry(spaces[0], curve)
    vqs = vqs or (volume_quadrature(spaces[0], geometry), volume_quadrature(spaces[1], geometry))
    iq = iq or interface_quadrature(spaces[0], geometry)
    n1, n2 = spaces[0].n_dofs, spaces[1].n_dofs
    blocks = []
    for space, vq, nu in zip(spaces, vqs, nus):
        blocks.append((assemble_stiffness(space, vq, nu) + assemble_ghost_penalty(space, nu)).csr)
    diagonal = block_matrix([[blocks[0], None], [None, blocks[1]]])
    _, _, nu_avg = interface_weights(nus)
    jump, flux, dofs = _two_phase_interface_vectors(spaces, iq, nus)
    penalty = gamma0 / spaces[0].mesh.h * nu_avg
    w = iq.weights[:, None, None]
    local = w * (penalty * jump[:, :, None] * jump[:, None, :]
                 - jump[:, :, None] * flux[:, None, :] - flux[:, :, None] * jump[:, None, :])
    coupling = _to_matrix(n1 + n2, [_scatter(spaces[0], dofs, local)])
    return AssembledSystem(diagonal + coupling, np.zeros(n1 + n2))


def assemble_two_phase_rhs(spaces: Tuple[FESpace, FESpace], iq: InterfaceQuadrature, nus: Tuple[float, float],
                           g_dirichlet=None, g_neumann=None, gamma0: float = config.GAMMA0) -> np.ndarray:
    """
    Interface jump data: <g_D, gamma0/h {nu}[v] - {nu d_n v}> + <g_N, kappa_2 v1 + kappa_1 v2>

    g_D = u1 - u2 and g_N = nu1 d_n u1 - nu2 d_n u2 with n pointing from phase 1 to phase 2.
    """
    n = spaces[0].n_dofs + spaces[1].n_dofs
    out = np.zeros(n)
    if not len(iq):
        return out
    kappa1, kappa2, nu_avg = interface_weights(nus)
    jump, flux, dofs = _two_phase_interface_vectors(spaces, iq, nus)
    if g_dirichlet is not None:
        gd = _boundary_values(g_dirichlet, iq)
        test = iq.weights[:, None] * (gamma0 / spaces[0].mesh.h * nu_avg * jump - flux)
        np.add.at(out, dofs, test * gd[:, None])
    if g_neumann is not None:
        gn = _boundary_values(g_neumann, iq)
        B1, _ = _interface_basis(spaces[0], iq)
        B2, _ = _interface_basis(spaces[1], iq)
        test = iq.weights[:, None] * np.hstack([kappa2 * B1, kappa1 * B2])
        np.add.at(out, dofs, test * gn[:, None])
    return out


def apply_dirichlet(matrix: SparseMatrix, rhs: np.ndarray, dofs: np.ndarray,
                    values: np.ndarray) -> Tuple[SparseMatrix, np.ndarray]:
    """
    Strong constraints by elimination, keeping symmetry

    Args:
        matrix: System matrix
        rhs: Right-hand side (n,) or (n, d)
        dofs: Constrained dofs
        values: Prescribed values, shaped like rhs[dofs]

    Returns:
        Tuple of (constrained matrix, modified right-hand side)
    """
    dofs = np.asarray(dofs, dtype=np.int64)
    if not len(dofs):
        return matrix, rhs
    values = np.asarray(values, dtype=float)
    n = matrix.n
    lifted = np.zeros_like(np.asarray(rhs, dtype=float))
    lifted[dofs] = values
    rhs = rhs - matrix.csr @ lifted
    keep = np.ones(n)
    keep[dofs] = 0.0
    mask = sp.diags(keep)
    fixed = sp.diags(1.0 - keep)
    constrained = mask @ matrix.csr @ mask + fixed
    rhs[dofs] = values
    return SparseMatrix(constrained), rhs


# norms

def l2_error(u_h: Optional[FEFunction], exact: Optional[PointFunction], vq: VolumeQuadrature,
             extrapolate: bool = False) -> float:
    """L2 norm of u_h - exact over the quadrature region (either term may be None)"""
    pts = vq.points
    diff = np.zeros(len(pts)) if u_h is None else u_h.evaluate(pts, extrapolate=extrapolate)
    if exact is not None:
        diff = diff - exact(pts)
    sq = diff ** 2 if diff.ndim == 1 else np.sum(diff ** 2, axis=1)
    return float(np.sqrt(max(vq.integrate(sq), 0.0)))


def h1_seminorm_error(u_h: FEFunction, exact_gradient: Optional[PointFunction], vq: VolumeQuadrature,
                      extrapolate: bool = False) -> float:
    """L2 norm of grad u_h - grad exact over the quadrature region"""
    pts = vq.points
    diff = u_h.evaluate(pts, derivative_order=1, extrapolate=extrapolate)
    if exact_gradient is not None:
        diff = diff - exact_gradient(pts)
    sq = np.sum(diff.reshape(len(pts), -1) ** 2, axis=1)
    return float(np.sqrt(max(vq.integrate(sq), 0.0)))


def mesh_energy_norm(u_h: FEFunction, vq: VolumeQuadrature, iq: InterfaceQuadrature) -> float:
    """
    Mesh-dependent energy norm squared: |grad u|^2 + ghost penalty + |u|^2_curve / h

    Returns:
        The squared norm
    """
    space = u_h.space
    grad = h1_seminorm_error(u_h, None, vq) ** 2
    ghost = assemble_ghost_penalty(space)
    c = u_h.coefficients
    jump = float(np.sum(c * (ghost.csr @ c)))
    trace = u_h.evaluate(iq.nodes) if len(iq) else np.zeros(0)
    sq = trace ** 2 if trace.ndim == 1 else np.sum(trace ** 2, axis=1)
    curve_term = float(np.dot(iq.weights, sq)) / space.mesh.h if len(iq) else 0.0
    return grad + jump + curve_term
