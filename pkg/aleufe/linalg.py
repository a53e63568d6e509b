"""
Sparse matrix container, direct factorization and preconditioned iterative solves
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, gmres, spilu, splu

import config
from aleufe.exceptions import IndexOutOfRange, LinearSolveFailure, NoConvergence, Singular

logger = logging.getLogger(__name__)

ZERO_DROP = 1e-300


class SparseMatrix:
    """Square matrix in compressed row storage"""

    def __init__(self, csr: sp.csr_matrix):
        csr = sp.csr_matrix(csr)
        if csr.shape[0] != csr.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {csr.shape}")
        csr.sum_duplicates()
        csr.sort_indices()
        small = np.abs(csr.data) < ZERO_DROP
        if small.any():
            csr.data[small] = 0.0
            csr.eliminate_zeros()
        self.csr = csr

    @classmethod
    def from_triplets(cls, n: int, triplets: Union[Tuple[np.ndarray, np.ndarray, np.ndarray],
                                                     Iterable[Tuple[int, int, float]]]) -> "SparseMatrix":
        """
        Build from (row, col, value) triplets, summing duplicates

        Args:
            n: Matrix size
            triplets: Either a tuple of three arrays or an iterable of (i, j, v)

        Returns:
            SparseMatrix

        Raises:
            IndexOutOfRange: If any index is negative or >= n
        """
        if isinstance(triplets, tuple) and len(triplets) == 3 and np.ndim(triplets[0]) == 1:
            rows, cols, vals = (np.asarray(t) for t in triplets)
        else:
            items = list(triplets)
            if items:
                rows, cols, vals = (np.asarray(col) for col in zip(*items))
            else:
                rows = cols = np.zeros(0, dtype=np.int64)
                vals = np.zeros(0)
        rows = rows.astype(np.int64, copy=False)
        cols = cols.astype(np.int64, copy=False)
        vals = vals.astype(float, copy=False)
        if rows.size and (rows.min() < 0 or cols.min() < 0 or rows.max() >= n or cols.max() >= n):
            raise IndexOutOfRange(f"triplet index outside [0, {n})")
        coo = sp.coo_matrix((vals, (rows, cols)), shape=(n, n))
        return cls(coo.tocsr())

    @property
    def n(self) -> int:
        return self.csr.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.csr.shape

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.csr @ np.asarray(x, dtype=float)

    def __matmul__(self, x):
        return self.matvec(x)

    def __add__(self, other: "SparseMatrix") -> "SparseMatrix":
        return SparseMatrix(self.csr + other.csr)

    def scaled(self, factor: float) -> "SparseMatrix":
        return SparseMatrix(self.csr * factor)

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()

    def is_symmetric(self, rtol: float = 1e-12) -> bool:
        diff = abs(self.csr - self.csr.T)
        scale = max(abs(self.csr).max(), 1e-300)
        return bool(diff.max() <= rtol * scale) if diff.nnz else True

    def export_triplets(self, path: Union[str, Path]) -> Path:
        """Write 'row col value' lines (0-based) for debugging"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        coo = self.csr.tocoo()
        with open(path, 'w', encoding='utf-8') as f:
            f.write(f"# {self.n} {self.n} {coo.nnz}\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                f.write(f"{i} {j} {v:.17e}\n")
        return path


def _as_csr(matrix) -> sp.csr_matrix:
    return matrix.csr if isinstance(matrix, SparseMatrix) else sp.csr_matrix(matrix)


@dataclass
class LinearSolver:
    """Linear solver settings"""
    method: str = config.LINEAR_SOLVER  # "direct" or "iterative"
    tolerance: float = config.SOLVER_TOL
    max_iterations: int = config.SOLVER_MAXITER

    def __post_init__(self):
        if self.method not in ("direct", "iterative"):
            raise ValueError(f"unknown solver method '{self.method}'")


class Factorization:
    """Sparse LU factors, reusable for several right-hand sides"""

    def __init__(self, matrix):
        csr = _as_csr(matrix)
        self.matrix = csr
        try:
            self._lu = splu(csr.tocsc())
        except RuntimeError as e:
            raise Singular(f"sparse LU failed: {e}") from e

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        x = self._lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise Singular("LU solve produced non-finite values")
        return x


def relative_residual(matrix, x: np.ndarray, b: np.ndarray) -> float:
    csr = _as_csr(matrix)
    r = csr @ x - b
    bnorm = np.linalg.norm(b)
    return float(np.linalg.norm(r) / bnorm) if bnorm > 0 else float(np.linalg.norm(r))


def factorize(matrix) -> Factorization:
    """Sparse LU factorization of a square matrix"""
    return Factorization(matrix)


def factorize_and_solve(matrix, b: np.ndarray, tolerance: float = config.SOLVER_TOL,
                        factorization: Optional[Factorization] = None) -> np.ndarray:
    """
    Direct solve with one step of iterative refinement when the residual is too large

    Args:
        matrix: Square sparse matrix
        b: Right-hand side (vector or n x m block)
        tolerance: Relative residual bound
        factorization: Optional existing factors of the same matrix

    Returns:
        Solution array shaped like b

    Raises:
        Singular: If the factorization breaks down
        LinearSolveFailure: If the residual contract cannot be met
    """
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        return np.zeros_like(b)
    lu = factorization or factorize(matrix)
    csr = lu.matrix
    x = lu.solve(b)
    columns = [slice(None)] if b.ndim == 1 else [(slice(None), j) for j in range(b.shape[1])]
    for col in columns:
        res = relative_residual(csr, x[col], b[col])
        if res > tolerance:
            x[col] = x[col] + lu.solve(b[col] - csr @ x[col])
            res = relative_residual(csr, x[col], b[col])
            if res > tolerance:
                raise LinearSolveFailure(f"direct solve residual {res:.3e} exceeds {tolerance:.1e}")
    return x


def iterative_solve(matrix, b: np.ndarray, tolerance: float = config.SOLVER_TOL,
                    max_iterations: int = config.SOLVER_MAXITER, restart: int = 60) -> np.ndarray:
    """
    Restarted GMRES with an incomplete-LU preconditioner

    Args:
        matrix: Square sparse matrix
        b: Right-hand side vector
        tolerance: Relative residual bound
        max_iterations: Cap on restart cycles
        restart: Krylov subspace size

    Returns:
        Solution vector

    Raises:
        NoConvergence: If GMRES stops before meeting the tolerance
        LinearSolveFailure: On illegal input or breakdown
    """
    csr = _as_csr(matrix)
    b = np.asarray(b, dtype=float)
    if b.ndim == 2:
        return np.column_stack([iterative_solve(csr, b[:, j], tolerance, max_iterations, restart)
                                for j in range(b.shape[1])])
    if not np.any(b):
        return np.zeros_like(b)
    n = csr.shape[0]
    preconditioner = None
    try:
        ilu = spilu(csr.tocsc(), drop_tol=1e-6, fill_factor=20)
        preconditioner = LinearOperator((n, n), matvec=ilu.solve)
    except RuntimeError as e:
        logger.warning(f"⚠️  ILU preconditioner failed ({e}); running unpreconditioned GMRES")
    x, info = gmres(csr, b, rtol=tolerance, atol=0.0, restart=restart, maxiter=max_iterations, M=preconditioner)
    if info > 0:
        raise NoConvergence(f"GMRES did not converge in {info} iterations")
    if info < 0:
        raise LinearSolveFailure(f"GMRES breakdown (info={info})")
    res = relative_residual(csr, x, b)
    if res > 10 * tolerance:
        raise NoConvergence(f"GMRES residual {res:.3e} exceeds {tolerance:.1e}")
    return x


def solve_with(solver: LinearSolver, matrix, b: np.ndarray,
               factorization: Optional[Factorization] = None) -> np.ndarray:
    """Dispatch on the solver method; the direct path falls back to GMRES on singular factors"""
    if solver.method == "iterative":
        return iterative_solve(matrix, b, solver.tolerance, solver.max_iterations)
    try:
        return factorize_and_solve(matrix, b, solver.tolerance, factorization)
    except Singular:
        raise
    except LinearSolveFailure as e:
        logger.warning(f"⚠️  direct solve failed ({e}); retrying with GMRES")
        return iterative_solve(matrix, b, solver.tolerance, solver.max_iterations)


def block_matrix(blocks: Sequence[Sequence[Optional[sp.spmatrix]]]) -> SparseMatrix:
    """Assemble a square block matrix (None blocks are zero)"""
    return SparseMatrix(sp.bmat(blocks, format='csr'))
