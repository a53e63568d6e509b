import numpy as np
import pytest
import scipy.sparse as sp

from aleufe.exceptions import IndexOutOfRange, Singular
from aleufe.linalg import (
    LinearSolver,
    SparseMatrix,
    block_matrix,
    factorize,
    factorize_and_solve,
    iterative_solve,
    relative_residual,
    solve_with,
)


def _laplacian_1d(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


def test_duplicate_triplets_are_summed():
    matrix = SparseMatrix.from_triplets(2, [(0, 0, 1.0), (0, 0, 2.0), (1, 1, 4.0)])
    assert matrix.to_dense()[0, 0] == 3.0
    assert matrix.nnz == 2


def test_empty_triplets_give_zero_matrix():
    matrix = SparseMatrix.from_triplets(3, [])
    assert matrix.shape == (3, 3)
    assert matrix.nnz == 0


def test_matvec_matches_dense():
    rng = np.random.default_rng(7)
    rows, cols = rng.integers(0, 6, 40), rng.integers(0, 6, 40)
    vals = rng.standard_normal(40)
    matrix = SparseMatrix.from_triplets(6, (rows, cols, vals))
    dense = np.zeros((6, 6))
    np.add.at(dense, (rows, cols), vals)
    x = rng.standard_normal(6)
    np.testing.assert_allclose(matrix @ x, dense @ x, atol=1e-13)


def test_out_of_range_index():
    with pytest.raises(IndexOutOfRange):
        SparseMatrix.from_triplets(2, [(0, 2, 1.0)])
    with pytest.raises(IndexOutOfRange):
        SparseMatrix.from_triplets(2, [(-1, 0, 1.0)])


def test_direct_solve_small_system():
    matrix = SparseMatrix.from_triplets(2, [(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)])
    x = factorize_and_solve(matrix, np.array([3.0, 5.0]))
    np.testing.assert_allclose(x, [0.8, 1.4], atol=1e-14)


def test_factorization_reused_for_block_rhs():
    matrix = SparseMatrix(_laplacian_1d(20))
    lu = factorize(matrix)
    b = np.column_stack([np.ones(20), np.arange(20.0)])
    x = factorize_and_solve(matrix, b, factorization=lu)
    for j in range(2):
        assert relative_residual(matrix, x[:, j], b[:, j]) < 1e-12


def test_zero_rhs_returns_zero():
    matrix = SparseMatrix(_laplacian_1d(5))
    np.testing.assert_array_equal(factorize_and_solve(matrix, np.zeros(5)), np.zeros(5))


def test_singular_matrix_raises():
    matrix = SparseMatrix.from_triplets(2, [(0, 0, 1.0)])
    with pytest.raises(Singular):
        factorize_and_solve(matrix, np.array([1.0, 1.0]))


def test_iterative_agrees_with_direct():
    csr = _laplacian_1d(50) + sp.eye(50) * 0.1
    b = np.sin(np.linspace(0, 3, 50))
    direct = factorize_and_solve(csr, b)
    iterative = iterative_solve(csr, b, tolerance=1e-12)
    np.testing.assert_allclose(iterative, direct, rtol=1e-8, atol=1e-10)


def test_solve_with_dispatches():
    csr = _laplacian_1d(10)
    b = np.ones(10)
    for method in ("direct", "iterative"):
        x = solve_with(LinearSolver(method=method, tolerance=1e-12), csr, b)
        assert relative_residual(csr, x, b) < 1e-9


def test_unknown_solver_method():
    with pytest.raises(ValueError):
        LinearSolver(method="cholesky")


def test_block_matrix_and_symmetry():
    a = _laplacian_1d(3)
    matrix = block_matrix([[a, None], [None, a]])
    assert matrix.shape == (6, 6)
    assert matrix.is_symmetric()


def test_export_triplets(tmp_path):
    matrix = SparseMatrix.from_triplets(2, [(0, 1, 1.5), (1, 0, -2.0)])
    path = matrix.export_triplets(tmp_path / "m.txt")
    lines = path.read_text().splitlines()
    assert lines[0] == "# 2 2 2"
    rows = [tuple(float(v) for v in line.split()) for line in lines[1:]]
    assert (0.0, 1.0, 1.5) in rows
    assert (1.0, 0.0, -2.0) in rows
