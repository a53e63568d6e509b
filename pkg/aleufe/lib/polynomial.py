"""
One-dimensional polynomial helpers: Gauss rules and equispaced Lagrange bases on [0, 1]
"""
from functools import lru_cache
from typing import Tuple

import numpy as np
from numpy.polynomial import legendre
from numpy.polynomial import polynomial as P


@lru_cache(maxsize=64)
def gauss_legendre(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gauss-Legendre rule with n points mapped to [0, 1]

    Args:
        n: Number of points (exact for degree 2n-1)

    Returns:
        Tuple of (nodes, weights), weights summing to 1
    """
    if n < 1:
        raise ValueError(f"Gauss rule needs at least one point, got {n}")
    x, w = legendre.leggauss(n)
    nodes = 0.5 * (x + 1.0)
    weights = 0.5 * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


@lru_cache(maxsize=16)
def _lagrange_coefficients(k: int) -> np.ndarray:
    # column a holds the monomial coefficients of the a-th basis function
    nodes = np.linspace(0.0, 1.0, k + 1)
    vandermonde = np.vander(nodes, k + 1, increasing=True)
    coeffs = np.linalg.solve(vandermonde, np.eye(k + 1))
    coeffs.setflags(write=False)
    return coeffs


def lagrange_nodes(k: int) -> np.ndarray:
    """Equispaced interpolation nodes i/k on [0, 1]"""
    return np.linspace(0.0, 1.0, k + 1)


def lagrange_basis(k: int, xi, deriv: int = 0) -> np.ndarray:
    """
    Evaluate the degree-k equispaced Lagrange basis (or a derivative of it)

    Args:
        k: Polynomial degree
        xi: Points in [0, 1] (any shape)
        deriv: Derivative order

    Returns:
        Array of shape xi.shape + (k+1,)
    """
    xi = np.asarray(xi, dtype=float)
    coeffs = _lagrange_coefficients(k)
    if deriv > 0:
        if deriv > k:
            return np.zeros(xi.shape + (k + 1,))
        coeffs = P.polyder(coeffs, m=deriv, axis=0)
    values = P.polyval(xi, coeffs, tensor=True)  # (k+1,) + xi.shape
    return np.moveaxis(values, 0, -1)


def lagrange_combination(k: int, xi, points: np.ndarray, deriv: int = 0) -> np.ndarray:
    """
    Evaluate sum_i points[..., i, :] * b_i(xi) for vector-valued Lagrange maps

    Args:
        k: Degree
        xi: Parameter values, shape (M,)
        points: Nodal values, shape (M, k+1, d)
        deriv: Derivative order in xi

    Returns:
        Array of shape (M, d)
    """
    basis = lagrange_basis(k, xi, deriv)
    return np.einsum('mi,mid->md', basis, points)
