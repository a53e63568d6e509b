from .polynomial import gauss_legendre, lagrange_basis, lagrange_combination, lagrange_nodes
