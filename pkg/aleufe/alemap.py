"""
Discrete ALE maps built by harmonic extension of boundary displacements
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np

import config
from aleufe.exceptions import OutsideFictitiousDomain
from aleufe.fespace import (AssembledSystem, FEFunction, FESpace, apply_dirichlet, as_geometry,
                            assemble_diffusion_nitsche, assemble_nitsche_rhs, interface_quadrature)
from aleufe.flowmap import BoundaryMap
from aleufe.linalg import Factorization, LinearSolver, factorize, solve_with
from aleufe.models import JacobianReport
from aleufe.quad import CutGeometry, InterfaceQuadrature
from aleufe.timestep import lagrange_time_derivative

logger = logging.getLogger(__name__)


class DiscreteALEMap:
    """
    Backward maps X^{n,n-i} of step n as a chain of one-step maps

    X^{n,n} is the identity, X^{n,n-1} is a vector FE field on the space of step n and
    X^{n,n-i} = X^{n-1,n-i} o X^{n,n-1}.
    """

    def __init__(self, step: int, time: float, tau: float, one_step: Optional[FEFunction] = None,
                 previous: Optional["DiscreteALEMap"] = None):
        self.step = step
        self.time = time
        self.tau = tau
        self.one_step = one_step
        self.previous = previous

    def __repr__(self) -> str:
        return f"DiscreteALEMap(step={self.step}, identity={self.one_step is None})"

    def _apply_one_step(self, X: np.ndarray, extrapolate: bool) -> np.ndarray:
        if self.one_step is None:
            return X
        return self.one_step.evaluate(X, extrapolate=extrapolate)

    def compose(self, i: int, X, extrapolate: bool = False) -> np.ndarray:
        """
        Evaluate X^{n,n-i} right to left along the chain

        Args:
            i: Offset (0 gives the identity)
            X: Points of the current domain (M, 2)
            extrapolate: Allow evaluation outside the stored fictitious domains

        Returns:
            Mapped points (M, 2)

        Raises:
            OutsideFictitiousDomain: With the chain trace when an intermediate point escapes
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        current: Optional[DiscreteALEMap] = self
        trace = []
        for m in range(i):
            if current is None:
                raise ValueError(f"map chain of step {self.step} holds fewer than {i} one-step maps")
            trace.append(f"X^{{{current.step},{current.step - 1}}}")
            try:
                X = current._apply_one_step(X, extrapolate)
            except OutsideFictitiousDomain as e:
                raise OutsideFictitiousDomain(
                    f"composition X^{{{self.step},{self.step - i}}} left step {current.step}'s fictitious domain",
                    points=e.points, step=current.step, trace=" o ".join(reversed(trace))) from e
            current = current.previous
        return X

    def compose_jacobian(self, i: int, X) -> np.ndarray:
        """Jacobian of X^{n,n-i} at points by the chain rule, (M, 2, 2)"""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        J = np.broadcast_to(np.eye(2), (len(X), 2, 2)).copy()
        current: Optional[DiscreteALEMap] = self
        for _ in range(i):
            if current.one_step is not None:
                local = current.one_step.evaluate(X, derivative_order=1)
                J = np.einsum('mab,mbc->mac', local, J)
                X = current.one_step.evaluate(X)
            current = current.previous
        return J

    def lagrange_at(self, X, t: float, k: int, extrapolate: bool = False, derivative: bool = False) -> np.ndarray:
        """Lagrange-in-time combination sum_i l^i(t) X^{n,n-i}(X) over t_n .. t_{n-k} (or its time derivative)"""
        times = self.time - self.tau * np.arange(k + 1)
        if derivative:
            weights = lagrange_time_derivative(times, t)
        else:
            weights = np.array([_lagrange_value(times, j, t) for j in range(k + 1)])
        return sum(w * self.compose(i, X, extrapolate) for i, w in enumerate(weights))

    def prune(self, depth: int) -> None:
        """Keep only the first depth one-step maps of the chain (depth >= 1)"""
        current = self
        for _ in range(depth - 1):
            if current.previous is None:
                return
            current = current.previous
        current.previous = None


def _lagrange_value(times: np.ndarray, j: int, t: float) -> float:
    others = np.delete(times, j)
    return float(np.prod((t - others) / (times[j] - others)))


@dataclass
class ArtificialVelocity:
    """w = sum_i l_i'(t_n) X^{n,n-i}, nodally interpolated on the step's space"""
    field: FEFunction

    @property
    def max_norm(self) -> float:
        c = self.field.coefficients
        return float(np.max(np.linalg.norm(c, axis=1))) if len(c) else 0.0


def _boundary_data(boundary_map: BoundaryMap, iq: InterfaceQuadrature) -> np.ndarray:
    if not len(iq):
        return np.zeros((0, 2))
    return np.asarray(boundary_map(iq.nodes, iq.params, iq.curve_index), dtype=float)


def solve_one_step_map(space: FESpace, curve, boundary_map: BoundaryMap, gamma0: float = config.GAMMA0,
                       system: Optional[AssembledSystem] = None, factorization: Optional[Factorization] = None,
                       iq: Optional[InterfaceQuadrature] = None,
                       solver: Optional[LinearSolver] = None) -> FEFunction:
    """
    Harmonic extension of the backward boundary map, both components with one matrix

    Args:
        space: Space of the current step
        curve: Cut geometry or current boundary
        boundary_map: g^{n,n-1} evaluated at curve quadrature nodes
        gamma0: Nitsche penalty
        system: Optional precomputed diffusion-Nitsche system (shared with the physical solve)
        factorization: Optional factors of system.matrix
        iq: Optional interface quadrature
        solver: Linear solver settings

    Returns:
        Vector FEFunction X^{n,n-1}
    """
    geometry = as_geometry(space, curve)
    iq = iq or interface_quadrature(space, geometry)
    system = system or assemble_diffusion_nitsche(space, geometry, gamma0, iq=iq)
    rhs = assemble_nitsche_rhs(space, geometry, _boundary_data(boundary_map, iq), gamma0, iq=iq)
    solver = solver or LinearSolver()
    if solver.method == "direct" and factorization is None:
        factorization = factorize(system.matrix)
    coeffs = solve_with(solver, system.matrix, rhs, factorization)
    return FEFunction(space, coeffs)


def two_phase_one_step_map(space2: FESpace, curve, boundary_map: BoundaryMap, gamma0: float = config.GAMMA0,
                           iq: Optional[InterfaceQuadrature] = None,
                           solver: Optional[LinearSolver] = None) -> FEFunction:
    """
    One-step map of the outer phase: Nitsche data on the interface, identity on the box boundary

    Args:
        space2: Phase-2 space (its cover includes every cell touching the box boundary)
        curve: Cut geometry or interface
        boundary_map: g^{n,n-1} on the interface
        gamma0: Nitsche penalty
        iq: Optional interface quadrature
        solver: Linear solver settings

    Returns:
        Vector FEFunction equal to the identity at every box-boundary dof
    """
    geometry = as_geometry(space2, curve)
    iq = iq or interface_quadrature(space2, geometry)
    system = assemble_diffusion_nitsche(space2, geometry, gamma0, iq=iq)
    rhs = assemble_nitsche_rhs(space2, geometry, _boundary_data(boundary_map, iq), gamma0, iq=iq)
    outer = space2.outer_dofs
    matrix, rhs = apply_dirichlet(system.matrix, rhs, outer, space2.nodes[outer])
    coeffs = solve_with(solver or LinearSolver(), matrix, rhs)
    return FEFunction(space2, coeffs)


def artificial_velocity(ale: DiscreteALEMap, k: int, space: Optional[FESpace] = None) -> ArtificialVelocity:
    """
    Artificial velocity (1/tau) sum_{i=0..k} lambda_i X^{n,n-i} at the space's nodes

    Nodes outside the stored fictitious domains are extrapolated from the nearest active cell.

    Args:
        ale: Map chain of the current step
        k: BDF order
        space: Space to interpolate on (defaults to the one-step map's space)

    Returns:
        ArtificialVelocity
    """
    space = space or ale.one_step.space
    # l_i'(t_n) = lambda_i / tau on uniform nodes
    return ArtificialVelocity(FEFunction(space, ale.lagrange_at(space.nodes, ale.time, k, extrapolate=True,
                                                                derivative=True)))


def velocity_weights(k: int, tau: float) -> np.ndarray:
    """l_i'(t_n) for uniform nodes; equals lambda_i / tau"""
    return lagrange_time_derivative(-tau * np.arange(k + 1), 0.0)


def jacobian_diagnostics(ale: DiscreteALEMap, i: int, points: np.ndarray) -> JacobianReport:
    """
    Statistics of the Jacobian of X^{n,n-i} at sample points

    Args:
        ale: Map chain
        i: Offset
        points: Sample points, typically volume quadrature nodes

    Returns:
        JacobianReport with max infinity-norm deviation from I and the determinant range
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if not len(points):
        return JacobianReport(offset=i, max_deviation=0.0, det_min=1.0, det_max=1.0, samples=0)
    J = ale.compose_jacobian(i, points)
    deviation = np.abs(J - np.eye(2)).sum(axis=2).max(axis=1)
    det = np.linalg.det(J)
    return JacobianReport(offset=i, max_deviation=float(deviation.max()), det_min=float(det.min()),
                          det_max=float(det.max()), samples=len(points))
