"""
Manufactured solutions and domain motions of the four benchmark cases
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from aleufe.curve import LevelSetGeometry, MarkerSet, circle_markers
from aleufe.flowmap import ClosedFormMotion, VelocityMotion
from aleufe.solvers import CoupledProblem, HeatProblem, TwoPhaseData, TwoPhaseProblem

logger = logging.getLogger(__name__)

PI = np.pi

# final times
ONE_PHASE_T = 1.0
COUPLED_T = 3.0
TWO_PHASE_T = 1.5
TOPOLOGICAL_T = 1.0

FINAL_TIMES = {
    "one-phase": ONE_PHASE_T,
    "coupled": COUPLED_T,
    "two-phase": TWO_PHASE_T,
    "topological": TOPOLOGICAL_T,
}


def _xy(X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return X[:, 0], X[:, 1]


def markers_for(center, radius: float, eta: float) -> MarkerSet:
    """Circle markers with spacing close to eta"""
    n = max(8, int(round(2 * PI * radius / eta)))
    return MarkerSet(circle_markers(center, radius, n).points, eta)


# sin(pi(x+t)) sin(pi(y+t)): one-phase, phase 1 of two-phase, topological case

def product_wave(X, t):
    x, y = _xy(X)
    return np.sin(PI * (x + t)) * np.sin(PI * (y + t))


def product_wave_gradient(X, t):
    x, y = _xy(X)
    a, b = PI * (x + t), PI * (y + t)
    return np.column_stack([PI * np.cos(a) * np.sin(b), PI * np.sin(a) * np.cos(b)])


def product_wave_dt(X, t):
    x, y = _xy(X)
    a, b = PI * (x + t), PI * (y + t)
    return PI * (np.cos(a) * np.sin(b) + np.sin(a) * np.cos(b))


def product_wave_source(nu: float = 1.0) -> Callable[[np.ndarray, float], np.ndarray]:
    """u_t - nu Lap u with Lap u = -2 pi^2 u"""
    def source(X, t):
        return product_wave_dt(X, t) + 2 * PI ** 2 * nu * product_wave(X, t)
    return source


# e^x sin(pi(y+t)): outer phase of the two-phase case

def exp_wave(X, t):
    x, y = _xy(X)
    return np.exp(x) * np.sin(PI * (y + t))


def exp_wave_gradient(X, t):
    x, y = _xy(X)
    b = PI * (y + t)
    return np.column_stack([np.exp(x) * np.sin(b), PI * np.exp(x) * np.cos(b)])


def exp_wave_source(nu: float = 1.0) -> Callable[[np.ndarray, float], np.ndarray]:
    """u_t - nu Lap u with Lap u = (1 - pi^2) u"""
    def source(X, t):
        x, y = _xy(X)
        dt = PI * np.exp(x) * np.cos(PI * (y + t))
        return dt - nu * (1 - PI ** 2) * exp_wave(X, t)
    return source


# one-phase motion

def one_phase_position(X0, t):
    x, y = _xy(X0)
    s = np.sin(2 * t)
    return np.column_stack([x / (1 + 0.2 * s) + s / 16, y / (1 - 0.25 * s) + s / 16])


def one_phase_initial(X, t):
    x, y = _xy(X)
    s = np.sin(2 * t)
    return np.column_stack([(x - s / 16) * (1 + 0.2 * s), (y - s / 16) * (1 - 0.25 * s)])


ONE_PHASE_MOTION = ClosedFormMotion(one_phase_position, one_phase_initial)


@dataclass
class OnePhaseCase:
    """Heat equation in a domain deformed by a closed-form motion of the circle r = 1/8 at (0.5, 0.5)"""
    center: tuple = (0.5, 0.5)
    radius: float = 1.0 / 8
    T: float = ONE_PHASE_T

    def problem(self) -> HeatProblem:
        return HeatProblem(source=product_wave_source(), dirichlet=product_wave, exact=product_wave)

    def markers(self, eta: float) -> MarkerSet:
        return markers_for(self.center, self.radius, eta)

    motion = ONE_PHASE_MOTION
    exact_gradient = staticmethod(product_wave_gradient)


# coupled case: v = cos(pi t/3) [sin 2pi x sin 2pi y, cos 2pi x cos 2pi y]

def coupled_velocity(X, t):
    x, y = _xy(X)
    c = np.cos(PI * t / 3)
    return c * np.column_stack([np.sin(2 * PI * x) * np.sin(2 * PI * y), np.cos(2 * PI * x) * np.cos(2 * PI * y)])


def coupled_velocity_gradient(X, t):
    """(M, 2, 2) with [i, j] = d v_i / d x_j"""
    x, y = _xy(X)
    c = 2 * PI * np.cos(PI * t / 3)
    s1, c1 = np.sin(2 * PI * x), np.cos(2 * PI * x)
    s2, c2 = np.sin(2 * PI * y), np.cos(2 * PI * y)
    J = np.empty((len(x), 2, 2))
    J[:, 0, 0] = c * c1 * s2
    J[:, 0, 1] = c * s1 * c2
    J[:, 1, 0] = -c * s1 * c2
    J[:, 1, 1] = -c * c1 * s2
    return J


def coupled_source(X, t):
    """v_t - Lap v with Lap v = -8 pi^2 v"""
    x, y = _xy(X)
    dc = -PI / 3 * np.sin(PI * t / 3)
    shape = np.column_stack([np.sin(2 * PI * x) * np.sin(2 * PI * y), np.cos(2 * PI * x) * np.cos(2 * PI * y)])
    return dc * shape + 8 * PI ** 2 * coupled_velocity(X, t)


def coupled_neumann(X, t, normals):
    return np.einsum('mij,mj->mi', coupled_velocity_gradient(X, t), normals)


@dataclass
class CoupledCase:
    """Disk R = 0.15 at (0.5, 0.5) moved by its own velocity; returns to the disk at T = 3"""
    center: tuple = (0.5, 0.5)
    radius: float = 0.15
    T: float = COUPLED_T

    def problem(self) -> CoupledProblem:
        return CoupledProblem(source=coupled_source, neumann=coupled_neumann, exact=coupled_velocity)

    def markers(self, eta: float) -> MarkerSet:
        return markers_for(self.center, self.radius, eta)

    def motion(self, max_substep: Optional[float] = None) -> VelocityMotion:
        return VelocityMotion(coupled_velocity, order=5, max_substep=max_substep or 1.0 / 256)

    exact_gradient = staticmethod(coupled_velocity_gradient)


# two-phase case

def swirl_velocity(X, t):
    x, y = _xy(X)
    c = np.cos(PI * t / 3)
    return c * np.column_stack([np.sin(PI * x) ** 2 * np.sin(2 * PI * y), -np.sin(PI * y) ** 2 * np.sin(2 * PI * x)])


@dataclass
class TwoPhaseCase:
    """Disk R = 0.15 at (0.5, 0.75) stretched by a swirl; nu1 = 1000 inside, nu2 = 1 outside"""
    center: tuple = (0.5, 0.75)
    radius: float = 0.15
    nu1: float = 1000.0
    nu2: float = 1.0
    T: float = TWO_PHASE_T

    def problem(self) -> TwoPhaseProblem:
        nu1, nu2 = self.nu1, self.nu2

        def jump(X, t):
            return product_wave(X, t) - exp_wave(X, t)

        def flux_jump(X, t, normals):
            g1 = product_wave_gradient(X, t)
            g2 = exp_wave_gradient(X, t)
            return np.sum((nu1 * g1 - nu2 * g2) * normals, axis=1)

        data = TwoPhaseData(f1=product_wave_source(nu1), f2=exp_wave_source(nu2), g_D=jump, g_N=flux_jump,
                            outer=exp_wave)
        return TwoPhaseProblem(data=data, exact1=product_wave, exact2=exp_wave, nus=(nu1, nu2))

    def markers(self, eta: float) -> MarkerSet:
        return markers_for(self.center, self.radius, eta)

    def motion(self, max_substep: Optional[float] = None) -> VelocityMotion:
        return VelocityMotion(swirl_velocity, order=5, max_substep=max_substep or 1.0 / 256)

    velocity = staticmethod(swirl_velocity)
    gradients = (product_wave_gradient, exp_wave_gradient)


# topological case

def two_disk_phi(X, t):
    x, y = _xy(X)
    d1 = np.hypot(x - 0.5, y - (0.75 - 0.5 * t))
    d2 = np.hypot(x - 0.5, y - (0.25 + 0.5 * t))
    return np.minimum(d1, d2) - 0.15


@dataclass
class TopologicalCase:
    """Two disks of radius 0.15 merging and separating again; phi(., 0) = phi(., 1)"""
    T: float = TOPOLOGICAL_T

    def problem(self) -> HeatProblem:
        return HeatProblem(source=product_wave_source(), dirichlet=product_wave, exact=product_wave)

    def level_set(self, h: float) -> LevelSetGeometry:
        return LevelSetGeometry(phi=two_disk_phi, band=h / 4)

    exact_gradient = staticmethod(product_wave_gradient)


CASES = {
    "one-phase": OnePhaseCase,
    "coupled": CoupledCase,
    "two-phase": TwoPhaseCase,
    "topological": TopologicalCase,
}


def get_case(case_id: str):
    """Case object for an id"""
    if case_id not in CASES:
        raise ValueError(f"unknown case '{case_id}', expected one of {tuple(CASES)}")
    return CASES[case_id]()
