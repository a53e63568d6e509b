"""
BDF / SBDF coefficient tables and the ring of past time-step records
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Deque, Dict, Iterator, List, Optional, Tuple

import numpy as np

from aleufe.exceptions import NonuniformStep, UnsupportedOrder

logger = logging.getLogger(__name__)

SUPPORTED_ORDERS = (2, 3, 4)

_BDF_TABLE: Dict[int, Tuple[Fraction, ...]] = {
    2: (Fraction(3, 2), Fraction(-2), Fraction(1, 2)),
    3: (Fraction(11, 6), Fraction(-3), Fraction(3, 2), Fraction(-1, 3)),
    4: (Fraction(25, 12), Fraction(-4), Fraction(3), Fraction(-4, 3), Fraction(1, 4)),
}

_SBDF_B_TABLE: Dict[int, Tuple[Fraction, ...]] = {
    2: (Fraction(2), Fraction(-1)),
    3: (Fraction(3), Fraction(-3), Fraction(1)),
    4: (Fraction(4), Fraction(-6), Fraction(4), Fraction(-1)),
}


def _check_order(k: int) -> None:
    if k not in SUPPORTED_ORDERS:
        raise UnsupportedOrder(f"order k={k} not supported, expected one of {SUPPORTED_ORDERS}")


@dataclass(frozen=True)
class BDFScheme:
    """Backward differentiation formula of order k: (1/tau) sum_i lambda_i u^{n-i} ~ u'(t_n)"""
    k: int
    lambdas: Tuple[Fraction, ...]

    @property
    def coefficients(self) -> np.ndarray:
        """lambda_0..lambda_k as floats"""
        return np.array([float(c) for c in self.lambdas])

    @property
    def lambda0(self) -> float:
        return float(self.lambdas[0])

    def history_coefficients(self) -> np.ndarray:
        """lambda_1..lambda_k as floats"""
        return self.coefficients[1:]

    def apply(self, values, tau: float) -> float:
        """Apply the difference quotient to values ordered u^n, u^{n-1}, ..., u^{n-k}"""
        return float(np.dot(self.coefficients, np.asarray(values, dtype=float)) / tau)


@dataclass(frozen=True)
class SBDFScheme:
    """Semi-implicit BDF of order k: implicit part a_i, explicit extrapolation weights b_i"""
    k: int
    a: Tuple[Fraction, ...]
    b: Tuple[Fraction, ...]

    @property
    def a_float(self) -> np.ndarray:
        return np.array([float(c) for c in self.a])

    @property
    def b_float(self) -> np.ndarray:
        return np.array([float(c) for c in self.b])


def bdf_coeffs(k: int) -> BDFScheme:
    """
    BDF-k coefficients as exact rationals

    Args:
        k: Order, one of 2, 3, 4

    Returns:
        BDFScheme with lambda_0..lambda_k

    Raises:
        UnsupportedOrder: If k is outside {2, 3, 4}
    """
    _check_order(k)
    return BDFScheme(k=k, lambdas=_BDF_TABLE[k])


def sbdf_coeffs(k: int) -> SBDFScheme:
    """
    SBDF-k coefficients as exact rationals (a-row equals the BDF row)

    Args:
        k: Order, one of 2, 3, 4

    Returns:
        SBDFScheme with a_0..a_k and b_1..b_k

    Raises:
        UnsupportedOrder: If k is outside {2, 3, 4}
    """
    _check_order(k)
    return SBDFScheme(k=k, a=_BDF_TABLE[k], b=_SBDF_B_TABLE[k])


def lagrange_time_derivative(times: np.ndarray, t: float) -> np.ndarray:
    """
    Derivatives at t of the Lagrange basis over the given time nodes

    For uniform nodes t_n, t_{n-1}, ..., t_{n-k} evaluated at t_n this returns lambda_i / tau.

    Args:
        times: Time nodes, times[i] = t_{n-i}
        t: Evaluation time

    Returns:
        Array of l_i'(t), one per node
    """
    times = np.asarray(times, dtype=float)
    m = len(times)
    derivs = np.zeros(m)
    for i in range(m):
        others = np.delete(times, i)
        denom = np.prod(times[i] - others)
        total = 0.0
        for j in range(m - 1):
            rest = np.delete(others, j)
            total += np.prod(t - rest)
        derivs[i] = total / denom
    return derivs


@dataclass
class StepRecord:
    """Everything kept about one finished time step"""
    step: int
    time: float
    solution: Any = None
    space: Any = None
    cover: Any = None
    curves: Any = None
    one_step_map: Any = None
    extras: Dict[str, Any] = field(default_factory=dict)


class SolutionHistory:
    """Ring of the last k step records with uniform time spacing"""

    def __init__(self, k: int, tau: float):
        _check_order(k)
        if tau <= 0:
            raise ValueError(f"time step must be positive, got {tau}")
        self.k = k
        self.tau = tau
        self._records: Deque[StepRecord] = deque(maxlen=k)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[StepRecord]:
        return iter(self._records)

    @property
    def warmed_up(self) -> bool:
        return len(self._records) == self.k

    @property
    def latest(self) -> Optional[StepRecord]:
        return self._records[-1] if self._records else None

    def push(self, record: StepRecord) -> "SolutionHistory":
        """
        Append a record, evicting the oldest once more than k are held

        Args:
            record: Record whose time must equal the last time plus tau

        Returns:
            The history itself

        Raises:
            NonuniformStep: If the record breaks uniform spacing
        """
        if self._records:
            expected = self._records[-1].time + self.tau
            if abs(record.time - expected) > 1e-10 * max(1.0, abs(expected)):
                raise NonuniformStep(
                    f"record time {record.time} does not follow {self._records[-1].time} by tau={self.tau}"
                )
        self._records.append(record)
        logger.debug(f"history push: step {record.step}, t={record.time:.6f}, length {len(self._records)}")
        return self

    def back(self, i: int) -> StepRecord:
        """Record i steps behind the step being computed (i=1 is the most recent)"""
        if i < 1 or i > len(self._records):
            raise IndexError(f"history holds {len(self._records)} records, requested offset {i}")
        return self._records[-i]

    def records(self) -> List[StepRecord]:
        """Records from oldest to newest"""
        return list(self._records)
