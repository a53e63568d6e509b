from fractions import Fraction

import numpy as np
import pytest

from aleufe.exceptions import NonuniformStep, UnsupportedOrder
from aleufe.timestep import (
    SolutionHistory,
    StepRecord,
    bdf_coeffs,
    lagrange_time_derivative,
    sbdf_coeffs,
)


def test_bdf3_table_is_exact():
    scheme = bdf_coeffs(3)
    assert scheme.lambdas == (Fraction(11, 6), Fraction(-3), Fraction(3, 2), Fraction(-1, 3))


@pytest.mark.parametrize("k", [2, 3, 4])
def test_bdf_consistency(k):
    lambdas = bdf_coeffs(k).lambdas
    assert sum(lambdas) == 0
    assert sum(i * lam for i, lam in enumerate(lambdas)) == -1


@pytest.mark.parametrize("k", [2, 3, 4])
def test_bdf_differentiates_polynomials_exactly(k):
    scheme = bdf_coeffs(k)
    tau, t_n = 0.1, 0.7
    times = t_n - tau * np.arange(k + 1)
    for degree in range(k + 1):
        values = times ** degree
        expected = degree * t_n ** (degree - 1) if degree else 0.0
        assert scheme.apply(values, tau) == pytest.approx(expected, abs=1e-10)


@pytest.mark.parametrize("k", [2, 3, 4])
def test_sbdf_rows(k):
    scheme = sbdf_coeffs(k)
    assert scheme.a == bdf_coeffs(k).lambdas
    assert sum(scheme.b) == 1
    # extrapolation weights reproduce polynomials of degree < k at t_n
    times = -np.arange(1, k + 1, dtype=float)
    for degree in range(k):
        assert np.dot(scheme.b_float, times ** degree) == pytest.approx(0.0 ** degree, abs=1e-12)


@pytest.mark.parametrize("k", [1, 5])
def test_unsupported_order(k):
    with pytest.raises(UnsupportedOrder):
        bdf_coeffs(k)
    with pytest.raises(UnsupportedOrder):
        sbdf_coeffs(k)


def test_lagrange_derivative_matches_bdf():
    tau = 0.25
    times = 1.0 - tau * np.arange(4)
    np.testing.assert_allclose(lagrange_time_derivative(times, 1.0) * tau, bdf_coeffs(3).coefficients, atol=1e-12)


def test_history_keeps_last_k():
    history = SolutionHistory(k=2, tau=0.5)
    for n in range(4):
        history.push(StepRecord(step=n, time=0.5 * n))
    assert len(history) == 2
    assert history.warmed_up
    assert history.back(1).step == 3
    assert history.back(2).step == 2
    assert [r.step for r in history.records()] == [2, 3]
    with pytest.raises(IndexError):
        history.back(3)


def test_history_rejects_nonuniform_time():
    history = SolutionHistory(k=3, tau=0.1)
    history.push(StepRecord(step=0, time=0.0))
    with pytest.raises(NonuniformStep):
        history.push(StepRecord(step=1, time=0.15))


def test_history_rejects_bad_tau():
    with pytest.raises(ValueError):
        SolutionHistory(k=2, tau=0.0)
