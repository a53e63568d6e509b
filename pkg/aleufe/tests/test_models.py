import math

import pytest
from pydantic import ValidationError

from aleufe.models import CaseConfig, ConvergenceReport, ErrorRecord


def test_case_config_defaults():
    cfg = CaseConfig(case="one-phase", k=3, h=1 / 16)
    assert cfg.tau == pytest.approx(1 / 16)
    assert cfg.eta == pytest.approx(1 / 32)
    assert cfg.n_cells == 16
    assert cfg.label == "one-phase-k3-h1_16"


@pytest.mark.parametrize("kwargs", [
    {"case": "three-phase", "h": 1 / 16},
    {"case": "one-phase", "k": 5, "h": 1 / 16},
    {"case": "one-phase", "h": 0.3},
    {"case": "one-phase", "h": 1 / 16, "tau": 1 / 32},
    {"case": "one-phase", "h": 1 / 16, "solver": "multigrid"},
])
def test_case_config_rejects(kwargs):
    with pytest.raises(ValidationError):
        CaseConfig(**kwargs)


def test_unequal_tau_when_allowed():
    cfg = CaseConfig(case="coupled", h=1 / 16, tau=1 / 64, allow_unequal=True)
    assert cfg.tau == pytest.approx(1 / 64)


def test_rates_between_halvings():
    report = ConvergenceReport(case="one-phase", k=3, records=[
        ErrorRecord(h=1 / 32, tau=1 / 32, errors={"eN": 1.25e-3}),
        ErrorRecord(h=1 / 16, tau=1 / 16, errors={"eN": 1e-2}),
        ErrorRecord(h=1 / 128, tau=1 / 128, errors={"eN": 1e-4}),
    ])
    rates = report.rates()["eN"]
    assert rates[0] is None
    assert rates[1] == pytest.approx(3.0)
    # 1/32 -> 1/128 is not a halving
    assert rates[2] is None


def test_rows_are_ordered_coarse_to_fine():
    report = ConvergenceReport(case="topological", k=2, records=[
        ErrorRecord(h=1 / 32, tau=1 / 32, errors={"e0": 1.21e-5, "e1": 2e-3}),
        ErrorRecord(h=1 / 16, tau=1 / 16, errors={"e0": 1.21e-5 * 2 ** 2.03, "e1": 4e-3}),
    ])
    rows = report.to_rows()
    assert [r.h for r in rows] == [1 / 16, 1 / 32]
    assert rows[1].rates["e0"] == pytest.approx(2.03)
    assert rows[1].rates["e1"] == pytest.approx(1.0)
    assert report.norms() == ["e0", "e1"]


def test_missing_norm_has_no_rate():
    report = ConvergenceReport(case="coupled", k=2, records=[
        ErrorRecord(h=1 / 16, tau=1 / 16, errors={"e0": 1e-3}),
        ErrorRecord(h=1 / 32, tau=1 / 32, errors={"e0": 2.5e-4, "e1": 1e-2}),
    ])
    rates = report.rates()
    assert rates["e0"][1] == pytest.approx(2.0)
    assert rates["e1"] == [None, None]
    assert not math.isnan(rates["e0"][1])
