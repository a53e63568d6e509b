import csv

import pytest

from aleufe.models import ConvergenceReport, ErrorRecord
from bench.report import convergence_table, format_table, level_label, write_csv

# one-phase k = 3 errors at h = tau = 1/16 ... 1/128
ONE_PHASE_K3 = [6.16e-3, 7.94e-4, 1.00e-4, 1.25e-5]


def _report(errors, name="eN", case="one-phase", k=3):
    records = [ErrorRecord(h=1 / (16 * 2 ** i), tau=1 / (16 * 2 ** i), errors={name: e})
               for i, e in enumerate(errors)]
    return ConvergenceReport(case=case, k=k, records=records)


def test_rate_of_exact_third_order():
    rates = _report([1e-2, 1.25e-3]).rates()["eN"]
    assert rates[1] == pytest.approx(3.0)


def test_equal_errors_give_zero_rate():
    rates = _report([4e-3, 4e-3]).rates()["eN"]
    assert rates[1] == pytest.approx(0.0)


def test_one_phase_rates():
    rates = _report(ONE_PHASE_K3).rates()["eN"]
    assert rates[1:] == pytest.approx([2.95, 2.99, 3.00], abs=0.01)


@pytest.mark.parametrize("h,label", [(1 / 16, "1/16"), (1 / 128, "1/128"), (0.3, "0.3")])
def test_level_label(h, label):
    assert level_label(h) == label


def test_format_table():
    text = format_table(_report(ONE_PHASE_K3))
    lines = text.splitlines()
    assert lines[0] == "one-phase (k=3)"
    assert "eN" in lines[2] and "rate" in lines[2]
    assert "6.16e-03" in text
    assert "2.95" in text
    # first level has no rate
    assert lines[4].split()[-1] == "-"


def test_write_csv(tmp_path):
    path = write_csv(_report([1e-2, 1.25e-3], name="e0", case="topological"), tmp_path / "out" / "table.csv")
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["level", "h", "e0", "e0_rate"]
    assert rows[1][0] == "1/16"
    assert rows[1][3] == ""
    assert float(rows[2][3]) == pytest.approx(3.0)


def test_convergence_table_writes_when_asked(tmp_path, caplog):
    report = _report([1e-2])
    with caplog.at_level("WARNING"):
        text = convergence_table(report, tmp_path)
    assert (tmp_path / "table.csv").exists()
    assert "1/16" in text
    assert "no rates" in caplog.text
