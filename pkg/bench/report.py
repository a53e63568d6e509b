"""
Convergence tables: CSV for downstream plotting and an aligned text rendering
"""
import csv
import logging
from fractions import Fraction
from pathlib import Path
from typing import List, Optional

from aleufe.models import ConvergenceReport, ConvergenceRow

logger = logging.getLogger(__name__)


def level_label(h: float) -> str:
    """1/N label of a mesh size"""
    frac = Fraction(h).limit_denominator(4096)
    return f"{frac.numerator}/{frac.denominator}" if frac.numerator == 1 else f"{h:g}"


def _fmt_rate(rate: Optional[float]) -> str:
    return "-" if rate is None else f"{rate:.2f}"


def format_table(report: ConvergenceReport) -> str:
    """
    Aligned text table with one error and one rate column per norm

    Args:
        report: Errors of a refinement sweep

    Returns:
        Multi-line string
    """
    rows: List[ConvergenceRow] = report.to_rows()
    norms = report.norms()
    header = ["h=tau"]
    for name in norms:
        header += [name, "rate"]
    body = []
    for row in rows:
        line = [level_label(row.h)]
        for name in norms:
            err = row.errors.get(name)
            line += ["-" if err is None else f"{err:.2e}", _fmt_rate(row.rates.get(name))]
        body.append(line)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]

    def render(cells):
        return "  ".join(c.rjust(w) for c, w in zip(cells, widths))

    rule = "-" * (sum(widths) + 2 * (len(widths) - 1))
    title = f"{report.case} (k={report.k})"
    return "\n".join([title, rule, render(header), rule] + [render(r) for r in body] + [rule])


def write_csv(report: ConvergenceReport, path) -> Path:
    """Write table.csv: level, h, then error and rate per norm"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    norms = report.norms()
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(["level", "h"] + [c for n in norms for c in (n, f"{n}_rate")])
        for row in report.to_rows():
            cells = [level_label(row.h), repr(row.h)]
            for name in norms:
                err = row.errors.get(name)
                rate = row.rates.get(name)
                cells += ["" if err is None else repr(err), "" if rate is None else f"{rate:.6f}"]
            writer.writerow(cells)
    return path


def convergence_table(report: ConvergenceReport, output_dir=None) -> str:
    """
    Render a convergence report and optionally write table.csv

    Args:
        report: Errors over consecutive refinement levels
        output_dir: Directory for table.csv (None writes nothing)

    Returns:
        The aligned text table
    """
    if len(report.records) < 2:
        logger.warning(f"⚠️  convergence table of {report.case} has {len(report.records)} level(s), no rates")
    text = format_table(report)
    if output_dir is not None:
        path = write_csv(report, Path(output_dir) / "table.csv")
        logger.info(f"convergence table written to {path}")
    return text
