"""CSV renderings of simulation reports and summaries."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable

from .simulation import SimReport, Summary

DAY_COLUMNS = [
    "day",
    "active_signatures",
    "tp_generated",
    "fp_generated",
    "tp_caught",
    "fp_raised",
    "update_performed",
    "select_ms",
    "infer_ms",
    "fallback_used",
]

SUMMARY_COLUMNS = [
    "theta",
    "beta",
    "overlap",
    "tp_removed_pct",
    "fp_removed_pct",
    "precision",
    "recall",
    "median_solve_ms",
    "p98_solve_ms",
    "fallback_count",
]

TIMING_COLUMNS = ("select_ms", "infer_ms", "median_solve_ms", "p98_solve_ms")


def _num(x, digits=6) -> str:
    return "" if x is None else f"{x:.{digits}f}"


def _flag(b: bool) -> str:
    return "1" if b else "0"


def day_rows(report: SimReport) -> list[list[str]]:
    return [
        [
            str(r.day),
            str(r.active_signatures),
            str(r.tp_generated),
            str(r.fp_generated),
            str(r.tp_caught),
            str(r.fp_raised),
            _flag(r.update_performed),
            _num(r.select_ms, 3),
            _num(r.infer_ms, 3),
            _flag(r.fallback_used),
        ]
        for r in report.rows
    ]


def summary_row(s: Summary) -> list[str]:
    return [
        repr(float(s.theta)),
        repr(float(s.beta)),
        "on" if s.overlap else "off",
        _num(s.tp_removed_pct),
        _num(s.fp_removed_pct),
        _num(s.precision),
        _num(s.recall),
        _num(s.solve_median_ms, 3),
        _num(s.solve_p98_ms, 3),
        str(s.fallback_count),
    ]


def _render(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def format_days(report: SimReport) -> str:
    return _render(DAY_COLUMNS, day_rows(report))


def format_summaries(summaries: Iterable[Summary]) -> str:
    return _render(SUMMARY_COLUMNS, [summary_row(s) for s in summaries])


def write_days(report: SimReport, path) -> Path:
    path = Path(path)
    path.write_text(format_days(report), encoding="utf-8")
    return path


def write_summaries(summaries: Iterable[Summary], path) -> Path:
    path = Path(path)
    path.write_text(format_summaries(summaries), encoding="utf-8")
    return path


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def cell_stem(theta: float, beta: float, overlap: bool) -> str:
    return f"theta{theta:g}_beta{beta:g}_overlap-{'on' if overlap else 'off'}"
