"""Results tables laid out as rows = method, columns = dropout."""

from __future__ import annotations

import csv
import io
import json

NO_DROPOUT = "--"


def dropout_label(rate) -> str:
    return NO_DROPOUT if rate is None else f"{float(rate):.1f}"


def results_table(cells) -> dict:
    """Collect ``(method, dropout, value)`` triples into ``{method: {dropout: value}}``.

    Row order follows first appearance; a ``None`` dropout becomes the ``--`` column.
    """
    table: dict = {}
    for method, rate, value in cells:
        table.setdefault(method, {})[dropout_label(rate)] = value
    return table


def _columns(table: dict) -> list[str]:
    cols = sorted({c for row in table.values() for c in row if c != NO_DROPOUT})
    if any(NO_DROPOUT in row for row in table.values()):
        cols.insert(0, NO_DROPOUT)
    return cols


def table_json(table: dict) -> str:
    return json.dumps({"columns": _columns(table), "rows": table}, indent=1, sort_keys=False) + "\n"


def table_csv(table: dict) -> str:
    cols = _columns(table)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", *cols])
    for method, row in table.items():
        w.writerow([method, *("" if row.get(c) is None else f"{row[c]:.4f}" for c in cols)])
    return buf.getvalue()


def report_csv(report) -> str:
    """Flat CSV of one EvalReport: one row per (threshold, bucket)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iou", "bucket", "ap"])
    for t, row in report.ap.items():
        for b, v in row.items():
            w.writerow([f"{t:.2f}", b, "" if v is None else f"{v:.6f}"])
    for b, v in report.map.items():
        w.writerow(["mean", b, "" if v is None else f"{v:.6f}"])
    return buf.getvalue()
