"""CSV reports for the benchmark drivers."""

from __future__ import annotations

import csv
import io
from typing import Iterable, Mapping, TextIO

TERASORT_COLUMNS = ("nodes", "records", "seconds", "ok")
KMEANS_COLUMNS = ("records", "k", "iters", "seconds", "inertia")
LLPR_COLUMNS = ("rtt_ms", "loss", "throughput_wan", "throughput_local", "llpr")

COLUMNS = {"terasort": TERASORT_COLUMNS, "kmeans": KMEANS_COLUMNS, "llpr": LLPR_COLUMNS}


def format_cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if v.is_integer() and abs(v) < 1e15:
            return str(int(v))
        return f"{v:.6f}"
    return str(v)


def write_csv(rows: Iterable[Mapping], columns: Iterable[str], out: TextIO) -> None:
    cols = list(columns)
    w = csv.writer(out, lineterminator="\n")
    w.writerow(cols)
    for row in rows:
        w.writerow([format_cell(row[c]) for c in cols])


def csv_text(rows: Iterable[Mapping], columns: Iterable[str]) -> str:
    buf = io.StringIO()
    write_csv(rows, columns, buf)
    return buf.getvalue()
