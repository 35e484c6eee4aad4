"""Robustness report rows and their CSV serialization."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..exceptions import FormatError

HEADER = ("model", "comp_type", "n_images", "clean_acc", "vqc", "expressibility", "n_qubits",
          "epsilon", "acc_fgm", "acc_deepfool", "acc_pgd")
NA = "N/A"
FAILED = "FAILED"


@dataclass(frozen=True)
class ReportRow:
    """One (model, epsilon) line; accuracies are percentages."""

    model: str
    comp_type: str
    n_images: int
    clean_acc: float
    vqc: int | None
    expressibility: float | None
    n_qubits: int | None
    epsilon: float
    acc_fgm: float | None
    acc_deepfool: float | None
    acc_pgd: float | None


def format_epsilon(eps: float) -> str:
    return np.format_float_positional(float(eps), trim="-")


def _fmt(value, spec: str) -> str:
    return NA if value is None else format(value, spec)


def format_row(row: ReportRow) -> list[str]:
    return [
        row.model,
        row.comp_type,
        str(int(row.n_images)),
        format(row.clean_acc, ".2f"),
        NA if row.vqc is None else str(int(row.vqc)),
        _fmt(row.expressibility, ".3f"),
        NA if row.n_qubits is None else str(int(row.n_qubits)),
        format_epsilon(row.epsilon),
        _fmt(row.acc_fgm, ".2f"),
        _fmt(row.acc_deepfool, ".2f"),
        _fmt(row.acc_pgd, ".2f"),
    ]


def dumps_report(rows, failure: str | None = None) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(HEADER)
    for row in rows:
        wr.writerow(format_row(row))
    if failure is not None:
        wr.writerow([FAILED, failure] + [""] * (len(HEADER) - 2))
    return buf.getvalue()


def emit_report(rows, path, failure: str | None = None) -> None:
    """Write rows under the fixed header; ``failure`` appends a marker row."""
    rows = list(rows)
    if not rows and failure is None:
        raise FormatError("refusing to write an empty report")
    Path(path).write_text(dumps_report(rows, failure))


def _opt(cell: str, conv):
    return None if cell == NA else conv(cell)


def parse_report(path) -> list[ReportRow]:
    """Read a report CSV back into rows; failure marker rows are skipped."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != HEADER:
        raise FormatError(f"{path}: header must be {','.join(HEADER)}")
    out = []
    for r in rows[1:]:
        if not r or r[0] == FAILED:
            continue
        if len(r) != len(HEADER):
            raise FormatError(f"{path}: row has {len(r)} fields, expected {len(HEADER)}")
        try:
            out.append(ReportRow(
                model=r[0], comp_type=r[1], n_images=int(r[2]), clean_acc=float(r[3]),
                vqc=_opt(r[4], int), expressibility=_opt(r[5], float), n_qubits=_opt(r[6], int),
                epsilon=float(r[7]), acc_fgm=_opt(r[8], float), acc_deepfool=_opt(r[9], float),
                acc_pgd=_opt(r[10], float),
            ))
        except ValueError as exc:
            raise FormatError(f"{path}: bad row {r!r}: {exc}") from None
    return out


def render_table(rows) -> str:
    """Fixed-width text rendering for terminals."""
    cells = [list(HEADER)] + [format_row(r) for r in rows]
    widths = [max(len(c[i]) for c in cells) for i in range(len(HEADER))]
    return "\n".join("  ".join(c[i].ljust(widths[i]) for i in range(len(HEADER))).rstrip() for c in cells) + "\n"
