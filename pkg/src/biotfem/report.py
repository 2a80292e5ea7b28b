"""CSV and markdown emission.  Both formats are rendered from the same rows."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Sequence

from .biot import ErrorReport


def fmt_err(x: float | None) -> str:
    return "" if x is None else f"{x:.6e}"


def fmt_rate(x: float | None) -> str:
    return "" if x is None else f"{x:.4f}"


def to_csv(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def to_markdown(header: Sequence[str], rows: Sequence[Sequence[str]], preamble: Sequence[str] = ()) -> str:
    lines = list(preamble)
    if lines:
        lines.append("")
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "|".join("---" for _ in header) + "|")
    for r in rows:
        lines.append("| " + " | ".join(c if c != "" else "-" for c in r) + " |")
    return "\n".join(lines) + "\n"


def write_pair(out: Path, stem: str, header, rows, md_header=None, md_rows=None, preamble=()) -> tuple[Path, Path]:
    out.mkdir(parents=True, exist_ok=True)
    csv_path, md_path = out / f"{stem}.csv", out / f"{stem}.md"
    csv_path.write_bytes(to_csv(header, rows).encode())
    md_path.write_text(to_markdown(md_header or header, md_rows or rows, preamble))
    return csv_path, md_path


# columns of the convergence table and the norm each one reports
CONVERGENCE_COLUMNS = (
    ("pt_Qt", "p_t: (2mu)^-1/2 L2"),
    ("pp_L2", "p_p: L2"),
    ("u_V", "u: (2mu eps, eps)^1/2"),
    ("pp_H1k", "p_p: 1,kappa"),
)


def convergence_rows(report: ErrorReport) -> tuple[list[str], list[list[str]]]:
    header = ["N"]
    for key, _ in CONVERGENCE_COLUMNS:
        header += [key, f"{key}_rate"]
    header += ["pt_L2", "u_H1"]
    rates = {k: report.rates(k) for k, _ in CONVERGENCE_COLUMNS}
    rows = []
    for i, N in enumerate(report.N):
        row = [str(N)]
        for key, _ in CONVERGENCE_COLUMNS:
            row += [fmt_err(report.errors[key][i]), fmt_rate(rates[key][i])]
        row += [fmt_err(report.errors["pt_L2"][i]), fmt_err(report.errors["u_H1"][i])]
        rows.append(row)
    return header, rows


def convergence_markdown(report: ErrorReport) -> tuple[list[str], list[list[str]]]:
    header = ["N"]
    for _, label in CONVERGENCE_COLUMNS:
        header += [label, "rate"]
    rates = {k: report.rates(k) for k, _ in CONVERGENCE_COLUMNS}
    rows = []
    for i, N in enumerate(report.N):
        row = [str(N)]
        for key, _ in CONVERGENCE_COLUMNS:
            row += [fmt_err(report.errors[key][i]), fmt_rate(rates[key][i])]
        rows.append(row)
    return header, rows
