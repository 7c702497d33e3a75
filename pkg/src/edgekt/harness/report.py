"""Consolidate the summary.json files under a run directory into one table."""

import csv
import io
import json
import os

from ..errors import DataError

COLUMNS = ["run", "command", "model", "params", "ratio", "all", "old", "new", "seen", "unseen",
           "best_epoch", "convergence_epoch", "convergence_steps"]


def _test_acc(final, name):
    v = final.get(f"test/{name}")
    return "" if v is None else f"{v:.2f}"


def _row(run, summary, final, extra=None):
    row = {c: "" for c in COLUMNS}
    row.update(run=run, command=summary.get("command", ""), model=summary.get("model", ""))
    for k in ("params", "best_epoch", "convergence_epoch", "convergence_steps"):
        if k in summary:
            row[k] = summary[k]
    if "ratio" in summary:
        row["ratio"] = f"{summary['ratio']:.2f}"
    for name in ("all", "old", "new", "seen", "unseen"):
        row[name] = _test_acc(final, name)
    row.update(extra or {})
    return row


def summary_rows(run, summary):
    command = summary.get("command")
    if command == "kt-incremental":
        rows = []
        for variant in ("with-kt", "without-kt"):
            if variant in summary:
                s = summary[variant]
                rows.append(_row(f"{run}:{variant}", summary, s["final"],
                                 {k: s[k] for k in ("best_epoch", "convergence_epoch",
                                                    "convergence_steps")}))
        return rows
    if command == "kt-unseen":
        s = summary["dependent"]
        return [_row(f"{run}:independent", summary, s["before"]),
                _row(f"{run}:dependent", summary, s["final"],
                     {k: s[k] for k in ("best_epoch", "convergence_epoch", "convergence_steps")})]
    return [_row(run, summary, summary.get("final", {}))]


def collect(run_dir):
    if not os.path.isdir(run_dir):
        raise DataError(f"run directory {run_dir} does not exist")
    rows = []
    for root, dirs, files in os.walk(run_dir):
        dirs.sort()
        if "summary.json" in files:
            with open(os.path.join(root, "summary.json"), encoding="utf-8") as fh:
                try:
                    summary = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise DataError(f"{root}/summary.json: {exc}") from None
            rows += summary_rows(os.path.relpath(root, run_dir), summary)
    if not rows:
        raise DataError(f"no summary.json found under {run_dir}")
    return rows


def format_table(rows):
    widths = {c: max(len(c), *(len(str(r[c])) for r in rows)) for c in COLUMNS}
    lines = ["  ".join(c.ljust(widths[c]) for c in COLUMNS).rstrip()]
    for r in rows:
        lines.append("  ".join(str(r[c]).ljust(widths[c]) for c in COLUMNS).rstrip())
    return "\n".join(lines) + "\n"


def write_report(run_dir):
    """Write report.csv and report.txt into ``run_dir``; return (text, rows)."""
    rows = collect(run_dir)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    with open(os.path.join(run_dir, "report.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
    text = format_table(rows)
    with open(os.path.join(run_dir, "report.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return text, rows
