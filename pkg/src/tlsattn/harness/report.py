"""Record files: JSON Lines, one object per step followed by the aggregate."""

import json
import os

from tlsattn.errors import InputError

RECORDS_FILE = "records.jsonl"
SUMMARY_FILE = "summary.txt"


def dumps(obj):
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def emit_report(report, out_dir, fmt="records"):
    """Write ``records.jsonl`` (and ``summary.txt`` for fmt='summary')."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, RECORDS_FILE)
        with open(path, "w", newline="\n") as fh:
            for rec in report.records:
                fh.write(dumps(rec) + "\n")
            fh.write(dumps(report.aggregate) + "\n")
        written = [path]
        if fmt == "summary":
            spath = os.path.join(out_dir, SUMMARY_FILE)
            with open(spath, "w") as fh:
                fh.write(summary_table({report.method: report.aggregate}))
            written.append(spath)
    except OSError as exc:
        raise OSError(f"cannot write report to {out_dir}: {exc.strerror or exc}") from exc
    return written


def read_records(path):
    """Return (step records, aggregate) from a records file."""
    steps, aggregate = [], None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            kind = obj.get("record")
            if kind == "step":
                steps.append(obj)
            elif kind == "aggregate":
                aggregate = obj
            else:
                raise InputError(f"{path}:{lineno}: unknown record type {kind!r}")
    if aggregate is None:
        raise InputError(f"{path}: no aggregate record")
    return steps, aggregate


_COLUMNS = [
    ("method", "method", "{}"),
    ("err mean", "output_error_mean", "{:.3e}"),
    ("err p95", "output_error_p95", "{:.3e}"),
    ("tok recall", "token_recall_mean", "{:.4f}"),
    ("blk recall", "block_recall_mean", "{:.4f}"),
    ("planted", "planted_recall_mean", "{:.4f}"),
    ("MB moved", "transfer_bytes_total", None),
    ("xfer ratio", "transfer_reduction_ratio", "{:.4f}"),
    ("lat overlap", "latency_overlap_total", "{:.1f}"),
    ("lat serial", "latency_serial_total", "{:.1f}"),
]


def summary_table(aggregates):
    rows = [[c[0] for c in _COLUMNS]]
    for agg in aggregates.values():
        row = []
        for _, key, fmt in _COLUMNS:
            v = agg.get(key)
            if v is None:
                row.append("-")
            elif key == "transfer_bytes_total":
                row.append(f"{v / 1e6:.2f}")
            else:
                row.append(fmt.format(v))
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in rows]
    return "\n".join(lines) + "\n"
