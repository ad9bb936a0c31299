"""CSV / JSON reports, config sidecars and mean +- SD summaries."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .runner import FIELDS, ReportRecord

_INT_FIELDS = {"seed", "capacity", "n_eval", "schema_version"}
_STR_FIELDS = {"dataset", "model", "family", "defense", "attack", "mode", "status", "stage",
               "note"}
SUMMARY_METRICS = ("clean_acc", "clean_f1", "asr", "racc", "adv_f1", "mean_psr_db",
                   "asr_all", "fooling_rate")
SUMMARY_KEYS = ("dataset", "model", "family", "defense", "attack", "mode", "budget_db")


class ReportError(OSError):
    pass


def _cell(value):
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def _parse(name, text):
    if name in _STR_FIELDS:
        return text
    if name in _INT_FIELDS:
        return int(text)
    return float(text)


def records_to_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FIELDS)
    for r in records:
        d = r.to_dict()
        writer.writerow([_cell(d[f]) for f in FIELDS])
    return buf.getvalue()


def records_from_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != FIELDS:
        raise ValueError("not a report CSV (header mismatch)")
    return [ReportRecord(**{f: _parse(f, v) for f, v in zip(FIELDS, row)}) for row in rows[1:]]


def _json_safe(d):
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def records_to_json(records) -> str:
    return json.dumps([_json_safe(r.to_dict()) for r in records], indent=1) + "\n"


def records_from_json(text):
    out = []
    for d in json.loads(text):
        d = {k: (math.nan if v is None else v) for k, v in d.items()}
        out.append(ReportRecord.from_dict(d))
    return out


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".config.txt")


def emit_report(records, path, fmt="csv", config=None):
    """Write ``records`` to ``path`` plus a config-echo sidecar and return
    the report path. ``config`` is an :class:`ExperimentConfig` or text."""
    if not records:
        raise ValueError("refusing to write an empty report")
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be csv or json, got {fmt!r}")
    path = Path(path)
    body = records_to_csv(records) if fmt == "csv" else records_to_json(records)
    echo = config if isinstance(config, str) or config is None else config.echo()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(body)
        if echo is not None:
            sidecar_path(path).write_text(echo)
    except OSError as exc:
        raise ReportError(f"cannot write report {path}: {exc.strerror}") from None
    return path


def read_report(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ReportError(f"cannot read report {path}: {exc.strerror}") from None
    if path.suffix == ".json":
        return records_from_json(text)
    return records_from_csv(text)


def summarize(records, by=SUMMARY_KEYS, metrics=SUMMARY_METRICS):
    """Mean and sample SD (ddof=1) of each metric over seeds for every
    group; failed records are counted but left out of the statistics."""
    groups = OrderedDict()
    for r in records:
        key = tuple(getattr(r, k) for k in by)
        key = tuple(-1.0 if isinstance(v, float) and math.isnan(v) else v for v in key)
        groups.setdefault(key, []).append(r)
    rows = []
    for key, recs in groups.items():
        ok = [r for r in recs if r.status == "ok"]
        row = dict(zip(by, key))
        if "budget_db" in row and row["budget_db"] == -1.0:
            row["budget_db"] = math.nan
        row["n_seeds"] = len(ok)
        row["n_failed"] = len(recs) - len(ok)
        for m in metrics:
            vals = np.array([getattr(r, m) for r in ok], dtype=np.float64)
            vals = vals[~np.isnan(vals)]
            row[f"{m}_mean"] = float(vals.mean()) if vals.size else math.nan
            row[f"{m}_std"] = float(vals.std(ddof=1)) if vals.size > 1 else (
                0.0 if vals.size else math.nan)
        rows.append(row)
    return rows


def summary_to_csv(rows) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = list(rows[0])
    writer.writerow(cols)
    for row in rows:
        writer.writerow([_cell(row[c]) for c in cols])
    return buf.getvalue()


def format_summary(rows, metric="asr"):
    """Human-readable ``mean +- sd`` table for one metric."""
    lines = []
    for row in rows:
        mean, sd = row[f"{metric}_mean"], row[f"{metric}_std"]
        if math.isnan(mean):
            continue
        budget = row.get("budget_db", math.nan)
        b = "clean" if math.isnan(budget) else f"{budget:g} dB"
        lines.append(f"{row['model']:<16} {row['defense']:<10} {row['attack']:<14} {b:>8}  "
                     f"{metric} {mean:.3f} +- {sd:.3f}  (n={row['n_seeds']})")
    return "\n".join(lines)
