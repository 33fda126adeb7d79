"""Result files: metrics CSV, event and violation JSONL, summary JSON.

Floats in CSV are written with 17 significant digits so that a rerun with
the same scenario and seed reproduces the file byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable

import numpy as np

from .engine import RunResult
from .metrics import MetricsRecord

BASE_COLUMNS = ["k", "algo", "disagreement", "root_distance", "sigma_max", "sigma_min",
                "trunc_events_cum", "lyapunov"]
OVERFLOW_MARKER = "overflow"


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def metrics_columns(l: int) -> list[str]:
    return BASE_COLUMNS + [f"avg_x_{j}" for j in range(l)]


def record_row(rec: MetricsRecord) -> list[str]:
    vals = [rec.k, rec.algo, rec.disagreement, rec.root_distance, rec.sigma_max, rec.sigma_min,
            rec.trunc_events_cum, rec.lyapunov]
    return [fmt(v) for v in vals] + [fmt(float(x)) for x in rec.avg_estimate]


def overflow_row(step: int, algo: str, l: int) -> list[str]:
    """Marker appended when a run aborts: ``k`` is the step that overflowed."""
    row = [""] * len(metrics_columns(l))
    row[0], row[1], row[2] = fmt(step), algo, OVERFLOW_MARKER
    return row


def result_rows(res: RunResult, l: int) -> list[list[str]]:
    rows = [record_row(r) for r in res.records]
    if res.overflow_step is not None:
        rows.append(overflow_row(res.overflow_step, res.algo, l))
    return rows


def write_csv(path, header: list[str], rows: Iterable[list[str]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_metrics(path, results: list[RunResult], l: int) -> None:
    """One run, or a paired run interleaved by ``k`` (overflow markers last)."""
    if len(results) == 1:
        rows = result_rows(results[0], l)
    else:
        by_k: dict[int, list[list[str]]] = {}
        for res in results:
            for r in res.records:
                by_k.setdefault(r.k, []).append(record_row(r))
        rows = [row for k in sorted(by_k) for row in by_k[k]]
        rows += [overflow_row(res.overflow_step, res.algo, l) for res in results if res.overflow_step is not None]
    write_csv(path, metrics_columns(l), rows)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _clean(v):
    # JSON has no inf/nan
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def write_jsonl(path, items: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for item in items:
            fh.write(json.dumps(_clean(item), default=_json_default) + "\n")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_clean(obj), default=_json_default, indent=2, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
