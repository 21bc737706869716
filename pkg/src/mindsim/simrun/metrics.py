"""Per-epoch metrics rows and their CSV / JSON serialization.

Column order is part of the output contract; ``COLUMNS`` is the source of
truth and the README lists it.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import astuple, dataclass, fields
from typing import TextIO

import numpy as np


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    t_start_us: float
    t_end_us: float
    live_entries: int
    splits: int
    merges: int
    deferred_splits: int
    c: float
    threshold: float
    false_invalidations: int
    accesses: int
    local_hits: int
    remote_accesses: int
    denied: int
    invalidations_sent: int
    stale_invalidations: int
    pages_flushed: int
    writebacks: int
    resets: int
    capacity_pressure: int
    lat_mean_us: float
    lat_median_us: float
    lat_p99_us: float
    iops: float
    slot_utilization: float
    rule_utilization: float


COLUMNS = tuple(f.name for f in fields(EpochRow))


def latency_stats(samples: list[float]) -> tuple[float, float, float]:
    """(mean, median, p99) in microseconds; zeros for an empty epoch."""
    if not samples:
        return 0.0, 0.0, 0.0
    arr = np.asarray(samples, dtype=float)
    return float(arr.mean()), float(np.median(arr)), float(np.percentile(arr, 99))


def format_value(value: object) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return f"{value:.6f}".rstrip("0").rstrip(".") or "0"
    return str(value)


def write_csv(rows: list[EpochRow], out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow(format_value(v) for v in astuple(row))


def csv_text(rows: list[EpochRow]) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()


def _jsonable(value: object) -> object:
    if isinstance(value, float):
        return "inf" if math.isinf(value) else round(value, 6)
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def summary_json(summary: dict) -> str:
    return json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n"
