"""Parameter sweeps: throughput over read/sharing ratios, and the region
size tradeoff between directory entries and false invalidations."""

from __future__ import annotations

import csv
import dataclasses
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import TextIO

from mindsim.simrun.config import SimConfig
from mindsim.simrun.engine import RunResult, simulate
from mindsim.simrun.generator import GeneratorSpec, generate
from mindsim.simrun.metrics import format_value
from mindsim.simrun.trace import AccessEvent


@dataclass(frozen=True)
class GridCell:
    read_ratio: float
    sharing_ratio: float
    blades: int
    iops: float
    lat_mean_us: float
    invalidations_sent: int
    false_invalidations: int


@dataclass(frozen=True)
class TradeoffCell:
    initial_region: int
    epoch_ms: float
    steady_entries: float
    false_invalidations: int
    invalidations_sent: int
    splits: int
    merges: int


def steady_entries(result: RunResult) -> float:
    """Mean live directory entries over the last quarter of epoch rows."""
    rows = result.rows
    if not rows:
        return 0.0
    tail = rows[len(rows) - max(1, len(rows) // 4) :]
    return sum(r.live_entries for r in tail) / len(tail)


def _grid_cell(args: tuple[SimConfig, GeneratorSpec]) -> GridCell:
    config, spec = args
    result = simulate(config, generate(spec))
    s = result.summary
    mean = sum(r.lat_mean_us * r.accesses for r in result.rows) / max(s["accesses"], 1)
    return GridCell(
        spec.read_ratio, spec.sharing_ratio, spec.blades, s["iops"], mean,
        s["invalidations_sent"], s["false_invalidations"],
    )


def _tradeoff_cell(args: tuple[SimConfig, Sequence[AccessEvent]]) -> TradeoffCell:
    config, events = args
    result = simulate(config, events)
    s = result.summary
    return TradeoffCell(
        config.initial_region, config.epoch_ms, steady_entries(result),
        s["false_invalidations"], s["invalidations_sent"], s["splits"], s["merges"],
    )


def _map(fn, jobs, workers: int):
    if workers <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def sweep_throughput_grid(
    read_ratios: Sequence[float],
    sharing_ratios: Sequence[float],
    blades: int = 8,
    config: SimConfig | None = None,
    spec: GeneratorSpec | None = None,
    workers: int = 1,
) -> list[GridCell]:
    """One run per (read, sharing) cell, all from the same base seed."""
    config = config or SimConfig()
    spec = spec or GeneratorSpec(seed=config.seed, page_size=config.page_size)
    jobs = [
        (config, dataclasses.replace(spec, read_ratio=r, sharing_ratio=s, blades=blades))
        for s in sharing_ratios
        for r in read_ratios
    ]
    return _map(_grid_cell, jobs, workers)


def sweep_splitting_tradeoff(
    events: Sequence[AccessEvent],
    initial_regions: Sequence[int],
    epoch_ms: Sequence[float] | None = None,
    config: SimConfig | None = None,
    workers: int = 1,
) -> list[TradeoffCell]:
    """Replay one trace under every (initial region, epoch length) setting."""
    config = config or SimConfig()
    epochs = epoch_ms or [config.epoch_ms]
    jobs = [
        (dataclasses.replace(config, initial_region=size, epoch_ms=ms), events)
        for ms in epochs
        for size in initial_regions
    ]
    return _map(_tradeoff_cell, jobs, workers)


def write_cells(cells: Sequence[GridCell] | Sequence[TradeoffCell], out: TextIO) -> None:
    if not cells:
        return
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(f.name for f in dataclasses.fields(cells[0]))
    for cell in cells:
        writer.writerow(format_value(v) for v in dataclasses.astuple(cell))
