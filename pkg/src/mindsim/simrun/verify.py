"""Run a trace through both the simulator and the oracle and diff them."""

from __future__ import annotations

from collections.abc import Sequence

from mindsim.oracle import DiffReport, compare, replay
from mindsim.simrun.config import SimConfig
from mindsim.simrun.engine import RunResult, Simulator
from mindsim.simrun.trace import AccessEvent


def verify(config: SimConfig, events: Sequence[AccessEvent], **kwargs) -> tuple[DiffReport, RunResult]:
    result = Simulator(config, log=True, **kwargs).run(events)
    expected = replay(events, result.bindings, config.page_size)
    report = compare(result, expected, metric_false=result.summary["false_invalidations"])
    return report, result
