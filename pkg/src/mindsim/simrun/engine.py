"""Wires the switch model together and replays a trace through it.

Trace order is the switch's serialization order.  Event ``k`` is admitted
at ``max(ready[blade], admitted[k-1])``: each compute blade has one
outstanding fault at a time, and a directory region additionally
serializes the transitions queued on it.  Epoch boundaries fire before any
event admitted at or after them.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field

from mindsim import switchres
from mindsim.addrspace import AddressSpace, VmaRange
from mindsim.coherence import (
    AccessOutcome,
    CoherenceEngine,
    Directory,
    InvalRecord,
    Served,
    Tag,
    WritebackRecord,
)
from mindsim.errors import CapacityError, OutOfMemoryError, TraceError
from mindsim.fabric import Fabric
from mindsim.protection import READ_WRITE, Access, ProtectionTable
from mindsim.simrun.config import SimConfig
from mindsim.simrun.metrics import EpochRow, latency_stats
from mindsim.simrun.trace import AccessEvent, Op, Ref
from mindsim.splitctl import BoundedSplitter, SlotPool, SplitReport
from mindsim.switchres import SwitchBudget

EpochHook = Callable[[SplitReport, "Simulator"], None]


@dataclass
class _EpochCounters:
    start: float
    accesses: int = 0
    local_hits: int = 0
    remote: int = 0
    denied: int = 0
    invalidations: int = 0
    stale: int = 0
    flushed: int = 0
    false_inv: int = 0
    writebacks: int = 0  # coherence-engine totals at epoch start
    resets: int = 0
    latencies: list[float] = field(default_factory=list)


@dataclass
class RunResult:
    rows: list[EpochRow]
    summary: dict
    reads: dict[int, Tag]
    decisions: dict[int, tuple[bool, str | None]]
    bindings: dict[str, tuple[int, int] | None]
    final_values: dict[int, Tag]
    log: list[InvalRecord | WritebackRecord]
    reset_seqs: set[int]

    @property
    def exit_status(self) -> int:
        return self.summary["exit_status"]


class Simulator:
    def __init__(
        self,
        config: SimConfig,
        *,
        log: bool = False,
        check_invariants: bool = False,
        on_epoch: EpochHook | None = None,
    ) -> None:
        self.config = config
        self.budget = SwitchBudget(config.dir_capacity, config.rule_capacity)
        self.addrspace = AddressSpace(config.page_size, self.budget)
        for _ in range(config.memory_blades):
            self.addrspace.register_memory_blade(config.blade_capacity)
        self.protection = ProtectionTable(config.page_size, self.budget)
        self.fabric = Fabric(config.latency, config.reliability)
        self.directory = Directory(config.page_size, config.top_region)
        self.slots = SlotPool(self.budget)
        self.splitter = BoundedSplitter(config.splitter(), self.directory, self.slots, self.addrspace)
        self.coherence = CoherenceEngine(
            self.addrspace, self.protection, self.fabric, self.directory, self.splitter, config.cache_pages, log
        )
        self.splitter.reset_hook = self.coherence.reset_entry
        self.check_invariants = check_invariants
        self.on_epoch = on_epoch

        self.bindings: dict[str, VmaRange | None] = {}
        self.ready: dict[int, float] = {}
        self.clock = 0.0
        self.events = 0
        self.rows: list[EpochRow] = []
        self.epoch = self._fresh_epoch(0.0)
        self.next_boundary = config.epoch_us
        self.totals: Counter[str] = Counter()
        self.transitions: Counter[str] = Counter()
        self.reads: dict[int, Tag] = {}
        self.decisions: dict[int, tuple[bool, str | None]] = {}
        self.written: set[int] = set()
        self.reset_seqs: set[int] = set()
        self.failed_allocs = 0

    # -- epochs ------------------------------------------------------------------

    def _close_epoch(self, end: float, report: SplitReport | None) -> None:
        e = self.epoch
        mean, median, p99 = latency_stats(e.latencies)
        span = end - e.start
        row = EpochRow(
            epoch=len(self.rows),
            t_start_us=e.start,
            t_end_us=end,
            live_entries=len(self.directory),
            splits=report.splits if report else 0,
            merges=report.merges if report else 0,
            deferred_splits=report.deferred if report else 0,
            c=self.splitter.c,
            threshold=report.threshold if report else float("inf"),
            false_invalidations=e.false_inv,
            accesses=e.accesses,
            local_hits=e.local_hits,
            remote_accesses=e.remote,
            denied=e.denied,
            invalidations_sent=e.invalidations,
            stale_invalidations=e.stale,
            pages_flushed=e.flushed,
            writebacks=self.coherence.writebacks - e.writebacks,
            resets=self.coherence.resets - e.resets,
            capacity_pressure=report.capacity_pressure if report else 0,
            lat_mean_us=mean,
            lat_median_us=median,
            lat_p99_us=p99,
            iops=e.accesses / (span * 1e-6) if span > 0 else 0.0,
            slot_utilization=self.slots.utilization,
            rule_utilization=self.budget.utilization(switchres.PROTECTION),
        )
        self.rows.append(row)
        self.epoch = self._fresh_epoch(end)

    def _fresh_epoch(self, start: float) -> _EpochCounters:
        return _EpochCounters(start, writebacks=self.coherence.writebacks, resets=self.coherence.resets)

    def _advance(self, now: float) -> None:
        while now >= self.next_boundary:
            boundary = self.next_boundary
            report = self.splitter.end_epoch()
            self._close_epoch(boundary, report)
            if self.on_epoch is not None:
                self.on_epoch(report, self)
            self.next_boundary += self.config.epoch_us

    # -- events ------------------------------------------------------------------

    def resolve(self, ref: Ref, seq: int) -> int:
        if ref.name is None:
            return ref.offset
        if ref.name not in self.bindings:
            raise TraceError(seq, f"${ref.name} is not bound by an earlier ALLOC")
        vma = self.bindings[ref.name]
        if vma is None:
            raise TraceError(seq, f"${ref.name} refers to a failed allocation")
        return vma.base + ref.offset

    def step(self, event: AccessEvent) -> AccessOutcome | None:
        blade = event.blade
        now = max(self.ready.get(blade, 0.0), self.clock)
        self._advance(now)
        self.clock = now
        self.events += 1
        if event.op in (Op.R, Op.W):
            out = self._access(event, now)
            self.ready[blade] = now + out.latency
        else:
            self._control(event)
            out = None
            self.ready[blade] = now + self.config.latency.control_rpc
        if self.check_invariants:
            problems = self.coherence.check_invariants()
            if problems:
                raise AssertionError(f"seq {event.seq}: {problems}")
        return out

    def _access(self, event: AccessEvent, now: float) -> AccessOutcome:
        access = Access.READ if event.op is Op.R else Access.WRITE
        vaddr = self.resolve(event.ref, event.seq)
        out = self.coherence.handle_access(event.blade, event.pdid, vaddr, access, now, event.seq)
        e = self.epoch
        self.decisions[event.seq] = (out.served is not Served.DENIED, out.deny.value if out.deny else None)
        if out.served is Served.DENIED:
            e.denied += 1
            self.totals["denied"] += 1
            out.latency = self.config.latency.control_rpc
            return out
        page = vaddr & ~(self.config.page_size - 1)
        if access is Access.READ:
            self.reads[event.seq] = out.value
        else:
            self.written.add(page)
        e.accesses += 1
        e.latencies.append(out.latency)
        if out.served is Served.LOCAL:
            e.local_hits += 1
        else:
            e.remote += 1
            prev, new = out.transition
            self.transitions[f"{prev.value}->{new.value}"] += 1
        e.invalidations += out.invalidations_sent
        e.stale += out.stale_invalidations
        e.flushed += out.pages_flushed
        e.false_inv += out.false_invalidations
        if out.resets:
            self.reset_seqs.add(event.seq)
        return out

    def _control(self, event: AccessEvent) -> None:
        if event.op is Op.ALLOC:
            try:
                vma = self.addrspace.alloc_vma(event.pdid, event.size)
            except OutOfMemoryError:
                self.failed_allocs += 1
                self.bindings[event.name] = None
                return
            try:
                self.protection.set_permission(event.pdid, vma.base, vma.length, READ_WRITE)
            except CapacityError:
                self.addrspace.free_vma(vma)
                self.failed_allocs += 1
                self.splitter.note_pressure()
                self.bindings[event.name] = None
                return
            self.bindings[event.name] = vma
        elif event.op is Op.FREE:
            vma = self.bindings.get(event.ref.name)
            if event.ref.name not in self.bindings:
                raise TraceError(event.seq, f"${event.ref.name} is not bound by an earlier ALLOC")
            if vma is None or self.addrspace.vma_at(vma.base) != vma:
                self.totals["invalid_frees"] += 1
                return
            self.protection.revoke_all(vma.base, vma.length)
            self.addrspace.free_vma(vma)
            for entry in self.directory.within(vma.base, vma.end):
                self.coherence.reset_entry(entry, event.seq)
            # split siblings left in the same top-level blocks now cover nothing
            top = self.config.top_region
            self.splitter.reclaim_orphans(vma.base // top * top, -(-vma.end // top) * top)
        elif event.op is Op.SETPERM:
            vaddr = self.resolve(event.ref, event.seq)
            vma = self.addrspace.vma_at(vaddr)
            if vma is None:
                self.totals["setperm_without_vma"] += 1
                return
            try:
                self.protection.set_permission(event.pdid, vma.base, vma.length, event.pc)
            except CapacityError:
                self.splitter.note_pressure()

    # -- driver ------------------------------------------------------------------

    def run(self, events: Iterable[AccessEvent]) -> RunResult:
        for event in events:
            self.step(event)
        return self.finish()

    def finish(self) -> RunResult:
        makespan = max([self.clock, *self.ready.values()])
        if self.events:
            self._close_epoch(max(makespan, self.epoch.start), None)
        rows = self.rows
        accesses = sum(r.accesses for r in rows)
        pressure = self.splitter.capacity_pressure
        summary = {
            "events": self.events,
            "accesses": accesses,
            "local_hits": sum(r.local_hits for r in rows),
            "remote_accesses": sum(r.remote_accesses for r in rows),
            "denied": sum(r.denied for r in rows),
            "invalidations_sent": sum(r.invalidations_sent for r in rows),
            "stale_invalidations": sum(r.stale_invalidations for r in rows),
            "pages_flushed": sum(r.pages_flushed for r in rows),
            "false_invalidations": sum(r.false_invalidations for r in rows),
            "writebacks": self.coherence.writebacks,
            "resets": self.coherence.resets,
            "splits": sum(r.splits for r in rows),
            "merges": sum(r.merges for r in rows),
            "deferred_splits": sum(r.deferred_splits for r in rows),
            "capacity_pressure": pressure,
            "failed_allocations": self.failed_allocs,
            "transitions": dict(sorted(self.transitions.items())),
            "messages_sent": {k.value: v for k, v in sorted(self.fabric.sent.items(), key=lambda kv: kv[0].value)},
            "messages_lost": {k.value: v for k, v in sorted(self.fabric.lost.items(), key=lambda kv: kv[0].value)},
            "makespan_us": makespan,
            "iops": accesses / (makespan * 1e-6) if makespan > 0 else 0.0,
            "epochs": len(rows),
            "live_entries": len(self.directory),
            "final_c": self.splitter.c,
            "fairness_index": self.addrspace.fairness_index(),
            "digests": self.digests(),
            "exit_status": 2 if pressure else 0,
        }
        return RunResult(
            rows=rows,
            summary=summary,
            reads=self.reads,
            decisions=self.decisions,
            bindings={k: (v.base, v.length) if v else None for k, v in self.bindings.items()},
            final_values={p: self.coherence.coherent_value(p) for p in sorted(self.written)},
            log=self.coherence.log,
            reset_seqs=self.reset_seqs,
        )

    def digests(self) -> dict[str, str]:
        def digest(lines: Iterable[str]) -> str:
            h = hashlib.sha256()
            for line in lines:
                h.update(line.encode())
                h.update(b"\n")
            return h.hexdigest()[:16]

        directory = (
            f"{e.region.base:x}/{e.region.size:x} {e.state.value} {sorted(e.sharers)} {e.owner}"
            for e in self.directory
        )
        memory = (f"{k} {v}" for k, v in sorted(self.coherence.memory.items()))
        protection = (f"{p.pdid} {p.vbase:x}/{p.vlen:x} {p.pc}" for p in self.protection.entries())
        return {"directory": digest(directory), "memory": digest(memory), "protection": digest(protection)}


def simulate(config: SimConfig, events: Iterable[AccessEvent], **kwargs) -> RunResult:
    return Simulator(config, **kwargs).run(events)
