"""Brute-force reference model for checking the simulator.

The oracle tracks coherence one page at a time with unbounded caches and a
flat ``(pdid, page) -> rights`` map, so it never falsely invalidates
anything and never needs region bookkeeping.  It shares no transition code
with the simulator.  Allocation placement is the simulator's choice, so the
oracle takes the simulator's name bindings as input.

``compare`` also audits the simulator's flush log against a dirty-page
census: for every invalidation the simulator reports, the census knows
which pages the recipient really held dirty in that region.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

from mindsim.coherence import InvalRecord, Tag, WritebackRecord
from mindsim.simrun.trace import AccessEvent, Op

NO_ENTRY = "no-entry"
MISMATCH = "permission-mismatch"


@dataclass
class _PageLine:
    sharers: set[int] = field(default_factory=set)
    owner: int | None = None


@dataclass
class OracleResult:
    reads: dict[int, Tag]
    decisions: dict[int, tuple[bool, str | None]]
    final_values: dict[int, Tag]
    pages: dict[int, int]  # access seq -> page
    writes: list[tuple[int, int, int]]  # (seq, blade, page), allowed writes only
    invalidations: int


class Oracle:
    def __init__(self, page_size: int = 4096) -> None:
        self.page_size = page_size
        self.lines: dict[int, _PageLine] = {}
        self.copies: dict[int, dict[int, Tag]] = {}
        self.memory: dict[int, Tag] = {}
        self.rights: dict[tuple[int, int], tuple[bool, bool]] = {}
        self.live: dict[int, int] = {}  # vma base -> length
        self.invalidations = 0

    def _pages(self, base: int, length: int) -> range:
        return range(base, base + length, self.page_size)

    def _vma_containing(self, vaddr: int) -> tuple[int, int] | None:
        for base, length in self.live.items():
            if base <= vaddr < base + length:
                return base, length
        return None

    def _copy(self, blade: int) -> dict[int, Tag]:
        return self.copies.setdefault(blade, {})

    def check(self, pdid: int, vaddr: int, write: bool) -> str | None:
        rights = self.rights.get((pdid, vaddr - vaddr % self.page_size))
        if rights is None:
            return NO_ENTRY
        readable, writable = rights
        return None if (writable if write else readable) else MISMATCH

    def read(self, blade: int, page: int) -> Tag:
        mine = self._copy(blade)
        if page in mine:
            return mine[page]
        line = self.lines.setdefault(page, _PageLine())
        if line.owner is not None:
            self.memory[page] = self.copies[line.owner][page]
            line.owner = None
        line.sharers.add(blade)
        mine[page] = self.memory.get(page)
        return mine[page]

    def write(self, blade: int, page: int, tag: Tag) -> None:
        line = self.lines.setdefault(page, _PageLine())
        if line.owner is not None and line.owner != blade:
            self.memory[page] = self.copies[line.owner][page]
        for other in line.sharers - {blade}:
            del self.copies[other][page]
            self.invalidations += 1
        line.sharers, line.owner = {blade}, blade
        self._copy(blade)[page] = tag

    def value(self, page: int) -> Tag:
        line = self.lines.get(page)
        if line is not None and line.owner is not None:
            return self.copies[line.owner][page]
        return self.memory.get(page)

    def replay(self, events: Iterable[AccessEvent], bindings: Mapping[str, tuple[int, int] | None]) -> OracleResult:
        reads: dict[int, Tag] = {}
        decisions: dict[int, tuple[bool, str | None]] = {}
        pages: dict[int, int] = {}
        writes: list[tuple[int, int, int]] = []
        for ev in events:
            if ev.op is Op.ALLOC:
                vma = bindings.get(ev.name)
                if vma is not None:
                    self.live[vma[0]] = vma[1]
                    for page in self._pages(*vma):
                        self.rights[(ev.pdid, page)] = (True, True)
            elif ev.op is Op.FREE:
                vma = bindings.get(ev.ref.name)
                if vma is not None and self.live.get(vma[0]) == vma[1]:
                    del self.live[vma[0]]
                    doomed = set(self._pages(*vma))
                    for key in [k for k in self.rights if k[1] in doomed]:
                        del self.rights[key]
            elif ev.op is Op.SETPERM:
                vma = self._vma_containing(_address(ev, bindings))
                if vma is not None:
                    for page in self._pages(*vma):
                        self.rights[(ev.pdid, page)] = (ev.pc.readable, ev.pc.writable)
            else:
                vaddr = _address(ev, bindings)
                page = vaddr - vaddr % self.page_size
                pages[ev.seq] = page
                write = ev.op is Op.W
                deny = self.check(ev.pdid, vaddr, write)
                decisions[ev.seq] = (deny is None, deny)
                if deny is not None:
                    continue
                if write:
                    self.write(ev.blade, page, (ev.blade, ev.seq))
                    writes.append((ev.seq, ev.blade, page))
                else:
                    reads[ev.seq] = self.read(ev.blade, page)
        touched = sorted({p for _, _, p in writes})
        return OracleResult(reads, decisions, {p: self.value(p) for p in touched}, pages, writes, self.invalidations)


def _address(ev: AccessEvent, bindings: Mapping[str, tuple[int, int] | None]) -> int:
    if ev.ref.name is None:
        return ev.ref.offset
    return bindings[ev.ref.name][0] + ev.ref.offset


def replay(events: Iterable[AccessEvent], bindings, page_size: int = 4096) -> OracleResult:
    return Oracle(page_size).replay(events, bindings)


@dataclass(frozen=True)
class Diff:
    kind: str
    seq: int | None
    page: int | None
    detail: str

    def __str__(self) -> str:
        where = [f"seq={self.seq}" if self.seq is not None else "", f"page={self.page:#x}" if self.page is not None else ""]
        return f"{self.kind}: {' '.join(w for w in where if w)} {self.detail}".rstrip()


@dataclass
class DiffReport:
    diffs: list[Diff] = field(default_factory=list)
    census_false_invalidations: int = 0
    reported_false_invalidations: int = 0

    def __bool__(self) -> bool:
        return bool(self.diffs)

    def add(self, kind: str, seq: int | None, page: int | None, detail: str) -> None:
        self.diffs.append(Diff(kind, seq, page, detail))

    def render(self) -> str:
        if not self.diffs:
            return f"no differences (false invalidations: {self.census_false_invalidations})\n"
        lines = [f"{len(self.diffs)} difference(s)"]
        lines += [f"  {d}" for d in self.diffs]
        return "\n".join(lines) + "\n"


def compare(sim, oracle: OracleResult, skip_reads: Iterable[int] = (), metric_false: int | None = None) -> DiffReport:
    """Diff a simulator ``RunResult`` against an oracle replay of the same trace.

    ``skip_reads`` excludes reads that were resolved by a reset.
    ``metric_false`` is the simulator's metric total, checked against the census.
    """
    report = DiffReport()
    skip = set(skip_reads)
    for seq, expect in oracle.decisions.items():
        got = sim.decisions.get(seq)
        if got != expect:
            report.add("protection", seq, oracle.pages[seq], f"simulator {got} oracle {expect}")
    for seq, expect in oracle.reads.items():
        if seq in skip:
            continue
        got = sim.reads.get(seq)
        if got != expect:
            report.add("read", seq, oracle.pages[seq], f"observed {got} expected {expect}")
    for page in sorted(set(oracle.final_values) | set(sim.final_values)):
        got, expect = sim.final_values.get(page), oracle.final_values.get(page)
        if got != expect:
            report.add("final", None, page, f"simulator {got} oracle {expect}")
    _audit_flushes(sim.log, oracle.writes, report)
    if metric_false is not None and metric_false != report.census_false_invalidations:
        report.add(
            "metrics", None, None,
            f"false invalidations in metrics {metric_false} census {report.census_false_invalidations}",
        )
    return report


def _audit_flushes(log, writes, report: DiffReport) -> None:
    """Replay the simulator's flush log against the census of dirty pages."""
    dirty: dict[int, set[int]] = {}  # blade -> dirty pages
    holder: dict[int, int] = {}  # page -> blade holding it dirty
    i = 0
    records = sorted(enumerate(log), key=lambda r: (r[1].seq, r[0]))
    for seq, blade, page in [*writes, (float("inf"), None, None)]:
        # records of an event precede the write that event performs
        while i < len(records) and records[i][1].seq <= seq:
            rec = records[i][1]
            i += 1
            if isinstance(rec, InvalRecord):
                held = {p for p in dirty.get(rec.recipient, ()) if rec.base <= p < rec.base + rec.size}
                false = len(held) - (rec.requested in held)
                report.census_false_invalidations += false
                report.reported_false_invalidations += rec.false_invalidations
                if rec.flushed != len(held) or rec.false_invalidations != false:
                    report.add(
                        "flush", rec.seq, rec.requested,
                        f"blade {rec.recipient} region {rec.base:#x}/{rec.size:#x}: reported "
                        f"{rec.flushed} flushed / {rec.false_invalidations} false, census {len(held)} / {false}",
                    )
                for p in held:
                    del holder[p]
                dirty.get(rec.recipient, set()).difference_update(held)
            elif isinstance(rec, WritebackRecord):
                if holder.get(rec.page) != rec.blade:
                    report.add("writeback", rec.seq, rec.page, f"blade {rec.blade} wrote back a page it did not hold dirty")
                else:
                    del holder[rec.page]
                    dirty[rec.blade].discard(rec.page)
        if blade is None:
            break
        prev = holder.get(page)
        if prev is not None and prev != blade:
            report.add("flush", seq, page, f"blade {blade} wrote while blade {prev} still held it dirty")
            dirty[prev].discard(page)
        holder[page] = blade
        dirty.setdefault(blade, set()).add(page)
