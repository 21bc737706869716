"""Epoch controller that resizes directory regions with bounded splitting.

At each epoch boundary the threshold is ``t = sum(f_i) / (c * N)`` where
``f_i`` is the false-invalidation count of top-level region ``i`` during the
epoch and ``N`` counts top-level regions overlapping allocated memory.  Any
live region whose own count exceeds ``t`` is halved (never below one page);
quiet buddy pairs with identical coherence state are merged back.  ``c`` is
then nudged so slot utilization stays under the cap.
"""

from __future__ import annotations

import math
from collections import Counter, deque
from collections.abc import Callable
from dataclasses import dataclass, field

from mindsim import switchres
from mindsim._bits import is_pow2, log2
from mindsim.addrspace import AddressSpace
from mindsim.coherence import Directory, DirectoryEntry, Region
from mindsim.switchres import SwitchBudget

UTILIZATION_CAP = 0.95
RAISE_BELOW = 0.50
LOWER_AT = 0.90
C_UP = 1.25
C_DOWN = 1.5
C_MIN = 1.0 / 64


@dataclass(frozen=True)
class SplitterConfig:
    page_size: int = 4096
    top_size: int = 2 << 20
    initial_region: int = 16 << 10
    c: float = 1.0
    epoch_us: float = 100_000.0
    merge_factor: float = 0.5
    adjust_c: bool = True

    def __post_init__(self) -> None:
        for name in ("page_size", "top_size", "initial_region"):
            if not is_pow2(getattr(self, name)):
                raise ValueError(f"{name} must be a power of two")
        if not self.page_size <= self.initial_region <= self.top_size:
            raise ValueError("initial_region must lie between the page size and the top-level size")
        if self.c <= 0 or self.epoch_us <= 0 or self.merge_factor < 0:
            raise ValueError("c and epoch length must be positive, merge_factor nonnegative")

    @property
    def m_pages(self) -> int:
        return self.top_size // self.page_size


class SlotPool:
    """SRAM slot free list plus the base-address -> slot used map."""

    def __init__(self, budget: SwitchBudget) -> None:
        self.budget = budget
        self.capacity = budget.directory_slots
        self.free: deque[int] = deque(range(self.capacity))
        self.used: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self.used)

    @property
    def utilization(self) -> float:
        return len(self.used) / self.capacity

    def allocate(self, base: int) -> int | None:
        if not self.free:
            return None
        if base in self.used:
            raise ValueError(f"region base {base:#x} already holds a slot")
        self.budget.reserve(switchres.DIRECTORY, 1)
        slot = self.free.popleft()
        self.used[base] = slot
        return slot

    def release(self, base: int) -> int:
        slot = self.used.pop(base)
        self.free.append(slot)
        self.budget.release(switchres.DIRECTORY, 1)
        return slot


@dataclass
class EpochStats:
    epoch: int = 0
    per_top: Counter[int] = field(default_factory=Counter)
    per_region: Counter[Region] = field(default_factory=Counter)

    def reset(self) -> None:
        self.epoch += 1
        self.per_top.clear()
        self.per_region.clear()


@dataclass(frozen=True)
class SplitReport:
    epoch: int
    splits: int
    merges: int
    deferred: int
    c: float
    threshold: float
    sum_f: int
    n_top: int
    live_entries: int
    utilization: float
    capacity_pressure: int


def compute_threshold(f: dict[int, int] | list[int], n_top: int, c: float) -> float:
    """Split threshold; ``inf`` when nothing was falsely invalidated."""
    total = sum(f.values()) if isinstance(f, dict) else sum(f)
    if total == 0 or n_top == 0:
        return math.inf
    return total / (c * n_top)


def worst_case_subregions(f: float, t: float, m_pages: int) -> int:
    """Sub-region ceiling for one top-level region with false-invalidation count ``f``."""
    if t <= 0 or f < 0:
        raise ValueError("t must be positive and f nonnegative")
    if f <= t:
        return 1
    return (math.ceil(f / t) - 1) * (1 + log2(m_pages))


def global_bound(c: float, n_top: int, m_pages: int) -> float:
    return c * n_top * (1 + log2(m_pages))


class BoundedSplitter:
    def __init__(
        self,
        config: SplitterConfig,
        directory: Directory,
        slots: SlotPool,
        addrspace: AddressSpace,
    ) -> None:
        self.config = config
        self.directory = directory
        self.slots = slots
        self.addrspace = addrspace
        self.c = config.c
        self.stats = EpochStats()
        self.cumulative_f: Counter[int] = Counter()
        self.min_threshold = math.inf
        self.capacity_pressure = 0
        self._pressure_this_epoch = 0
        # set by the owner of the caches; flushes copies and calls discard()
        self.reset_hook: Callable[[DirectoryEntry], object] | None = None

    # -- coherence-facing hooks ----------------------------------------------

    def instantiate(self, page: int, now: float) -> DirectoryEntry:
        cfg = self.config
        size = cfg.initial_region if self.slots.utilization < UTILIZATION_CAP else cfg.top_size
        region = self.directory.largest_free_block(page, size)
        if not self.slots.free:
            self._evict_victim()
        slot = self.slots.allocate(region.base)
        entry = DirectoryEntry(region, slot, last_use=now)
        self.directory.add(entry)
        return entry

    def _evict_victim(self) -> None:
        if self.reset_hook is None or not len(self.directory):
            raise RuntimeError("directory full and no reset hook to reclaim a slot")
        victim = min(self.directory, key=lambda e: (e.last_use, e.region.base))
        self.note_pressure()
        self.reset_hook(victim)

    def discard(self, entry: DirectoryEntry) -> None:
        self.directory.remove(entry)
        self.slots.release(entry.region.base)

    def record_false_invalidations(self, region: Region, count: int) -> None:
        top = region.base // self.config.top_size
        self.stats.per_region[region] += count
        self.stats.per_top[top] += count
        self.cumulative_f[top] += count

    def reclaim_orphans(self, lo: int, hi: int) -> int:
        """Reset entries inside ``[lo, hi)`` that no longer cover any live vma."""
        orphans = [e for e in self.directory.within(lo, hi) if not self.addrspace.overlaps_live(e.region.base, e.region.end)]
        for entry in orphans:
            self.reset_hook(entry)
        return len(orphans)

    def note_pressure(self) -> None:
        self.capacity_pressure += 1
        self._pressure_this_epoch += 1

    # -- structure changes -----------------------------------------------------

    def split(self, entry: DirectoryEntry) -> bool:
        """Halve ``entry``; children inherit its coherence state.  False if no slot is free."""
        lo, hi = entry.region.halves()
        if self.slots.allocate(hi.base) is None:
            return False
        slot = self.slots.used[hi.base]
        self.directory.rekey(entry, lo)
        self.directory.add(
            DirectoryEntry(hi, slot, entry.state, set(entry.sharers), entry.owner, entry.busy_until, entry.last_use)
        )
        return True

    def merge(self, lo: DirectoryEntry, hi: DirectoryEntry) -> DirectoryEntry:
        if lo.region.buddy() != hi.region or lo.region.base > hi.region.base:
            raise ValueError("entries are not a (lower, upper) buddy pair")
        if not lo.same_coherence_state(hi):
            raise ValueError("buddies differ in coherence state")
        self.discard(hi)
        self.directory.rekey(lo, lo.region.parent())
        lo.busy_until = max(lo.busy_until, hi.busy_until)
        lo.last_use = max(lo.last_use, hi.last_use)
        return lo

    def _buddy_pairs(self, exclude: set[int]) -> list[tuple[DirectoryEntry, DirectoryEntry]]:
        pairs = []
        for entry in list(self.directory):
            region = entry.region
            if region.size >= self.config.top_size or region.base & region.size:
                continue
            hi = self.directory.get(region.base + region.size)
            if hi is None or hi.region.size != region.size:
                continue
            if region.base in exclude or hi.region.base in exclude or not entry.same_coherence_state(hi):
                continue
            pairs.append((entry, hi))
        return pairs

    def end_epoch(self) -> SplitReport:
        cfg = self.config
        stats = self.stats
        allocated = self.addrspace.allocated_blocks(cfg.top_size)
        n_top = len(allocated)
        f = {i: stats.per_top[i] for i in allocated}
        sum_f = sum(f.values())
        t = compute_threshold(f, n_top, self.c)
        if math.isfinite(t):
            self.min_threshold = min(self.min_threshold, t)

        splits = deferred = merges = 0
        touched: set[int] = set()
        candidates = sorted(
            (r for r, n in stats.per_region.items() if n > t and r.size > cfg.page_size),
            key=lambda r: (-stats.per_region[r], r.base),
        )
        for region in candidates:
            entry = self.directory.get(region.base)
            if entry is None or entry.region != region:
                continue
            if self.split(entry):
                splits += 1
                touched.update((region.base, region.base + region.size // 2))
            else:
                deferred += 1
                self.note_pressure()

        if math.isfinite(t):
            limit = cfg.merge_factor * t
            for lo, hi in self._buddy_pairs(touched):
                if stats.per_region[lo.region] + stats.per_region[hi.region] <= limit:
                    self.merge(lo, hi)
                    touched.add(lo.region.base)
                    merges += 1

        # over the cap: fold the quietest identical buddies until back under it
        if self.slots.utilization >= UTILIZATION_CAP:
            pairs = sorted(
                self._buddy_pairs(touched),
                key=lambda p: (stats.per_region[p[0].region] + stats.per_region[p[1].region], p[0].region.base),
            )
            for lo, hi in pairs:
                if self.slots.utilization < UTILIZATION_CAP:
                    break
                self.merge(lo, hi)
                merges += 1

        if cfg.adjust_c:
            self._adjust_c(n_top)
        if self.slots.utilization >= UTILIZATION_CAP and not self._pressure_this_epoch:
            self.note_pressure()

        report = SplitReport(
            epoch=stats.epoch,
            splits=splits,
            merges=merges,
            deferred=deferred,
            c=self.c,
            threshold=t,
            sum_f=sum_f,
            n_top=n_top,
            live_entries=len(self.directory),
            utilization=self.slots.utilization,
            capacity_pressure=self._pressure_this_epoch,
        )
        stats.reset()
        self._pressure_this_epoch = 0
        return report

    def _adjust_c(self, n_top: int) -> None:
        u = self.slots.utilization
        if u >= LOWER_AT:
            self.c = max(C_MIN, self.c / C_DOWN)
        elif u < RAISE_BELOW:
            # never beyond the value whose worst case fills the whole slot pool
            ceiling = self.slots.capacity / (max(n_top, 1) * (1 + log2(self.config.m_pages)))
            self.c = min(max(self.config.c, ceiling), self.c * C_UP)

    # -- inspection ----------------------------------------------------------

    def regions_per_top(self) -> Counter[int]:
        return Counter(e.region.base // self.config.top_size for e in self.directory)
