"""In-network directory and MSI state machine over variable-sized regions.

Caching and data movement are page-granular while the directory tracks
aligned power-of-two regions.  Invalidating a region therefore flushes every
dirty page the recipient holds inside it; the ones other than the page that
triggered the transition are *false invalidations* and feed the region
splitter.

Data values are modelled as tags ``(writer blade, trace seq)`` so a stale
read is attributable to a specific write.
"""

from __future__ import annotations

import bisect
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Protocol

from mindsim.addrspace import AddressSpace
from mindsim.errors import LivenessError
from mindsim.fabric import SWITCH, Fabric, MsgKind, TransitionPlan
from mindsim.protection import Access, DenyReason, ProtectionTable

Tag = tuple[int, int] | None

MAX_REPLAYS = 64


class State(Enum):
    M = "M"
    S = "S"
    I = "I"  # noqa: E741


class Served(Enum):
    LOCAL = "local"
    REMOTE = "remote"
    DENIED = "denied"


@dataclass(frozen=True, order=True)
class Region:
    base: int
    size: int

    @property
    def end(self) -> int:
        return self.base + self.size

    def __contains__(self, addr: int) -> bool:
        return self.base <= addr < self.base + self.size

    def halves(self) -> tuple[Region, Region]:
        half = self.size // 2
        return Region(self.base, half), Region(self.base + half, half)

    def buddy(self) -> Region:
        return Region(self.base ^ self.size, self.size)

    def parent(self) -> Region:
        return Region(self.base & ~(self.size * 2 - 1), self.size * 2)


@dataclass(eq=False)
class DirectoryEntry:
    region: Region
    slot: int
    state: State = State.I
    sharers: set[int] = field(default_factory=set)
    owner: int | None = None
    busy_until: float = 0.0
    last_use: float = 0.0

    def same_coherence_state(self, other: DirectoryEntry) -> bool:
        return self.state is other.state and self.sharers == other.sharers and self.owner == other.owner


class Directory:
    """Live directory entries keyed by region base.

    Regions are aligned power-of-two blocks between one page and the
    top-level size, so the entry covering an address is found by probing
    each size class.
    """

    def __init__(self, page_size: int, top_size: int) -> None:
        self.page_size = page_size
        self.top_size = top_size
        self.sizes: list[int] = []
        size = page_size
        while size <= top_size:
            self.sizes.append(size)
            size *= 2
        self._entries: dict[int, DirectoryEntry] = {}
        self._bases: list[int] = []

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return (self._entries[b] for b in self._bases)

    def get(self, base: int) -> DirectoryEntry | None:
        return self._entries.get(base)

    def find(self, addr: int) -> DirectoryEntry | None:
        for size in self.sizes:
            entry = self._entries.get(addr & ~(size - 1))
            if entry is not None and entry.region.size == size:
                return entry
        return None

    def is_free(self, region: Region) -> bool:
        """No live region intersects ``region`` (assumes aligned blocks)."""
        i = bisect.bisect_left(self._bases, region.base)
        if i < len(self._bases) and self._bases[i] < region.end:
            return False
        return self.find(region.base) is None

    def largest_free_block(self, addr: int, max_size: int) -> Region:
        """Largest aligned block containing ``addr`` of size <= max_size that is free."""
        best = None
        for size in self.sizes:
            if size > max_size:
                break
            region = Region(addr & ~(size - 1), size)
            if not self.is_free(region):
                break
            best = region
        if best is None:
            raise ValueError(f"address {addr:#x} is already covered")
        return best

    def add(self, entry: DirectoryEntry) -> None:
        base = entry.region.base
        if base in self._entries:
            raise ValueError(f"region at {base:#x} already present")
        self._entries[base] = entry
        bisect.insort(self._bases, base)

    def remove(self, entry: DirectoryEntry) -> None:
        base = entry.region.base
        if self._entries.get(base) is not entry:
            raise KeyError(base)
        del self._entries[base]
        self._bases.pop(bisect.bisect_left(self._bases, base))

    def rekey(self, entry: DirectoryEntry, region: Region) -> None:
        """Change an entry's region (same base, new size)."""
        if region.base != entry.region.base:
            raise ValueError("rekey keeps the base address")
        entry.region = region

    def regions(self) -> list[Region]:
        return [self._entries[b].region for b in self._bases]

    def within(self, lo: int, hi: int) -> list[DirectoryEntry]:
        """Entries intersecting ``[lo, hi)``."""
        out = []
        covering = self.find(lo)
        if covering is not None and covering.region.base < lo:
            out.append(covering)
        i = bisect.bisect_left(self._bases, lo)
        while i < len(self._bases) and self._bases[i] < hi:
            out.append(self._entries[self._bases[i]])
            i += 1
        return out


@dataclass
class CachedPage:
    tag: Tag
    dirty: bool = False
    writable: bool = False


class BladeCache:
    """Per-compute-blade page cache with LRU eviction."""

    def __init__(self, blade: int, capacity: int) -> None:
        if capacity <= 0:
            raise ValueError("cache capacity must be positive")
        self.blade = blade
        self.capacity = capacity
        self.pages: OrderedDict[int, CachedPage] = OrderedDict()

    def __len__(self) -> int:
        return len(self.pages)

    def __contains__(self, page: int) -> bool:
        return page in self.pages

    def lookup(self, page: int) -> CachedPage | None:
        cp = self.pages.get(page)
        if cp is not None:
            self.pages.move_to_end(page)
        return cp

    def lru_victim(self) -> int:
        return next(iter(self.pages))

    def in_region(self, region: Region, page_size: int) -> list[int]:
        if region.size // page_size > len(self.pages):
            return sorted(p for p in self.pages if p in region)
        return [p for p in range(region.base, region.end, page_size) if p in self.pages]


class InvalRecord(NamedTuple):
    seq: int
    recipient: int
    base: int
    size: int
    requested: int
    flushed: int
    false_invalidations: int
    downgrade: bool


class WritebackRecord(NamedTuple):
    seq: int
    blade: int
    page: int
    cause: str  # "evict" or "reset"


@dataclass
class AccessOutcome:
    served: Served
    transition: tuple[State, State] | None = None
    latency: float = 0.0
    wait: float = 0.0
    invalidations_sent: int = 0
    stale_invalidations: int = 0
    pages_flushed: int = 0
    false_invalidations: int = 0
    resets: int = 0
    writebacks: int = 0
    value: Tag = None
    deny: DenyReason | None = None
    region: Region | None = None


class RegionPolicy(Protocol):
    """Hooks the coherence engine needs from the region controller."""

    def instantiate(self, page: int, now: float) -> DirectoryEntry: ...

    def discard(self, entry: DirectoryEntry) -> None: ...

    def record_false_invalidations(self, region: Region, count: int) -> None: ...


@dataclass
class _Attempt:
    ok: bool
    elapsed: float
    outcome: AccessOutcome | None = None


class CoherenceEngine:
    def __init__(
        self,
        addrspace: AddressSpace,
        protection: ProtectionTable,
        fabric: Fabric,
        directory: Directory,
        policy: RegionPolicy,
        cache_pages: int,
        log: bool = False,
    ) -> None:
        self.addrspace = addrspace
        self.protection = protection
        self.fabric = fabric
        self.directory = directory
        self.policy = policy
        self.page_size = addrspace.page_size
        self.cache_pages = cache_pages
        self.caches: dict[int, BladeCache] = {}
        self.memory: dict[tuple[int, int], Tag] = {}
        self.log_enabled = log
        self.log: list[InvalRecord | WritebackRecord] = []
        self.fetches_requested = 0
        self.fetches_applied = 0
        self.fetches_reset = 0
        self.resets = 0
        self.writebacks = 0  # evictions and resets; invalidation flushes are counted per access

    # -- helpers ---------------------------------------------------------------

    def cache(self, blade: int) -> BladeCache:
        cache = self.caches.get(blade)
        if cache is None:
            cache = self.caches[blade] = BladeCache(blade, self.cache_pages)
        return cache

    def _page(self, vaddr: int) -> int:
        return vaddr & ~(self.page_size - 1)

    def _writeback(self, blade: int, page: int, cp: CachedPage, seq: int, cause: str | None) -> None:
        self.memory[self.addrspace.translate(page)] = cp.tag
        self.fabric.send_until_delivered(self.fabric.message(MsgKind.WRITEBACK, blade, SWITCH, page))
        if cause is not None:
            self.writebacks += 1
            if self.log_enabled:
                self.log.append(WritebackRecord(seq, blade, page, cause))

    # -- accesses --------------------------------------------------------------

    def handle_access(
        self, blade: int, pdid: int, vaddr: int, access: Access, now: float = 0.0, seq: int = 0
    ) -> AccessOutcome:
        decision = self.protection.check(pdid, vaddr, access)
        if not decision:
            return AccessOutcome(Served.DENIED, deny=decision.reason)
        page = self._page(vaddr)
        self.addrspace.translate(page)  # faults outside the registered space
        cache = self.cache(blade)
        cp = cache.lookup(page)
        if cp is not None and (access is Access.READ or cp.writable):
            if access is Access.WRITE:
                cp.dirty = True
                cp.tag = (blade, seq)
            return AccessOutcome(Served.LOCAL, latency=self.fabric.latency.local_hit, value=cp.tag)

        start = now
        resets = 0
        for _ in range(MAX_REPLAYS):
            entry = self.directory.find(page)
            if entry is None:
                entry = self.policy.instantiate(page, now)
            begin = max(start, entry.busy_until)
            attempt = self._transition(entry, blade, page, access, begin, seq)
            if attempt.ok:
                out = attempt.outcome
                out.wait = begin - start if resets == 0 else 0.0
                out.latency += begin - now
                out.resets = resets
                entry.busy_until = now + out.latency
                entry.last_use = now
                return out
            resets += 1
            self.reset_address(page, seq)
            start = begin + attempt.elapsed + self.fabric.latency.inval_round()
        raise LivenessError(f"access to {vaddr:#x} by blade {blade} did not complete after {MAX_REPLAYS} resets")

    def _transition(self, entry: DirectoryEntry, r: int, page: int, access: Access, begin: float, seq: int) -> _Attempt:
        fabric = self.fabric
        prev = entry.state
        write = access is Access.WRITE
        recipients: list[int] = []
        sequential = downgrade = False
        if prev is State.S and write:
            recipients = sorted(entry.sharers - {r})
        elif prev is State.M and entry.owner != r:
            recipients = [entry.owner]
            sequential = True
            downgrade = not write

        rounds = []
        if recipients:
            msg = fabric.message(MsgKind.INVAL, SWITCH, SWITCH, entry.region.base, entry.sharers)
            for blade in recipients:
                res = fabric.invalidate(msg, blade, begin)
                rounds.append(res)
                if not res.delivered:
                    return _Attempt(False, max(x.latency for x in rounds))

        self.fetches_requested += 1
        delivery = fabric.send_with_reliability(fabric.message(MsgKind.FETCH_REQ, r, SWITCH, page))
        inval_time = max((x.latency for x in rounds), default=0.0)
        if not delivery.delivered:
            self.fetches_reset += 1
            spent = inval_time + delivery.penalty if sequential else max(inval_time, delivery.penalty)
            return _Attempt(False, spent)

        out = AccessOutcome(Served.REMOTE, region=entry.region)
        for blade in recipients:
            flushed, false_inv, resident = self._invalidate_at(blade, entry.region, page, downgrade, seq)
            out.invalidations_sent += 1
            out.stale_invalidations += resident == 0
            out.pages_flushed += flushed
            out.false_invalidations += false_inv
        if out.false_invalidations:
            self.policy.record_false_invalidations(entry.region, out.false_invalidations)

        if prev is State.I:
            entry.state = State.M if write else State.S
            entry.sharers = {r}
            entry.owner = r if write else None
        elif prev is State.S:
            if write:
                entry.state, entry.sharers, entry.owner = State.M, {r}, r
            else:
                entry.sharers.add(r)
        elif entry.owner != r:
            old = entry.owner
            if write:
                entry.sharers, entry.owner = {r}, r
            else:
                entry.state, entry.sharers, entry.owner = State.S, {old, r}, None
        out.transition = (prev, entry.state)

        self.fetches_applied += 1
        writable = entry.state is State.M and entry.owner == r
        cache = self.cache(r)
        resident = page in cache.pages
        if writable:
            # ownership is per region: every page r holds there becomes writable
            for p in cache.in_region(entry.region, self.page_size):
                cache.pages[p].writable = True
        if resident:
            cp = cache.lookup(page)
        else:
            while len(cache) >= cache.capacity:
                out.writebacks += self.handle_eviction(r, cache.lru_victim(), seq)
            cp = cache.pages[page] = CachedPage(self.memory.get(self.addrspace.translate(page)), False, writable)
        if write:
            cp.dirty = True
            cp.tag = (r, seq)
        out.value = cp.tag

        plan = TransitionPlan(0 if resident else 1, tuple(x.latency for x in rounds), sequential, delivery.penalty)
        out.latency = fabric.cost_of(plan)
        return _Attempt(True, out.latency, out)

    def invalidate_region(
        self, entry: DirectoryEntry, requester: int, page: int, downgrade: bool = False, seq: int = 0
    ) -> tuple[int, int, int]:
        """Deliver one filtered multicast invalidation for ``entry``.

        Copies go only to ``entry.sharers`` minus the requester.  Returns
        ``(acks, pages flushed, false invalidations)``; the false count is
        also charged to the region's epoch statistics.
        """
        if entry.state is State.I:
            raise ValueError("cannot invalidate a region in state I")
        acks = flushed = false_inv = 0
        for blade in sorted(entry.sharers - {requester}):
            f, fi, _ = self._invalidate_at(blade, entry.region, page, downgrade, seq)
            acks += 1
            flushed += f
            false_inv += fi
        if false_inv:
            self.policy.record_false_invalidations(entry.region, false_inv)
        return acks, flushed, false_inv

    def _invalidate_at(self, blade: int, region: Region, requested: int, downgrade: bool, seq: int):
        cache = self.cache(blade)
        resident = cache.in_region(region, self.page_size)
        flushed = 0
        requested_dirty = False
        for page in resident:
            cp = cache.pages[page]
            if cp.dirty:
                self._writeback(blade, page, cp, seq, None)
                flushed += 1
                requested_dirty |= page == requested
            if downgrade:
                cp.dirty = cp.writable = False
            else:
                del cache.pages[page]
        false_inv = flushed - requested_dirty
        if self.log_enabled:
            self.log.append(
                InvalRecord(seq, blade, region.base, region.size, requested, flushed, false_inv, downgrade)
            )
        return flushed, false_inv, len(resident)

    def handle_eviction(self, blade: int, page: int, seq: int = 0) -> int:
        """Evict ``page`` from ``blade``; returns the number of writebacks (0 or 1)."""
        cp = self.cache(blade).pages.pop(page)
        if cp.dirty:
            self._writeback(blade, page, cp, seq, "evict")
            return 1
        return 0

    def reset_address(self, vaddr: int, seq: int = 0) -> int:
        """Flush every copy of the covering region and delete its entry; returns writebacks."""
        entry = self.directory.find(self._page(vaddr))
        if entry is None:
            return 0
        return self.reset_entry(entry, seq)

    def reset_entry(self, entry: DirectoryEntry, seq: int = 0) -> int:
        # resets travel over the reliable control-plane channel
        self.fabric.sent[MsgKind.RESET] += 1
        writebacks = 0
        for blade in sorted(self.caches):
            cache = self.caches[blade]
            for page in cache.in_region(entry.region, self.page_size):
                cp = cache.pages.pop(page)
                if cp.dirty:
                    self._writeback(blade, page, cp, seq, "reset")
                    writebacks += 1
        self.resets += 1
        self.policy.discard(entry)
        return writebacks

    # -- inspection ------------------------------------------------------------

    def coherent_value(self, page: int) -> Tag:
        """Latest value of ``page``: a dirty cached copy if one exists, else memory."""
        for cache in self.caches.values():
            cp = cache.pages.get(page)
            if cp is not None and cp.dirty:
                return cp.tag
        return self.memory.get(self.addrspace.translate(page))

    def check_invariants(self) -> list[str]:
        problems = []
        dirty_holder: dict[int, int] = {}
        slots = set()
        for entry in self.directory:
            if entry.slot in slots:
                problems.append(f"slot {entry.slot} used twice")
            slots.add(entry.slot)
            if entry.state is State.M and (entry.owner is None or entry.sharers != {entry.owner}):
                problems.append(f"M region {entry.region} has sharers {entry.sharers} owner {entry.owner}")
            if entry.state is State.S and (not entry.sharers or entry.owner is not None):
                problems.append(f"S region {entry.region} malformed")
            if entry.state is State.I and (entry.sharers or entry.owner is not None):
                problems.append(f"I region {entry.region} has sharers")
        for blade, cache in self.caches.items():
            if len(cache) > cache.capacity:
                problems.append(f"blade {blade} cache over capacity")
            for page, cp in cache.pages.items():
                entry = self.directory.find(page)
                if entry is None or blade not in entry.sharers:
                    problems.append(f"blade {blade} caches {page:#x} without directory membership")
                    continue
                if cp.dirty:
                    if page in dirty_holder:
                        problems.append(f"page {page:#x} dirty at blades {dirty_holder[page]} and {blade}")
                    dirty_holder[page] = blade
                if (cp.dirty or cp.writable) and not (entry.state is State.M and entry.owner == blade):
                    problems.append(f"blade {blade} holds {page:#x} writable outside M ownership")
        return problems
