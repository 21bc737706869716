"""Global virtual address space: blade registration, translation, allocation.

Every memory blade owns one contiguous slice of the single global virtual
address space, so a blade needs exactly one primary translation entry and
``paddr = vaddr - slice_start`` inside it.  Outlier entries (migrated or
static regions) override the primary mapping by longest-prefix match.

Allocation picks the least-loaded blade (ties to the lowest id), rounds the
request to a power-of-two number of pages and places it first-fit at an
address aligned to its own size, which keeps each vma a single TCAM prefix.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from enum import Enum

from mindsim import switchres
from mindsim._bits import align_up, is_pow2, next_pow2
from mindsim.errors import (
    AlignmentError,
    EncodingError,
    InvalidFreeError,
    OutOfMemoryError,
    TranslationFault,
)
from mindsim.switchres import SwitchBudget

DEFAULT_PAGE_SIZE = 4096


class EntryKind(Enum):
    PRIMARY = "primary-range"
    OUTLIER = "outlier"


@dataclass(frozen=True)
class VmaRange:
    base: int
    length: int
    pdid: int

    @property
    def end(self) -> int:
        return self.base + self.length

    def __contains__(self, vaddr: int) -> bool:
        return self.base <= vaddr < self.base + self.length


@dataclass(frozen=True)
class TranslationEntry:
    vbase: int
    vlen: int
    blade: int
    pbase: int
    kind: EntryKind

    def covers(self, vaddr: int) -> bool:
        return self.vbase <= vaddr < self.vbase + self.vlen

    def map(self, vaddr: int) -> int:
        return self.pbase + (vaddr - self.vbase)


@dataclass(frozen=True)
class BladeLoad:
    blade: int
    allocated: int
    capacity: int


class _MemoryBlade:
    """Per-blade free list of ``[start, end)`` holes in global virtual coordinates."""

    def __init__(self, blade: int, start: int, capacity: int) -> None:
        self.blade = blade
        self.start = start
        self.capacity = capacity
        self.allocated = 0
        self.holes: list[list[int]] = [[start, start + capacity]]

    @property
    def end(self) -> int:
        return self.start + self.capacity

    def first_fit(self, size: int, alignment: int) -> int | None:
        for hole in self.holes:
            base = align_up(hole[0], alignment)
            if base + size <= hole[1]:
                return base
        return None

    def carve(self, base: int, size: int) -> None:
        """Remove ``[base, base+size)`` from the hole that contains it."""
        i = bisect.bisect_right(self.holes, [base, float("inf")]) - 1
        if i < 0 or not (self.holes[i][0] <= base and base + size <= self.holes[i][1]):
            raise ValueError("range is not free")
        lo, hi = self.holes[i]
        pieces = [[a, b] for a, b in ((lo, base), (base + size, hi)) if a < b]
        self.holes[i : i + 1] = pieces
        self.allocated += size

    def release(self, base: int, size: int) -> None:
        i = bisect.bisect_left(self.holes, [base, base])
        self.holes.insert(i, [base, base + size])
        # eager coalescing with the right then left neighbour
        if i + 1 < len(self.holes) and self.holes[i][1] == self.holes[i + 1][0]:
            self.holes[i][1] = self.holes.pop(i + 1)[1]
        if i > 0 and self.holes[i - 1][1] == self.holes[i][0]:
            self.holes[i - 1][1] = self.holes.pop(i)[1]
        self.allocated -= size

    def is_free(self, base: int, size: int) -> bool:
        i = bisect.bisect_right(self.holes, [base, float("inf")]) - 1
        return i >= 0 and self.holes[i][0] <= base and base + size <= self.holes[i][1]


class AddressSpace:
    def __init__(self, page_size: int = DEFAULT_PAGE_SIZE, budget: SwitchBudget | None = None) -> None:
        if not is_pow2(page_size):
            raise AlignmentError(f"page size {page_size} is not a power of two")
        self.page_size = page_size
        self.budget = budget if budget is not None else SwitchBudget()
        self._blades: list[_MemoryBlade] = []
        self._primary: list[TranslationEntry] = []
        self._outliers: dict[tuple[int, int], TranslationEntry] = {}
        self._outlier_sizes: list[int] = []
        self._vmas: dict[int, VmaRange] = {}
        self._vma_bases: list[int] = []

    # -- registration & translation ------------------------------------------------

    @property
    def limit(self) -> int:
        """One past the last registered virtual address."""
        return self._blades[-1].end if self._blades else 0

    def register_memory_blade(self, capacity: int) -> int:
        if capacity <= 0 or capacity % self.page_size:
            raise AlignmentError(f"capacity {capacity:#x} is not a positive multiple of the page size")
        self.budget.reserve(switchres.TRANSLATION, 1)
        blade = len(self._blades)
        start = self.limit
        self._blades.append(_MemoryBlade(blade, start, capacity))
        self._primary.append(TranslationEntry(start, capacity, blade, 0, EntryKind.PRIMARY))
        return blade

    @property
    def memory_blades(self) -> int:
        return len(self._blades)

    def translation_entries(self) -> list[TranslationEntry]:
        return [*self._primary, *sorted(self._outliers.values(), key=lambda e: (e.vbase, e.vlen))]

    def translate(self, vaddr: int) -> tuple[int, int]:
        """Return ``(blade, physical offset)`` for ``vaddr``; outliers win by longest prefix."""
        if not 0 <= vaddr < self.limit:
            raise TranslationFault(vaddr)
        for size in self._outlier_sizes:  # ascending: most specific first
            entry = self._outliers.get((vaddr & ~(size - 1), size))
            if entry is not None:
                return entry.blade, entry.map(vaddr)
        i = bisect.bisect_right(self._primary, vaddr, key=lambda e: e.vbase) - 1
        entry = self._primary[i]
        return entry.blade, entry.map(vaddr)

    def add_outlier(self, vbase: int, vlen: int, blade: int, pbase: int) -> TranslationEntry:
        if not is_pow2(vlen) or vlen < self.page_size or vbase % vlen:
            raise EncodingError(f"outlier [{vbase:#x}, +{vlen:#x}) is not an aligned power-of-two range")
        if not any(e.vbase <= vbase and vbase + vlen <= e.vbase + e.vlen for e in self._primary):
            raise TranslationFault(vbase)
        if (vbase, vlen) in self._outliers:
            raise ValueError(f"outlier at {vbase:#x}/{vlen:#x} already installed")
        target = self._blades[blade]
        if pbase % self.page_size or not target.is_free(target.start + pbase, vlen):
            raise ValueError(f"destination {pbase:#x} on blade {blade} is not a free page-aligned range")
        self.budget.reserve(switchres.OUTLIER, 1)
        target.carve(target.start + pbase, vlen)
        entry = TranslationEntry(vbase, vlen, blade, pbase, EntryKind.OUTLIER)
        self._outliers[(vbase, vlen)] = entry
        self._outlier_sizes = sorted({size for _, size in self._outliers})
        return entry

    # -- allocation --------------------------------------------------------------

    def rounded_size(self, size: int) -> int:
        pages = -(-size // self.page_size)
        return next_pow2(pages) * self.page_size

    def alloc_vma(self, pdid: int, size: int) -> VmaRange:
        if not self._blades:
            raise OutOfMemoryError(size)
        if size <= 0:
            raise ValueError("allocation size must be positive")
        length = self.rounded_size(size)
        for blade in sorted(self._blades, key=lambda b: (b.allocated, b.blade)):
            base = blade.first_fit(length, length)
            if base is not None:
                blade.carve(base, length)
                vma = VmaRange(base, length, pdid)
                self._vmas[base] = vma
                bisect.insort(self._vma_bases, base)
                return vma
        raise OutOfMemoryError(length)

    def free_vma(self, vma: VmaRange) -> None:
        if self._vmas.get(vma.base) != vma:
            raise InvalidFreeError(f"{vma} is not a live allocation")
        del self._vmas[vma.base]
        self._vma_bases.pop(bisect.bisect_left(self._vma_bases, vma.base))
        self._blade_of(vma.base).release(vma.base, vma.length)

    def _blade_of(self, vaddr: int) -> _MemoryBlade:
        i = bisect.bisect_right(self._blades, vaddr, key=lambda b: b.start) - 1
        return self._blades[i]

    def live_vmas(self) -> list[VmaRange]:
        return [self._vmas[b] for b in self._vma_bases]

    def vma_at(self, vaddr: int) -> VmaRange | None:
        i = bisect.bisect_right(self._vma_bases, vaddr) - 1
        if i >= 0:
            vma = self._vmas[self._vma_bases[i]]
            if vaddr in vma:
                return vma
        return None

    def overlaps_live(self, lo: int, hi: int) -> bool:
        """True when some live vma intersects ``[lo, hi)``."""
        i = bisect.bisect_right(self._vma_bases, lo) - 1
        if i >= 0 and self._vmas[self._vma_bases[i]].end > lo:
            return True
        j = bisect.bisect_left(self._vma_bases, lo)
        return j < len(self._vma_bases) and self._vma_bases[j] < hi

    def allocated_blocks(self, block_size: int) -> set[int]:
        """Indices of ``block_size``-aligned blocks that overlap any live vma."""
        blocks: set[int] = set()
        for vma in self._vmas.values():
            blocks.update(range(vma.base // block_size, (vma.end - 1) // block_size + 1))
        return blocks

    # -- load metrics ------------------------------------------------------------

    def loads(self) -> list[BladeLoad]:
        return [BladeLoad(b.blade, b.allocated, b.capacity) for b in self._blades]

    def holes(self, blade: int) -> list[tuple[int, int]]:
        return [(lo, hi) for lo, hi in self._blades[blade].holes]

    def fairness_index(self) -> float:
        """Jain's index over memory-blade allocations; 1.0 by convention when all are zero."""
        if not self._blades:
            raise ValueError("no memory blades registered")
        return jain_index([b.allocated for b in self._blades])


def jain_index(values: list[int] | list[float]) -> float:
    total = sum(values)
    squares = sum(v * v for v in values)
    if squares == 0:
        return 1.0
    return total * total / (len(values) * squares)
