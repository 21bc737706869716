"""vma-granular protection table, encoded as power-of-two TCAM prefixes.

Each ``<pdid, block> -> permission class`` entry must be an aligned
power-of-two block.  Arbitrary ranges are split greedily into maximal
aligned blocks and buddy blocks with the same pdid and class are coalesced
eagerly, so the table stays in canonical (minimal) form after every update.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from enum import Enum

from mindsim import switchres
from mindsim._bits import pow2_blocks
from mindsim.errors import AlignmentError
from mindsim.switchres import SwitchBudget


@dataclass(frozen=True)
class PermissionClass:
    readable: bool
    writable: bool

    def __post_init__(self) -> None:
        if self.writable and not self.readable:
            raise ValueError("writable permission classes must also be readable")

    def admits(self, access: Access) -> bool:
        return self.writable if access is Access.WRITE else self.readable

    @classmethod
    def parse(cls, text: str) -> PermissionClass:
        try:
            return _PC_NAMES[text.lower()]
        except KeyError:
            raise ValueError(f"unknown permission class {text!r}") from None

    def __str__(self) -> str:
        return "rw" if self.writable else "ro" if self.readable else "none"


READ_ONLY = PermissionClass(True, False)
READ_WRITE = PermissionClass(True, True)
_PC_NAMES = {"ro": READ_ONLY, "r": READ_ONLY, "rw": READ_WRITE}


class Access(Enum):
    READ = "R"
    WRITE = "W"


class DenyReason(Enum):
    NO_ENTRY = "no-entry"
    PERMISSION_MISMATCH = "permission-mismatch"


@dataclass(frozen=True)
class Decision:
    allowed: bool
    reason: DenyReason | None = None

    def __bool__(self) -> bool:
        return self.allowed


ALLOW = Decision(True)
DENY_NO_ENTRY = Decision(False, DenyReason.NO_ENTRY)
DENY_MISMATCH = Decision(False, DenyReason.PERMISSION_MISMATCH)


@dataclass(frozen=True)
class ProtEntry:
    pdid: int
    vbase: int
    vlen: int
    pc: PermissionClass

    @property
    def end(self) -> int:
        return self.vbase + self.vlen


class _DomainTable:
    """Non-overlapping blocks of one protection domain, sorted by base."""

    def __init__(self) -> None:
        self.bases: list[int] = []
        self.blocks: dict[int, tuple[int, PermissionClass]] = {}

    def __len__(self) -> int:
        return len(self.bases)

    def find(self, vaddr: int) -> tuple[int, int, PermissionClass] | None:
        i = bisect.bisect_right(self.bases, vaddr) - 1
        if i < 0:
            return None
        base = self.bases[i]
        size, pc = self.blocks[base]
        return (base, size, pc) if vaddr < base + size else None

    def overlapping(self, lo: int, hi: int) -> list[tuple[int, int, PermissionClass]]:
        i = max(bisect.bisect_right(self.bases, lo) - 1, 0)
        out = []
        while i < len(self.bases) and self.bases[i] < hi:
            base = self.bases[i]
            size, pc = self.blocks[base]
            if base + size > lo:
                out.append((base, size, pc))
            i += 1
        return out

    def add(self, base: int, size: int, pc: PermissionClass) -> None:
        bisect.insort(self.bases, base)
        self.blocks[base] = (size, pc)

    def remove(self, base: int) -> None:
        self.bases.pop(bisect.bisect_left(self.bases, base))
        del self.blocks[base]


class ProtectionTable:
    def __init__(self, page_size: int = 4096, budget: SwitchBudget | None = None) -> None:
        self.page_size = page_size
        self.budget = budget if budget is not None else SwitchBudget()
        self._domains: dict[int, _DomainTable] = {}

    def __len__(self) -> int:
        return sum(len(t) for t in self._domains.values())

    def entries(self, pdid: int | None = None) -> list[ProtEntry]:
        pdids = sorted(self._domains) if pdid is None else [pdid]
        out = []
        for p in pdids:
            table = self._domains.get(p)
            if table is None:
                continue
            for base in table.bases:
                size, pc = table.blocks[base]
                out.append(ProtEntry(p, base, size, pc))
        return out

    def entries_in(self, pdid: int, vbase: int, vlen: int) -> int:
        """Number of entries of ``pdid`` intersecting ``[vbase, vbase+vlen)``."""
        table = self._domains.get(pdid)
        return len(table.overlapping(vbase, vbase + vlen)) if table else 0

    def _check_range(self, vbase: int, vlen: int) -> None:
        if vlen <= 0 or vbase % self.page_size or vlen % self.page_size:
            raise AlignmentError(f"range [{vbase:#x}, +{vlen:#x}) is not page aligned")

    # -- updates -------------------------------------------------------------

    def set_permission(self, pdid: int, vbase: int, vlen: int, pc: PermissionClass) -> int:
        """Install ``pc`` over the range (last write wins) and return the entries encoding it.

        Raises CapacityError, leaving the table untouched, when the rule
        budget cannot absorb the growth.
        """
        self._check_range(vbase, vlen)
        table = self._domains.setdefault(pdid, _DomainTable())
        before = len(table)
        plan = self._plan(table, vbase, vlen, pc)
        self._commit(table, before, plan)
        return self.entries_in(pdid, vbase, vlen)

    def revoke(self, pdid: int, vbase: int, vlen: int) -> int:
        """Drop ``pdid``'s rights over the range, re-encoding partially covered entries.

        Returns the number of rule entries freed (never negative in
        practice, but a split remainder can make it zero).
        """
        self._check_range(vbase, vlen)
        table = self._domains.get(pdid)
        if table is None:
            return 0
        before = len(table)
        plan = self._plan(table, vbase, vlen, None)
        self._commit(table, before, plan)
        if not table:
            del self._domains[pdid]
        return before - len(table)

    def revoke_all(self, vbase: int, vlen: int) -> int:
        """Revoke every domain's rights over the range."""
        return sum(self.revoke(pdid, vbase, vlen) for pdid in sorted(self._domains))

    def _plan(self, table, vbase, vlen, pc):
        """Compute (removed bases, added blocks) for overwriting the range with ``pc``."""
        lo, hi = vbase, vbase + vlen
        touched = table.overlapping(lo, hi)
        # remainders of partially overwritten entries keep their old class
        runs: list[tuple[int, int, PermissionClass | None]] = []
        for base, size, old in touched:
            if base < lo:
                runs.append((base, lo - base, old))
            if base + size > hi:
                runs.append((hi, base + size - hi, old))
        if pc is not None:
            runs.append((lo, vlen, pc))
        removed = {base for base, _, _ in touched}
        pieces = [(b, s, p) for base, length, p in runs for b, s in pow2_blocks(base, length)]
        merged, absorbed = _coalesce(table, pieces, removed)
        return removed | absorbed, merged

    def _commit(self, table, before, plan) -> None:
        removed, added = plan
        delta = len(added) - len(removed)
        if delta > 0:
            self.budget.reserve(switchres.PROTECTION, delta)
        elif delta < 0:
            self.budget.release(switchres.PROTECTION, -delta)
        for base in removed:
            table.remove(base)
        for base, size, pc in added:
            table.add(base, size, pc)
        assert len(table) == before + delta

    def coalesce(self, pdid: int) -> int:
        """Run buddy coalescing over a whole domain; returns entries removed."""
        table = self._domains.get(pdid)
        if table is None:
            return 0
        pieces = [(b, *table.blocks[b]) for b in table.bases]
        merged, _ = _coalesce(_DomainTable(), pieces, set())
        before = len(table)
        self._commit(table, before, (set(table.bases), merged))
        return before - len(table)

    # -- lookup --------------------------------------------------------------

    def check(self, pdid: int, vaddr: int, access: Access) -> Decision:
        table = self._domains.get(pdid)
        hit = table.find(vaddr) if table is not None else None
        if hit is None:
            return DENY_NO_ENTRY
        return ALLOW if hit[2].admits(access) else DENY_MISMATCH


def _coalesce(table: _DomainTable, pieces, removed: set[int]):
    """Merge buddy blocks of equal class until nothing changes.

    ``pieces`` are new blocks; live table blocks not in ``removed`` are
    candidates for absorption.  Returns (final new blocks, absorbed bases).
    """
    new = {base: (size, pc) for base, size, pc in pieces}
    absorbed: set[int] = set()

    def lookup(base):
        if base in new:
            return new[base], True
        if base in table.blocks and base not in removed and base not in absorbed:
            return table.blocks[base], False
        return None, False

    changed = True
    while changed:
        changed = False
        for base in sorted(new):
            if base not in new:
                continue
            size, pc = new[base]
            buddy = base ^ size
            other, is_new = lookup(buddy)
            if other is None or other != (size, pc):
                continue
            if not is_new:
                absorbed.add(buddy)
            else:
                del new[buddy]
            new.pop(base, None)
            new[min(base, buddy)] = (size * 2, pc)
            changed = True
    return [(b, s, p) for b, (s, p) in sorted(new.items())], absorbed
