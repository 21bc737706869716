"""Synthetic traces: the read/sharing-ratio workload, a random fuzzer, and
the single-hot-page adversary used to exercise region splitting."""

from __future__ import annotations

import random
from dataclasses import dataclass

from mindsim.protection import READ_ONLY, READ_WRITE
from mindsim.simrun.trace import AccessEvent, Op, Ref

PDID = 1


@dataclass(frozen=True)
class GeneratorSpec:
    read_ratio: float = 0.5
    sharing_ratio: float = 0.5
    working_set: int = 4096  # pages
    blades: int = 8
    ops_per_blade: int = 64_000
    seed: int = 0
    page_size: int = 4096

    def __post_init__(self) -> None:
        if not 0.0 <= self.read_ratio <= 1.0 or not 0.0 <= self.sharing_ratio <= 1.0:
            raise ValueError("read and sharing ratios must lie in [0, 1]")
        if self.working_set <= 0 or self.blades <= 0 or self.ops_per_blade < 0:
            raise ValueError("working set and blade count must be positive")

    @property
    def shared_pages(self) -> int:
        return round(self.working_set * self.sharing_ratio)

    @property
    def private_pages(self) -> int:
        return (self.working_set - self.shared_pages) // self.blades


class _Seq:
    def __init__(self) -> None:
        self.n = 0

    def __call__(self) -> int:
        self.n += 1
        return self.n


def generate(spec: GeneratorSpec) -> list[AccessEvent]:
    """Uniform-random accesses: a shared pool plus one private pool per blade.

    Each access goes to the shared pool with probability ``sharing_ratio``
    and is a read with probability ``read_ratio``; blades issue round-robin.
    """
    rng = random.Random(spec.seed)
    seq = _Seq()
    ps = spec.page_size
    shared, private = spec.shared_pages, spec.private_pages
    if shared == 0 and private == 0:
        raise ValueError("working set too small to give any blade a page")
    events = []
    if shared:
        events.append(AccessEvent(seq(), 0, PDID, Op.ALLOC, size=shared * ps, name="shared"))
    if private:
        for b in range(spec.blades):
            events.append(AccessEvent(seq(), b, PDID, Op.ALLOC, size=private * ps, name=f"private{b}"))
    words = ps // 8
    for _ in range(spec.ops_per_blade):
        for b in range(spec.blades):
            if shared and (not private or rng.random() < spec.sharing_ratio):
                name, pages = "shared", shared
            else:
                name, pages = f"private{b}", private
            offset = rng.randrange(pages) * ps + rng.randrange(words) * 8
            op = Op.R if rng.random() < spec.read_ratio else Op.W
            events.append(AccessEvent(seq(), b, PDID, op, Ref(name, offset)))
    return events


def random_trace(
    seed: int,
    blades: int | None = None,
    max_pages: int = 256,
    ops: int = 1000,
    page_size: int = 4096,
    pdids: int = 3,
) -> list[AccessEvent]:
    """Mixed R/W/ALLOC/FREE/SETPERM fuzz trace with a bounded working set.

    Names stay referenceable after FREE so that stale accesses are
    exercised; the live working set never exceeds ``max_pages``.
    """
    rng = random.Random(seed)
    blades = blades if blades is not None else rng.randint(2, 8)
    seq = _Seq()
    live: dict[str, int] = {}  # name -> size in bytes
    dead: dict[str, int] = {}
    events: list[AccessEvent] = []
    owner: dict[str, int] = {}
    used_pages = 0
    count = 0

    def alloc() -> None:
        nonlocal used_pages, count
        pages = rng.choice((1, 1, 2, 3, 4, 8, 16, 32))
        if used_pages + pages > max_pages:
            return
        size = pages * page_size - rng.choice((0, 0, rng.randrange(page_size)))
        name = f"v{count}"
        count += 1
        pdid = rng.randint(1, pdids)
        events.append(AccessEvent(seq(), rng.randrange(blades), pdid, Op.ALLOC, size=size, name=name))
        live[name] = size
        owner[name] = pdid
        used_pages += pages

    for _ in range(2):
        alloc()
    while len(events) < ops:
        roll = rng.random()
        blade = rng.randrange(blades)
        if roll < 0.03 or not live:
            alloc()
        elif roll < 0.045:
            name = rng.choice(sorted(live))
            size = live.pop(name)
            dead[name] = size
            used_pages -= -(-size // page_size)
            events.append(AccessEvent(seq(), blade, owner[name], Op.FREE, Ref(name, 0)))
        elif roll < 0.07:
            name = rng.choice(sorted(live))
            pc = rng.choice((READ_ONLY, READ_WRITE))
            events.append(AccessEvent(seq(), blade, rng.randint(1, pdids), Op.SETPERM, Ref(name, 0), pc=pc))
        else:
            pool = dead if dead and rng.random() < 0.02 else live
            name = rng.choice(sorted(pool))
            offset = rng.randrange(pool[name]) & ~7
            pdid = owner[name] if rng.random() < 0.8 else rng.randint(1, pdids)
            op = Op.R if rng.random() < 0.5 else Op.W
            events.append(AccessEvent(seq(), blade, pdid, op, Ref(name, offset)))
    return events


def hot_page_trace(rounds: int, page_size: int = 4096, top_size: int = 2 << 20) -> list[AccessEvent]:
    """Adversary that concentrates false invalidations on a single page.

    Blade 0 dirties the hot page and its neighbour, then blade 1 writes the
    hot page, so every round falsely invalidates exactly the neighbour until
    the two land in different regions.  A second, idle top-level region is
    allocated so the threshold averages over two regions.
    """
    seq = _Seq()
    events = [
        AccessEvent(seq(), 0, PDID, Op.ALLOC, size=top_size, name="hot"),
        AccessEvent(seq(), 0, PDID, Op.ALLOC, size=top_size, name="cold"),
    ]
    hot = Ref("hot", 0)
    buddy = Ref("hot", page_size)
    for _ in range(rounds):
        events.append(AccessEvent(seq(), 0, PDID, Op.W, hot))
        events.append(AccessEvent(seq(), 0, PDID, Op.W, buddy))
        events.append(AccessEvent(seq(), 1, PDID, Op.W, hot))
    return events
