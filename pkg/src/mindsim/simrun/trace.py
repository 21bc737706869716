"""Line-oriented trace format.

Each line is ``seq,blade,pdid,op,arg1[,arg2]``:

    1,0,1,ALLOC,65536,buf      bind the new vma to the name ``buf``
    2,0,1,W,$buf+0x40          access an offset inside a bound vma
    3,1,1,R,0x200040           or an absolute virtual address
    4,0,2,SETPERM,$buf,ro      grant pdid 2 read-only rights over ``buf``
    5,0,1,FREE,$buf

Blank lines and ``#`` comments are ignored; ``seq`` must strictly increase.
"""

from __future__ import annotations

import re
import sys
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TextIO

from mindsim.errors import TraceError
from mindsim.protection import PermissionClass


class Op(Enum):
    R = "R"
    W = "W"
    ALLOC = "ALLOC"
    FREE = "FREE"
    SETPERM = "SETPERM"


@dataclass(frozen=True)
class Ref:
    """An address: absolute when ``name`` is None, else ``$name+offset``."""

    name: str | None
    offset: int

    def __str__(self) -> str:
        if self.name is None:
            return f"{self.offset:#x}"
        return f"${self.name}" if self.offset == 0 else f"${self.name}+{self.offset:#x}"


@dataclass(frozen=True)
class AccessEvent:
    seq: int
    blade: int
    pdid: int
    op: Op
    ref: Ref | None = None  # R, W, FREE, SETPERM
    size: int = 0  # ALLOC
    name: str | None = None  # ALLOC
    pc: PermissionClass | None = None  # SETPERM

    def __str__(self) -> str:
        head = f"{self.seq},{self.blade},{self.pdid},{self.op.value}"
        if self.op is Op.ALLOC:
            return f"{head},{self.size},{self.name}"
        if self.op is Op.SETPERM:
            return f"{head},{self.ref},{self.pc}"
        return f"{head},{self.ref}"


_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_.-]*")
_REF = re.compile(r"\$([A-Za-z_][A-Za-z0-9_.-]*)(?:\+(\w+))?")


def parse_ref(text: str) -> Ref:
    m = _REF.fullmatch(text)
    if m:
        return Ref(m.group(1), int(m.group(2), 0) if m.group(2) else 0)
    value = int(text, 0)
    if value < 0:
        raise ValueError("negative address")
    return Ref(None, value)


def parse_line(line: str, lineno: int = 0) -> AccessEvent | None:
    body = line.split("#", 1)[0].strip()
    if not body:
        return None
    fields = [f.strip() for f in body.split(",")]
    if len(fields) < 5:
        raise TraceError(lineno, f"expected seq,blade,pdid,op,arg1[,arg2]; got {body!r}")
    try:
        seq, blade, pdid = (int(f, 0) for f in fields[:3])
    except ValueError:
        raise TraceError(lineno, "seq, blade and pdid must be integers") from None
    if blade < 0 or pdid < 0:
        raise TraceError(lineno, "blade and pdid must be nonnegative")
    try:
        op = Op(fields[3].upper())
    except ValueError:
        raise TraceError(lineno, f"unknown op {fields[3]!r}") from None
    want = 2 if op in (Op.ALLOC, Op.SETPERM) else 1
    if len(fields) - 4 != want:
        raise TraceError(lineno, f"{op.value} takes {want} argument(s)")
    try:
        if op is Op.ALLOC:
            size = int(fields[4], 0)
            if size <= 0:
                raise ValueError("allocation size must be positive")
            if not _NAME.fullmatch(fields[5]):
                raise ValueError(f"bad name {fields[5]!r}")
            return AccessEvent(seq, blade, pdid, op, size=size, name=fields[5])
        ref = parse_ref(fields[4])
        if op is Op.SETPERM:
            return AccessEvent(seq, blade, pdid, op, ref, pc=PermissionClass.parse(fields[5]))
        if op is Op.FREE and (ref.name is None or ref.offset):
            raise ValueError("FREE takes a bare $name")
        return AccessEvent(seq, blade, pdid, op, ref)
    except ValueError as exc:
        raise TraceError(lineno, str(exc)) from None


def parse_trace(lines: Iterable[str]) -> Iterator[AccessEvent]:
    last = None
    for lineno, line in enumerate(lines, 1):
        event = parse_line(line, lineno)
        if event is None:
            continue
        if last is not None and event.seq <= last:
            raise TraceError(lineno, f"seq {event.seq} does not increase (previous {last})")
        last = event.seq
        yield event


def read_trace(source: str | Path) -> list[AccessEvent]:
    """Read a trace file, or standard input when ``source`` is ``-``."""
    if str(source) == "-":
        return list(parse_trace(sys.stdin))
    with open(source) as fh:
        return list(parse_trace(fh))


def write_trace(events: Iterable[AccessEvent], out: TextIO) -> None:
    for event in events:
        out.write(f"{event}\n")
