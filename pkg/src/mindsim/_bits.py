from __future__ import annotations

KiB = 1 << 10
MiB = 1 << 20
GiB = 1 << 30


def is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def next_pow2(n: int) -> int:
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


def floor_pow2(n: int) -> int:
    return 1 << (n.bit_length() - 1)


def align_up(addr: int, alignment: int) -> int:
    return (addr + alignment - 1) & ~(alignment - 1)


def align_down(addr: int, alignment: int) -> int:
    return addr & ~(alignment - 1)


def log2(n: int) -> int:
    """Exact log2 of a power of two."""
    if not is_pow2(n):
        raise ValueError(f"{n} is not a power of two")
    return n.bit_length() - 1


def pow2_blocks(base: int, length: int, min_block: int = 1) -> list[tuple[int, int]]:
    """Greedy split of ``[base, base+length)`` into maximal aligned power-of-two blocks."""
    if base % min_block or length % min_block:
        raise ValueError("range is not aligned to the minimum block size")
    blocks = []
    end = base + length
    while base < end:
        size = base & -base if base else floor_pow2(end - base)
        while base + size > end:
            size >>= 1
        blocks.append((base, size))
        base += size
    return blocks
