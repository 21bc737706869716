"""Exception hierarchy shared by every module."""

from __future__ import annotations


class MindSimError(Exception):
    """Base class for simulator errors."""


class AlignmentError(MindSimError, ValueError):
    """A size or address violates page / power-of-two alignment."""


class EncodingError(MindSimError, ValueError):
    """A range cannot be expressed as a single TCAM prefix."""


class OutOfMemoryError(MindSimError):
    def __init__(self, size: int) -> None:
        super().__init__(f"no memory blade has a free aligned hole of {size:#x} bytes")
        self.size = size


class InvalidFreeError(MindSimError):
    """free_vma was called on something that is not a live allocation."""


class TranslationFault(MindSimError):
    def __init__(self, vaddr: int) -> None:
        super().__init__(f"virtual address {vaddr:#x} is outside the registered space")
        self.vaddr = vaddr


class CapacityError(MindSimError):
    """A switch resource pool cannot satisfy a reservation."""

    def __init__(self, category: str, shortfall: int) -> None:
        super().__init__(f"switch budget exhausted for {category!r} (short by {shortfall})")
        self.category = category
        self.shortfall = shortfall


class ConfigError(MindSimError, ValueError):
    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key


class TraceError(MindSimError, ValueError):
    def __init__(self, lineno: int, message: str) -> None:
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class LivenessError(MindSimError):
    """An access could not complete even after repeated resets."""
