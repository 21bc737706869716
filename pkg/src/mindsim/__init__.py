"""Trace-driven simulator for switch-resident disaggregated memory management."""

from mindsim.errors import (
    AlignmentError,
    CapacityError,
    ConfigError,
    EncodingError,
    InvalidFreeError,
    MindSimError,
    OutOfMemoryError,
    TraceError,
    TranslationFault,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "CapacityError",
    "ConfigError",
    "EncodingError",
    "InvalidFreeError",
    "MindSimError",
    "OutOfMemoryError",
    "TraceError",
    "TranslationFault",
    "__version__",
]
