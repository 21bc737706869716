"""Run configuration: a flat ``key = value`` file plus CLI overrides of the same names."""

from __future__ import annotations

import dataclasses
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

from mindsim._bits import is_pow2
from mindsim.errors import ConfigError
from mindsim.fabric import LatencyParams, ReliabilityParams
from mindsim.splitctl import SplitterConfig

_SIZE_SUFFIXES = {"k": 1 << 10, "kib": 1 << 10, "m": 1 << 20, "mib": 1 << 20, "g": 1 << 30, "gib": 1 << 30}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_size(text: str) -> int:
    """Parse ``4096``, ``0x1000``, ``16KiB`` or ``2m`` into bytes."""
    s = text.strip().lower().replace("_", "")
    for suffix in sorted(_SIZE_SUFFIXES, key=len, reverse=True):
        if s.endswith(suffix) and s[: -len(suffix)]:
            return int(float(s[: -len(suffix)]) * _SIZE_SUFFIXES[suffix])
    return int(s, 0)


def _parse_bool(text: str) -> bool:
    s = text.strip().lower()
    if s in _TRUE:
        return True
    if s in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (attribute, parser)
_KEYS = {
    "page-size": ("page_size", parse_size),
    "memory-blades": ("memory_blades", int),
    "blade-capacity": ("blade_capacity", parse_size),
    "cache-pages": ("cache_pages", int),
    "dir-capacity": ("dir_capacity", int),
    "rule-capacity": ("rule_capacity", int),
    "initial-region": ("initial_region", parse_size),
    "top-region": ("top_region", parse_size),
    "epoch-ms": ("epoch_ms", float),
    "c-init": ("c_init", float),
    "c-adjust": ("c_adjust", _parse_bool),
    "merge-factor": ("merge_factor", float),
    "loss-rate": ("loss_rate", float),
    "timeout": ("timeout", float),
    "max-retries": ("max_retries", int),
    "seed": ("seed", int),
}
_LATENCY_KEYS = {f"latency.{f.name.replace('_', '-')}": f.name for f in dataclasses.fields(LatencyParams)}
KEYS = tuple([*_KEYS, *_LATENCY_KEYS])


@dataclass(frozen=True)
class SimConfig:
    page_size: int = 4096
    memory_blades: int = 8
    blade_capacity: int = 1 << 30
    cache_pages: int = 4096
    dir_capacity: int = 30_000
    rule_capacity: int = 45_000
    initial_region: int = 16 << 10
    top_region: int = 2 << 20
    epoch_ms: float = 100.0
    c_init: float = 1.0
    c_adjust: bool = True
    merge_factor: float = 0.5
    latency: LatencyParams = field(default_factory=LatencyParams)
    loss_rate: float = 0.0
    timeout: float = 100.0
    max_retries: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        for key in ("page-size", "initial-region", "top-region"):
            if not is_pow2(getattr(self, _KEYS[key][0])):
                raise ConfigError(key, "must be a power of two")
        if not self.page_size <= self.initial_region <= self.top_region:
            raise ConfigError("initial-region", "must lie between page-size and top-region")
        if self.blade_capacity <= 0 or self.blade_capacity % self.page_size:
            raise ConfigError("blade-capacity", "must be a positive multiple of page-size")
        for key in ("memory-blades", "cache-pages", "dir-capacity", "rule-capacity"):
            if getattr(self, _KEYS[key][0]) <= 0:
                raise ConfigError(key, "must be positive")
        if self.memory_blades > self.rule_capacity:
            raise ConfigError("rule-capacity", "cannot hold one translation rule per memory blade")
        if self.epoch_ms <= 0:
            raise ConfigError("epoch-ms", "must be positive")
        if self.c_init <= 0:
            raise ConfigError("c-init", "must be positive")
        if self.merge_factor < 0:
            raise ConfigError("merge-factor", "must be nonnegative")
        if not 0 <= self.loss_rate < 1:
            raise ConfigError("loss-rate", "must be in [0, 1)")
        if self.timeout < 0:
            raise ConfigError("timeout", "must be nonnegative")
        if self.max_retries < 0:
            raise ConfigError("max-retries", "must be nonnegative")

    @property
    def epoch_us(self) -> float:
        return self.epoch_ms * 1000.0

    @property
    def reliability(self) -> ReliabilityParams:
        return ReliabilityParams(self.loss_rate, self.timeout, self.max_retries, self.seed)

    def splitter(self) -> SplitterConfig:
        return SplitterConfig(
            page_size=self.page_size,
            top_size=self.top_region,
            initial_region=self.initial_region,
            c=self.c_init,
            epoch_us=self.epoch_us,
            merge_factor=self.merge_factor,
            adjust_c=self.c_adjust,
        )

    def with_values(self, values: Mapping[str, str]) -> SimConfig:
        """Return a copy with ``key -> text`` settings applied (later keys win)."""
        changes: dict[str, object] = {}
        latency: dict[str, float] = {}
        for key, text in values.items():
            key = key.strip().lower()
            try:
                if key in _KEYS:
                    attr, parse = _KEYS[key]
                    changes[attr] = parse(str(text))
                elif key in _LATENCY_KEYS:
                    latency[_LATENCY_KEYS[key]] = float(text)
                else:
                    raise ConfigError(key, "unknown configuration key")
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(key, str(exc)) from None
        if latency:
            try:
                changes["latency"] = dataclasses.replace(self.latency, **latency)
            except ValueError as exc:
                raise ConfigError("latency", str(exc)) from None
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict[str, object]:
        out: dict[str, object] = {key: getattr(self, attr) for key, (attr, _) in _KEYS.items()}
        out.update({key: getattr(self.latency, attr) for key, attr in _LATENCY_KEYS.items()})
        return out


def parse_config_lines(lines: Iterable[str]) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}", f"expected key=value, got {raw.strip()!r}")
        values[key.strip()] = value.strip()
    return values


def load_config(path: str | Path | None = None, overrides: Mapping[str, str] | None = None) -> SimConfig:
    values = parse_config_lines(Path(path).read_text().splitlines()) if path else {}
    values.update(overrides or {})
    return SimConfig().with_values(values)
