"""Switch resource budgets.

The data plane has two independent pools: SRAM slots for directory entries
and TCAM/match-action rules.  Rules are tracked per category so the
owning modules (translation, outliers, protection) can be cross-checked
against what they report as live.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from mindsim.errors import CapacityError

DIRECTORY = "directory"
TRANSLATION = "translation"
OUTLIER = "outlier"
PROTECTION = "protection"

RULE_CATEGORIES = (TRANSLATION, OUTLIER, PROTECTION)
CATEGORIES = (DIRECTORY, *RULE_CATEGORIES)


@dataclass
class SwitchBudget:
    directory_slots: int = 30_000
    match_action_rules: int = 45_000
    used: dict[str, int] = field(default_factory=lambda: dict.fromkeys(CATEGORIES, 0))

    def __post_init__(self) -> None:
        if self.directory_slots <= 0 or self.match_action_rules <= 0:
            raise ValueError("budgets must be positive")

    def capacity(self, category: str) -> int:
        if category == DIRECTORY:
            return self.directory_slots
        if category in RULE_CATEGORIES:
            return self.match_action_rules
        raise KeyError(category)

    def pool_used(self, category: str) -> int:
        if category == DIRECTORY:
            return self.used[DIRECTORY]
        return self.rules_used

    @property
    def rules_used(self) -> int:
        return sum(self.used[c] for c in RULE_CATEGORIES)

    def available(self, category: str) -> int:
        return self.capacity(category) - self.pool_used(category)

    def reserve(self, category: str, n: int = 1) -> None:
        """Reserve ``n`` units atomically, or raise without changing anything."""
        if n <= 0:
            raise ValueError("reservation must be positive")
        free = self.available(category)
        if n > free:
            raise CapacityError(category, n - free)
        self.used[category] += n

    def release(self, category: str, n: int = 1) -> None:
        if n < 0 or n > self.used[category]:
            raise ValueError(f"cannot release {n} {category} units (in use: {self.used[category]})")
        self.used[category] -= n

    def utilization(self, category: str) -> float:
        return self.pool_used(category) / self.capacity(category)
