"""Latency and reliability model for the blade-switch-blade fabric.

All times are simulated microseconds.  A remote fetch crosses four one-way
hops (blade->switch->memory->switch->blade) plus one pipeline pass and one
recirculation for the directory update; with the defaults that is 9 us.
An invalidation round is the same shape seen from a sharer: a recirculated
pass emits the multicast, the copy crosses a hop, waits in the sharer's
FIFO, pays the blade service time and a TLB shootdown, and the ACK crosses
back and is folded into the directory by another pass.  Defaults also give
9 us, so a sequential flush-then-fetch costs 18 us.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass
from enum import Enum

SWITCH = -1  # pseudo blade id for the switch itself


@dataclass(frozen=True)
class LatencyParams:
    one_way_hop: float = 2.0
    switch_pipeline: float = 0.5
    recirculation: float = 0.5
    tlb_shootdown: float = 2.0
    local_hit_ns: float = 100.0
    blade_inval_service: float = 1.0

    def __post_init__(self) -> None:
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"latency parameter {name} must be nonnegative")

    @property
    def local_hit(self) -> float:
        return self.local_hit_ns / 1000.0

    @property
    def switch_pass(self) -> float:
        return self.switch_pipeline + self.recirculation

    @property
    def fetch(self) -> float:
        return 4 * self.one_way_hop + self.switch_pass

    @property
    def grant(self) -> float:
        """Permission-only upgrade for a page the requester already holds."""
        return 2 * self.one_way_hop + self.switch_pass

    @property
    def inval_delivery(self) -> float:
        """Time from the switch accepting a transition until a sharer receives its copy."""
        return self.switch_pass + self.one_way_hop

    def inval_round(self, queue_wait: float = 0.0) -> float:
        return (
            self.inval_delivery
            + queue_wait
            + self.blade_inval_service
            + self.tlb_shootdown
            + self.one_way_hop
            + self.switch_pass
        )

    @property
    def control_rpc(self) -> float:
        """Round trip for a control-plane request (alloc, free, permission change)."""
        return 2 * self.one_way_hop


@dataclass(frozen=True)
class ReliabilityParams:
    loss_rate: float = 0.0
    timeout: float = 100.0
    max_retries: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.loss_rate < 1.0:
            raise ValueError("loss_rate must be in [0, 1)")
        if self.timeout < 0 or self.max_retries < 0:
            raise ValueError("timeout and max_retries must be nonnegative")


class MsgKind(Enum):
    FETCH_REQ = "fetch-req"
    FETCH_RESP = "fetch-resp"
    INVAL = "inval"
    INVAL_ACK = "inval-ack"
    WRITEBACK = "writeback"
    RESET = "reset"


RESPONSE_OF = {MsgKind.FETCH_REQ: MsgKind.FETCH_RESP, MsgKind.INVAL: MsgKind.INVAL_ACK}


@dataclass(frozen=True)
class Message:
    kind: MsgKind
    src: int
    dst: int
    addr: int
    seq: int
    sharers: frozenset[int] | None = None


@dataclass(frozen=True)
class Delivery:
    delivered: bool
    attempts: int
    penalty: float  # time lost to timeouts before the successful attempt


@dataclass(frozen=True)
class InvalResult:
    blade: int
    delivered: bool
    attempts: int
    queue_wait: float
    latency: float


@dataclass(frozen=True)
class TransitionPlan:
    """Resolved message shape of one directory transition."""

    fetches: int = 1
    inval_rounds: tuple[float, ...] = ()
    sequential: bool = False
    fetch_penalty: float = 0.0


class Fabric:
    def __init__(self, latency: LatencyParams | None = None, reliability: ReliabilityParams | None = None) -> None:
        self.latency = latency or LatencyParams()
        self.reliability = reliability or ReliabilityParams()
        self._rng = random.Random(self.reliability.seed)
        self._seq = 0
        self._busy_until: dict[int, float] = {}
        self.sent: Counter[MsgKind] = Counter()
        self.lost: Counter[MsgKind] = Counter()

    def message(self, kind: MsgKind, src: int, dst: int, addr: int, sharers=None) -> Message:
        self._seq += 1
        return Message(kind, src, dst, addr, self._seq, frozenset(sharers) if sharers is not None else None)

    def _transmit(self, kind: MsgKind) -> bool:
        self.sent[kind] += 1
        if self.reliability.loss_rate and self._rng.random() < self.reliability.loss_rate:
            self.lost[kind] += 1
            return False
        return True

    def send_with_reliability(self, msg: Message) -> Delivery:
        """Send ``msg`` (and await its response, if it has one) with timeout/retransmit."""
        response = RESPONSE_OF.get(msg.kind)
        limit = 1 + self.reliability.max_retries
        for attempt in range(1, limit + 1):
            ok = self._transmit(msg.kind) and (response is None or self._transmit(response))
            if ok:
                return Delivery(True, attempt, (attempt - 1) * self.reliability.timeout)
        return Delivery(False, limit, limit * self.reliability.timeout)

    def send_until_delivered(self, msg: Message) -> int:
        """Posted writes keep retrying off the critical path; returns attempts used."""
        attempts = 1
        while not self._transmit(msg.kind):
            attempts += 1
        return attempts

    def invalidate(self, msg: Message, recipient: int, issued_at: float) -> InvalResult:
        """One sharer's invalidation round, including FIFO queueing at the blade."""
        lat = self.latency
        limit = 1 + self.reliability.max_retries
        elapsed = 0.0
        for attempt in range(1, limit + 1):
            if self._transmit(MsgKind.INVAL):
                arrival = issued_at + elapsed + lat.inval_delivery
                start = max(arrival, self._busy_until.get(recipient, 0.0))
                self._busy_until[recipient] = start + lat.blade_inval_service
                wait = start - arrival
                if self._transmit(MsgKind.INVAL_ACK):
                    return InvalResult(recipient, True, attempt, wait, elapsed + lat.inval_round(wait))
            elapsed += self.reliability.timeout
        return InvalResult(recipient, False, limit, 0.0, elapsed)

    def queue_wait(self, blade: int, arrival: float) -> float:
        return max(0.0, self._busy_until.get(blade, 0.0) - arrival)

    def cost_of(self, plan: TransitionPlan) -> float:
        data = plan.fetches * self.latency.fetch if plan.fetches else self.latency.grant
        fetch = data + plan.fetch_penalty
        inval = max(plan.inval_rounds, default=0.0)
        if plan.sequential:
            return inval + fetch
        return max(fetch, inval)
