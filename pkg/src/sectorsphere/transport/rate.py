"""Rate control: constant additive increase, 8/9 multiplicative decrease."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class RateEvent(Enum):
    ACK = "ack"
    NAK = "nak"
    SYNC_TICK = "sync"


@dataclass
class RateControl:
    rate: float = 100.0
    min_rate: float = 10.0
    max_rate: float = 1e6
    increase_step: float = 10.0
    decrease_factor: float = 8.0 / 9.0
    # a NAK already cut the rate during the current SYNC interval
    loss_in_interval: bool = False
    sent_in_interval: bool = False
    decreases: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.min_rate <= self.max_rate:
            raise ValueError("need 0 < min_rate <= max_rate")
        self.rate = self._clamp(self.rate)

    def _clamp(self, rate: float) -> float:
        return min(self.max_rate, max(self.min_rate, rate))

    def on_nak(self) -> float:
        """NAKs reporting new losses within one SYNC interval form one batch
        and cost a single multiplicative decrease."""
        if not self.loss_in_interval:
            self.rate = self._clamp(self.rate * self.decrease_factor)
            self.decreases += 1
        self.loss_in_interval = True
        return self.rate

    def on_sync(self) -> float:
        if not self.loss_in_interval and self.sent_in_interval:
            self.rate = self._clamp(self.rate + self.increase_step)
        self.loss_in_interval = False
        self.sent_in_interval = False
        return self.rate

    def on_ack(self) -> float:
        return self.rate


def rate_control_update(state, event: RateEvent | str, *, app_limited: bool = False) -> float:
    """Apply one rate-control event and return the new sending rate (packets/s).

    ``state`` is a ``RateControl`` or anything with a ``rate_control`` attribute
    (a ``Connection``). ``app_limited`` marks a SYNC interval in which the
    sender had nothing to send; such intervals earn no increase.
    """
    rc = getattr(state, "rate_control", state)
    event = RateEvent(event) if not isinstance(event, RateEvent) else event
    if event is RateEvent.NAK:
        return rc.on_nak()
    if event is RateEvent.SYNC_TICK:
        if not app_limited:
            rc.sent_in_interval = True
        return rc.on_sync()
    return rc.on_ack()
