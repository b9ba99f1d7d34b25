"""Per-stream latency and inter-arrival monitoring for remote services."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional


# slack for float round-off when times in seconds are turned into ms
EPS_MS = 1e-6


class ClockSkew(Exception):
    pass


class QosVerdict(str, Enum):
    OK = "Ok"
    LATENCY = "LatencyViolation"
    INTER_ARRIVAL = "InterArrivalViolation"


@dataclass(frozen=True)
class QosConfig:
    l_max: float = 50.0  # ms
    dt_max: float = 100.0  # ms

    def __post_init__(self):
        if self.l_max <= 0 or self.dt_max <= 0:
            raise ValueError("QoS thresholds must be positive")


@dataclass
class QosRecord:
    kind: str
    last_arrival: Optional[float] = None  # s
    samples: deque = field(default_factory=lambda: deque(maxlen=256))
    # last_arrival holds the activation time until the first message arrives
    awaiting_first: bool = True

    def reset(self, now: Optional[float] = None) -> None:
        """Start a fresh stream; ``now`` arms the silence watchdog."""
        self.last_arrival = now
        self.awaiting_first = True
        self.samples.clear()


def observe(record: QosRecord, generated_at: float, received_at: float,
            cfg: QosConfig) -> QosVerdict:
    """Check one received message. Times in seconds, thresholds in ms.

    Latency is checked before the inter-arrival gap.
    """
    if received_at < generated_at:
        raise ClockSkew(f"received at {received_at} before generation at {generated_at}")
    latency = (received_at - generated_at) * 1e3
    gap = None if record.awaiting_first else (received_at - record.last_arrival) * 1e3
    record.last_arrival = received_at
    record.awaiting_first = False
    record.samples.append((latency, gap))
    if latency > cfg.l_max + EPS_MS:
        return QosVerdict.LATENCY
    if gap is not None and gap > cfg.dt_max + EPS_MS:
        return QosVerdict.INTER_ARRIVAL
    return QosVerdict.OK


def watchdog(record: QosRecord, now: float, cfg: QosConfig) -> QosVerdict:
    """Flag a stream that has gone silent for longer than ``dt_max``."""
    if record.last_arrival is None:
        return QosVerdict.OK
    if (now - record.last_arrival) * 1e3 > cfg.dt_max + EPS_MS:
        return QosVerdict.INTER_ARRIVAL
    return QosVerdict.OK
