"""Logical-clock message bus between stations.

Envelopes are scheduled for delivery at ``now + latency`` and popped in
(delivery time, insertion order). Links may drop or reorder; receivers use
the per-stream sequence number to flag stale frames.
"""

from __future__ import annotations

import dataclasses
import enum
import heapq
import json
import struct
from dataclasses import dataclass, field
from typing import Any, BinaryIO, Iterator, Optional

import numpy as np

ENVELOPE_KINDS = ("EgoMotion", "DetectionList", "TrackList", "EnvModel", "Trajectory",
                  "ServiceOffer", "OffloadRequest", "OffloadAck", "OffloadCancel", "MapSet")


@dataclass
class Envelope:
    kind: str
    payload: Any
    src_station: int
    dst_station: int
    generated_at: float
    seq: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ENVELOPE_KINDS:
            raise ValueError(f"unknown envelope kind {self.kind!r}")

    @property
    def stream(self) -> tuple[int, str]:
        return (self.src_station, self.kind)


@dataclass(frozen=True)
class LinkModel:
    base_latency: float = 0.0  # ms
    jitter: float = 0.0  # ms, uniform half-width
    drop_probability: float = 0.0

    def __post_init__(self):
        if self.base_latency < 0 or self.jitter < 0:
            raise ValueError("latency and jitter must be non-negative")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop probability must lie in [0, 1]")


LINK_PROFILES = {
    "ideal": LinkModel(0.0, 0.0, 0.0),
    "wifi": LinkModel(10.0, 5.0, 0.001),
    "degraded": LinkModel(60.0, 20.0, 0.02),
}


@dataclass
class Delivery:
    envelope: Envelope
    delivered_at: float
    stale: bool = False

    @property
    def latency_ms(self) -> float:
        return (self.delivered_at - self.envelope.generated_at) * 1e3


@dataclass
class Bus:
    link: LinkModel = field(default_factory=LinkModel)
    seed: int = 0
    capture: Optional[BinaryIO] = None

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)
        self._queue: list = []
        self._counter = 0
        self._next_seq: dict[tuple[int, str], int] = {}
        self._last_seq: dict[tuple[int, int, str], int] = {}
        self.sent = 0
        self.dropped = 0
        self.delivered = 0
        self.links: dict[tuple[int, int], LinkModel] = {}

    def link_for(self, src: int, dst: int) -> LinkModel:
        return self.links.get((src, dst), self.link)

    def send(self, env: Envelope, now: float, link: Optional[LinkModel] = None) -> Optional[float]:
        """Schedule delivery; returns the delivery time or ``None`` when dropped."""
        if env.src_station == env.dst_station:
            raise ValueError("source and destination station must differ")
        if env.seq is None:
            env.seq = self._next_seq.get(env.stream, 0)
        self._next_seq[env.stream] = max(self._next_seq.get(env.stream, 0), env.seq + 1)
        link = link or self.link_for(env.src_station, env.dst_station)
        self.sent += 1
        # both draws happen every time so a change in drop rate does not shift jitter
        u_drop = self.rng.random()
        u_jit = self.rng.uniform(-1.0, 1.0)
        if u_drop < link.drop_probability:
            self.dropped += 1
            return None
        latency = max(link.base_latency + u_jit * link.jitter, 0.0) * 1e-3
        at = now + latency
        return self.schedule(env, at)

    def schedule(self, env: Envelope, at: float) -> float:
        if at < env.generated_at:
            raise ValueError("delivery before generation")
        heapq.heappush(self._queue, (at, self._counter, env))
        self._counter += 1
        return at

    def next_due(self) -> Optional[float]:
        return self._queue[0][0] if self._queue else None

    def deliver_due(self, now: float) -> list[Delivery]:
        out = []
        while self._queue and self._queue[0][0] <= now:
            at, _, env = heapq.heappop(self._queue)
            out.append(self._receive(env, at))
        return out

    def _receive(self, env: Envelope, at: float) -> Delivery:
        key = (env.src_station, env.dst_station, env.kind)
        last = self._last_seq.get(key)
        stale = last is not None and env.seq <= last
        if not stale:
            self._last_seq[key] = env.seq
        self.delivered += 1
        if self.capture is not None:
            write_frame(self.capture, envelope_record(env, at, stale))
        return Delivery(env, at, stale)

    def in_flight(self) -> int:
        return len(self._queue)

    def reconcile(self) -> bool:
        return self.sent == self.delivered + self.dropped + self.in_flight()


def jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        items = sorted(obj) if isinstance(obj, (set, frozenset)) else obj
        return [jsonable(x) for x in items]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float):
        return round(obj, 6)
    return obj


def envelope_record(env: Envelope, delivered_at: float, stale: bool) -> dict:
    return {"kind": env.kind, "src": env.src_station, "dst": env.dst_station,
            "seq": env.seq, "generated_at": round(env.generated_at, 6),
            "delivered_at": round(delivered_at, 6), "stale": stale,
            "payload": jsonable(env.payload)}


def write_frame(fh: BinaryIO, record: dict) -> None:
    data = json.dumps(record, sort_keys=True, separators=(",", ":")).encode()
    fh.write(struct.pack("<I", len(data)))
    fh.write(data)


def read_frames(fh: BinaryIO) -> Iterator[dict]:
    while True:
        head = fh.read(4)
        if not head:
            return
        if len(head) < 4:
            raise ValueError("truncated length prefix")
        (n,) = struct.unpack("<I", head)
        data = fh.read(n)
        if len(data) < n:
            raise ValueError("truncated frame")
        yield json.loads(data)
