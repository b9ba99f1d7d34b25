"""Message-level attacks against active remote services.

Three attacks are modelled: swapping the map of the remote planner,
flooding the track stream consumed by environment modelling with empty
lists, and appending ghost objects to outbound track lists. Ground truth is
never touched; every effect travels through messages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .pipeline import Track
from .telemetry import CsvLog

ATTACK_KINDS = ("MapSwap", "EmptyTrackSpam", "GhostTracks")
GHOST_ID_BASE = 900_000


@dataclass
class AttackSpec:
    kind: str
    start: float
    duration: float
    params: dict = field(default_factory=dict)
    # kind is drawn at start time among the attacks that hit an active service
    random: bool = False

    def __post_init__(self):
        if self.random and self.kind == "Random":
            self.kind = ATTACK_KINDS[0]
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.start < 0:
            raise ValueError("attack start must be non-negative")
        if self.duration <= 0:
            raise ValueError("attack duration must be positive")
        self.params.setdefault("rate", 100.0)
        self.params.setdefault("ghosts", 3)
        self.params.setdefault("ghost_range", [5.0, 40.0])
        self.params.setdefault("ghost_half_angle", 20.0)
        self.params.setdefault("map_id", "decoy")

    @property
    def end(self) -> float:
        return self.start + self.duration

    def active(self, t: float) -> bool:
        return self.start <= t < self.end


def targets(kind: str, offloaded) -> bool:
    """Whether ``kind`` has a remote service to hit under this configuration."""
    offloaded = set(offloaded)
    if kind == "MapSwap":
        return "TPL" in offloaded
    if kind == "GhostTracks":
        return "MOT" in offloaded
    return bool(offloaded & {"MOT", "ENV"})


def spam_times(spec: AttackSpec, t0: float, t1: float) -> list[float]:
    """Injection instants of a flooding attack in the half-open interval (t0, t1]."""
    period = 1.0 / spec.params["rate"]
    n_total = int(math.floor(spec.duration / period - 1e-9)) + 1
    k0 = 0 if t0 < spec.start else int(math.floor((t0 - spec.start) / period + 1e-9)) + 1
    out = []
    for k in range(k0, n_total):
        t = round(spec.start + k * period, 9)
        if t > t1 + 1e-12:
            break
        out.append(t)
    return out


class Attacker:
    """Holds the schedule and decides what to inject at each step.

    The harness owns the message plumbing; it passes callbacks for the three
    effects so the attacker stays free of simulator internals.
    """

    def __init__(self, schedule: list[AttackSpec], seed: int = 0):
        self.schedule = sorted(schedule, key=lambda a: (a.start, a.kind))
        self.rng = np.random.default_rng(seed)
        self.log = CsvLog(("time", "attack", "kind", "detail"))
        self._resolved: set[int] = set()
        self._ghosts: dict[tuple[int, int], list[tuple[float, float, float]]] = {}

    def name(self, i: int) -> str:
        return f"A{i}"

    def resolve(self, now: float, offloaded) -> None:
        for i, a in enumerate(self.schedule):
            if a.random and i not in self._resolved and a.start <= now:
                options = [k for k in ATTACK_KINDS if targets(k, offloaded)] or list(ATTACK_KINDS)
                a.kind = options[int(self.rng.integers(len(options)))]
                self._resolved.add(i)
                self.log.add(now, self.name(i), a.kind, f"randomly chosen from {'/'.join(options)}")

    def active(self, kind: str, now: float):
        return [(i, a) for i, a in enumerate(self.schedule)
                if a.kind == kind and a.active(now) and (not a.random or i in self._resolved)]

    def map_swap(self, now: float, offloaded, current_map: Optional[str],
                 send_map: Callable[[str], None]) -> None:
        for i, a in self.active("MapSwap", now):
            target = a.params["map_id"]
            if not targets("MapSwap", offloaded):
                continue
            if current_map != target:
                send_map(target)
                self.log.add(now, self.name(i), "MapSwap", f"map_id={target}")

    def spam(self, t0: float, t1: float, offloaded,
             inject: Callable[[float], bool]) -> int:
        n = 0
        for i, a in enumerate(self.schedule):
            if a.kind != "EmptyTrackSpam" or a.end <= t0 or a.start > t1:
                continue
            if a.random and i not in self._resolved:
                continue
            for t in spam_times(a, t0, t1):
                if targets("EmptyTrackSpam", offloaded) and inject(t):
                    n += 1
                    self.log.add(t, self.name(i), "EmptyTrackSpam", "empty TrackList")
        return n

    def ghosts(self, tracks: list[Track], now: float, offloaded, session: int,
               ego_position, ego_heading: float) -> list[Track]:
        if not targets("GhostTracks", offloaded):
            return tracks
        out = list(tracks)
        for i, a in self.active("GhostTracks", now):
            key = (i, session)
            if key not in self._ghosts:
                lo, hi = a.params["ghost_range"]
                half = math.radians(a.params["ghost_half_angle"])
                placed = []
                for _ in range(int(a.params["ghosts"])):
                    r = float(self.rng.uniform(lo, hi))
                    phi = ego_heading + float(self.rng.uniform(-half, half))
                    placed.append((ego_position[0] + r * math.cos(phi),
                                   ego_position[1] + r * math.sin(phi), ego_heading))
                self._ghosts[key] = placed
                self.log.add(now, self.name(i), "GhostTracks",
                             f"{len(placed)} ghosts placed")
            for g, (x, y, h) in enumerate(self._ghosts[key]):
                out.append(Track(GHOST_ID_BASE + 10 * i + g, (x, y), h, 0.0, (4.5, 1.8), now))
        return out
