"""Service descriptors, composition search and the offload lifecycle."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

from .telemetry import CsvLog, event_log

OFFLOADABLE = ("MOT", "ENV", "TPL")
KINDS = ("DET", "MOT", "ENV", "TPL", "CTRL", "MAP", "EGO")

# requirement / guarantee tags per kind
STANDARD_IO = {
    "DET": (frozenset(), frozenset({"detections"})),
    "MOT": (frozenset({"detections"}), frozenset({"tracks"})),
    "ENV": (frozenset({"tracks", "map data", "ego motion"}), frozenset({"environment model"})),
    "TPL": (frozenset({"environment model", "vehicle metadata"}), frozenset({"trajectories"})),
    "CTRL": (frozenset({"trajectories"}), frozenset({"actuation"})),
    "MAP": (frozenset(), frozenset({"map data"})),
    "EGO": (frozenset(), frozenset({"ego motion", "vehicle metadata"})),
}

VALID_CONFIGS = (frozenset(), frozenset({"MOT"}), frozenset(OFFLOADABLE), frozenset({"ENV", "TPL"}))


class OrchestrationError(Exception):
    pass


class MissingLocalChain(OrchestrationError):
    pass


class NoActiveOffload(OrchestrationError):
    pass


class ServiceState(str, Enum):
    INACTIVE = "Inactive"
    ACTIVE = "Active"


class FallbackReason(str, Enum):
    LATENCY = "qos_latency"
    INTER_ARRIVAL = "qos_inter_arrival"
    SAFETY = "safety"
    AREA_EXIT = "area_exit"


@dataclass
class ServiceDescriptor:
    id: str
    kind: str
    requirements: frozenset
    guarantees: frozenset
    station: int = 0
    state: ServiceState = ServiceState.INACTIVE

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown service kind {self.kind!r}")
        if self.station < 0:
            raise ValueError("station must be non-negative")
        if self.kind == "CTRL" and self.station != 0:
            raise ValueError("vehicle control is always local")
        self.requirements = frozenset(self.requirements)
        self.guarantees = frozenset(self.guarantees)

    def __hash__(self):
        return hash(self.id)

    def __eq__(self, other):
        return isinstance(other, ServiceDescriptor) and other.id == self.id

    @property
    def local(self) -> bool:
        return self.station == 0


def make_service(kind: str, station: int = 0, id: Optional[str] = None) -> ServiceDescriptor:
    req, gua = STANDARD_IO[kind]
    return ServiceDescriptor(id or f"{kind}@{station}", kind, req, gua, station)


def local_services() -> list[ServiceDescriptor]:
    return [make_service(k, 0) for k in KINDS]


@dataclass(frozen=True)
class Composition:
    """Main processing chain from the first service (leaf) to actuation (root)."""

    services: tuple[ServiceDescriptor, ...]
    switches: tuple[int, ...]

    @property
    def offloaded_kinds(self) -> frozenset:
        return frozenset(s.kind for s in self.services if not s.local)

    @property
    def distributed(self) -> bool:
        return bool(self.switches)

    def __repr__(self):
        chain = " -> ".join(f"{s.kind}@{s.station}" for s in self.services)
        return f"Composition({chain})"


def device_switches(chain) -> tuple[int, ...]:
    """Boundary index i where service i and i+1 run on different stations."""
    return tuple(i for i in range(len(chain) - 1) if chain[i].station != chain[i + 1].station)


def count_device_switches(c: Composition) -> int:
    return len(c.switches)


def _links(prev: ServiceDescriptor, nxt: ServiceDescriptor, side: frozenset) -> bool:
    """``prev`` feeds ``nxt`` and the sources cover whatever ``prev`` does not."""
    shared = prev.guarantees & nxt.requirements
    return bool(shared) and nxt.requirements <= (prev.guarantees | side)


def _admissible(chain) -> bool:
    if chain[0].requirements or chain[-1].kind != "CTRL":
        return False
    by_kind = {s.kind: s for s in chain}
    if "ENV" in by_kind and "TPL" in by_kind and by_kind["ENV"].station != by_kind["TPL"].station:
        return False
    return all(s.local for s in chain if s.kind in ("DET", "CTRL"))


def enumerate_compositions(available: Iterable[ServiceDescriptor]) -> list[Composition]:
    """All valid chains, searched from actuation back to a service with no requirements.

    Services without requirements (detection, map, ego data) act as side
    sources for any requirement the chain predecessor does not cover.
    """
    services = sorted(set(available), key=lambda s: (s.station, KINDS.index(s.kind), s.id))
    side = frozenset().union(*(s.guarantees for s in services if not s.requirements)) \
        if services else frozenset()
    found: list[tuple] = []

    def extend(chain: list[ServiceDescriptor]):
        head = chain[0]
        if not head.requirements:
            if _admissible(chain):
                found.append(tuple(chain))
            return
        for s in services:
            if s in chain or s.kind == "CTRL":
                continue
            if _links(s, head, side):
                chain.insert(0, s)
                extend(chain)
                chain.pop(0)

    for root in services:
        if root.kind == "CTRL" and root.local:
            extend([root])

    comps = [Composition(ch, device_switches(ch)) for ch in found]
    local = [c for c in comps if not c.offloaded_kinds and all(s.local for s in c.services)]
    if not local:
        raise MissingLocalChain("local services cannot form a complete chain")
    rest = sorted((c for c in comps if c not in local),
                  key=lambda c: tuple((s.station, s.id) for s in c.services))
    return local[:1] + local[1:] + rest


def _selection_key(c: Composition):
    kinds = c.offloaded_kinds
    return (len(kinds), "MOT" in kinds)


@dataclass
class OffloadState:
    local: dict[str, ServiceDescriptor]
    remote: dict[str, ServiceDescriptor] = field(default_factory=dict)
    active_composition: Optional[Composition] = None
    offloaded_kinds: frozenset = frozenset()
    wait_until: float = float("-inf")
    fallback_count: int = 0
    per_kind_offload_time: dict[str, float] = field(
        default_factory=lambda: {k: 0.0 for k in OFFLOADABLE})
    t_wait: float = 10.0
    events: CsvLog = field(default_factory=event_log)

    @classmethod
    def initial(cls, services: Optional[Iterable[ServiceDescriptor]] = None,
                t_wait: float = 10.0) -> "OffloadState":
        svc = list(services) if services is not None else local_services()
        local = {s.kind: s for s in svc if s.local}
        comp = enumerate_compositions(svc)[0]
        for s in local.values():
            s.state = ServiceState.ACTIVE
        return cls(local=local, active_composition=comp, t_wait=t_wait)

    def active(self, kind: str) -> ServiceDescriptor:
        if kind in self.offloaded_kinds:
            return self.remote[kind]
        return self.local[kind]

    def accrue(self, dt: float) -> None:
        for k in self.offloaded_kinds:
            self.per_kind_offload_time[k] += dt

    def check(self) -> None:
        """Exactly one instance per offloadable kind is active."""
        for k in OFFLOADABLE:
            flags = [self.local[k].state is ServiceState.ACTIVE]
            if k in self.remote:
                flags.append(self.remote[k].state is ServiceState.ACTIVE)
            if sum(flags) != 1:
                raise AssertionError(f"{k}: {sum(flags)} active instances")
        if self.offloaded_kinds not in VALID_CONFIGS:
            raise AssertionError(f"invalid configuration {sorted(self.offloaded_kinds)}")


def _set(state: OffloadState, svc: ServiceDescriptor, new: ServiceState, now: float) -> None:
    if svc.state is not new:
        svc.state = new
        event = "activate" if new is ServiceState.ACTIVE else "deactivate"
        state.events.add(now, svc.id, event, svc.kind)


def trigger_fallback(state: OffloadState, now: float, reason: FallbackReason,
                     detail: str = "") -> OffloadState:
    """Drop every remote service, reactivate the local ones and start the wait timer."""
    if not state.offloaded_kinds:
        raise NoActiveOffload("fallback requested without an active offload")
    for k in sorted(state.offloaded_kinds, key=OFFLOADABLE.index):
        _set(state, state.remote[k], ServiceState.INACTIVE, now)
        _set(state, state.local[k], ServiceState.ACTIVE, now)
    state.offloaded_kinds = frozenset()
    state.active_composition = enumerate_compositions(state.local.values())[0]
    state.wait_until = now + state.t_wait
    state.fallback_count += 1
    state.events.add(now, "orchestrator", "fallback", f"{reason.value}: {detail}".rstrip(": "))
    return state


def select_composition(local: Iterable[ServiceDescriptor],
                       offer: Iterable[ServiceDescriptor]) -> Composition:
    """Composition with the most offloaded kinds; ties prefer a remote MOT."""
    comps = enumerate_compositions(list(local) + [s for s in offer if not s.local])
    best = comps[0]
    for c in comps[1:]:
        if _selection_key(c) > _selection_key(best):
            best = c
    return best


def try_offload(state: OffloadState, offer: Iterable[ServiceDescriptor], now: float) -> OffloadState:
    offer = [s for s in offer if not s.local]
    if now < state.wait_until or not offer:
        return state
    best = select_composition(state.local.values(), offer)
    if best.offloaded_kinds == state.offloaded_kinds:
        return state
    chosen = {s.kind: s for s in best.services}
    for k in OFFLOADABLE:
        if k in best.offloaded_kinds:
            old = state.remote.get(k)
            if old is not None and old is not chosen[k]:
                _set(state, old, ServiceState.INACTIVE, now)
            state.remote[k] = chosen[k]
            _set(state, state.local[k], ServiceState.INACTIVE, now)
            _set(state, chosen[k], ServiceState.ACTIVE, now)
        else:
            if k in state.remote:
                _set(state, state.remote[k], ServiceState.INACTIVE, now)
            _set(state, state.local[k], ServiceState.ACTIVE, now)
    state.offloaded_kinds = best.offloaded_kinds
    state.active_composition = best
    state.events.add(now, "orchestrator", "composition",
                     f"offloaded={'+'.join(sorted(best.offloaded_kinds, key=OFFLOADABLE.index))} "
                     f"switches={count_device_switches(best)}")
    return state
