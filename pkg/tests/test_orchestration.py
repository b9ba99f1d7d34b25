import itertools

import numpy as np
import pytest

from offloadsafe.orchestration import (
    FallbackReason, MissingLocalChain, NoActiveOffload, OffloadState, ServiceDescriptor,
    ServiceState, count_device_switches, enumerate_compositions, local_services, make_service,
    select_composition, trigger_fallback, try_offload)

REMOTE3 = [make_service(k, 1) for k in ("MOT", "ENV", "TPL")]


def chain_kinds(c):
    return tuple(s.kind for s in c.services)


def test_local_only_has_one_composition():
    comps = enumerate_compositions(local_services())
    assert len(comps) == 1
    assert chain_kinds(comps[0]) == ("DET", "MOT", "ENV", "TPL", "CTRL")
    assert count_device_switches(comps[0]) == 0


def test_full_remote_offer_gives_four_configurations():
    comps = enumerate_compositions(local_services() + REMOTE3)
    assert len(comps) == 4
    assert not comps[0].offloaded_kinds
    assert {c.offloaded_kinds for c in comps} == {
        frozenset(), frozenset({"MOT"}), frozenset({"MOT", "ENV", "TPL"}), frozenset({"ENV", "TPL"})}


def test_remote_mot_only_gives_two():
    assert len(enumerate_compositions(local_services() + [make_service("MOT", 1)])) == 2


def test_device_switch_counts():
    comps = {c.offloaded_kinds: c for c in enumerate_compositions(local_services() + REMOTE3)}
    assert count_device_switches(comps[frozenset()]) == 0
    assert count_device_switches(comps[frozenset({"MOT"})]) == 2
    assert count_device_switches(comps[frozenset({"ENV", "TPL"})]) == 2
    assert count_device_switches(comps[frozenset({"MOT", "ENV", "TPL"})]) == 2
    assert comps[frozenset({"MOT"})].switches == (0, 1)


def test_env_and_tpl_never_split():
    offer = [make_service("ENV", 1), make_service("TPL", 2)]
    comps = enumerate_compositions(local_services() + offer)
    assert all(c.offloaded_kinds in (frozenset(), frozenset({"ENV", "TPL"})) for c in comps)
    assert len(comps) == 1


def test_missing_local_chain():
    with pytest.raises(MissingLocalChain):
        enumerate_compositions([s for s in local_services() if s.kind != "ENV"])


def test_descriptor_invariants():
    with pytest.raises(ValueError):
        make_service("CTRL", 1)
    with pytest.raises(ValueError):
        make_service("MOT", -1)
    with pytest.raises(ValueError):
        ServiceDescriptor("x", "LIDAR", frozenset(), frozenset())


# -- brute-force oracle ---------------------------------------------------------------------

def _valid_chain(chain, side):
    if chain[0].requirements or chain[-1].kind != "CTRL":
        return False
    for a, b in zip(chain, chain[1:]):
        if not (a.guarantees & b.requirements):
            return False
        if not b.requirements <= (a.guarantees | side):
            return False
    st = {}
    for s in chain:
        st.setdefault(s.kind, set()).add(s.station)
    if "ENV" in st and "TPL" in st and st["ENV"] != st["TPL"]:
        return False
    return all(s.station == 0 for s in chain if s.kind in ("DET", "CTRL"))


def brute_compositions(services):
    side = frozenset().union(*(s.guarantees for s in services if not s.requirements))
    out = set()
    for n in range(1, 6):
        for chain in itertools.permutations(services, n):
            if _valid_chain(chain, side):
                out.add(tuple(s.id for s in chain))
    return out


def test_enumeration_matches_brute_force():
    rng = np.random.default_rng(4)
    kinds = ("DET", "MOT", "ENV", "TPL", "MAP", "EGO")
    for trial in range(25):
        services = local_services()
        for k in range(int(rng.integers(0, 6))):
            kind = kinds[int(rng.integers(len(kinds)))]
            station = int(rng.integers(1, 3))
            services.append(make_service(kind, station, id=f"{kind}@{station}#{k}"))
        assert len(services) <= 12
        got = {tuple(s.id for s in c.services) for c in enumerate_compositions(services)}
        assert got == brute_compositions(services), trial


# -- lifecycle ---------------------------------------------------------------------------------

def test_full_offer_offloads_everything():
    state = try_offload(OffloadState.initial(), REMOTE3, now=1.0)
    assert state.offloaded_kinds == {"MOT", "ENV", "TPL"}
    state.check()
    assert all(state.local[k].state is ServiceState.INACTIVE for k in ("MOT", "ENV", "TPL"))


def test_selection_prefers_more_kinds_then_mot():
    best = select_composition(local_services(), [make_service("MOT", 1), make_service("ENV", 2),
                                                 make_service("TPL", 2)])
    assert best.offloaded_kinds == {"MOT", "ENV", "TPL"}
    only_mot = select_composition(local_services(), [make_service("MOT", 1)])
    assert only_mot.offloaded_kinds == {"MOT"}


def test_offer_ignored_while_waiting_or_empty():
    state = OffloadState.initial()
    state.wait_until = 5.0
    assert try_offload(state, REMOTE3, now=4.99).offloaded_kinds == frozenset()
    assert try_offload(OffloadState.initial(), [], now=0.0).offloaded_kinds == frozenset()
    assert try_offload(state, REMOTE3, now=5.0).offloaded_kinds == {"MOT", "ENV", "TPL"}


def test_fallback_restores_local_services_and_starts_timer():
    state = try_offload(OffloadState.initial(t_wait=10.0), [make_service("MOT", 1)], now=2.0)
    trigger_fallback(state, 12.0, FallbackReason.LATENCY)
    assert state.offloaded_kinds == frozenset()
    assert state.wait_until == pytest.approx(22.0)
    state.check()
    try_offload(state, REMOTE3, now=23.0)
    trigger_fallback(state, 24.0, FallbackReason.SAFETY, "map check")
    assert state.fallback_count == 2
    assert all(state.local[k].state is ServiceState.ACTIVE for k in ("MOT", "ENV", "TPL"))
    falls = state.events.where(event="fallback")
    assert [r[3] for r in falls] == ["qos_latency", "safety: map check"]


def test_fallback_without_offload_is_an_error():
    with pytest.raises(NoActiveOffload):
        trigger_fallback(OffloadState.initial(), 0.0, FallbackReason.SAFETY)


def test_switching_between_configurations_keeps_one_instance_active():
    state = OffloadState.initial(t_wait=0.1)
    try_offload(state, [make_service("MOT", 1)], 0.0)
    state.check()
    try_offload(state, REMOTE3, 0.5)
    state.check()
    assert state.offloaded_kinds == {"MOT", "ENV", "TPL"}
    trigger_fallback(state, 1.0, FallbackReason.AREA_EXIT)
    try_offload(state, [make_service("ENV", 1), make_service("TPL", 1)], 1.2)
    state.check()
    assert state.offloaded_kinds == {"ENV", "TPL"}


def test_offload_time_accrues_per_kind():
    state = try_offload(OffloadState.initial(), [make_service("MOT", 1)], 0.0)
    for _ in range(10):
        state.accrue(0.05)
    assert state.per_kind_offload_time["MOT"] == pytest.approx(0.5)
    assert state.per_kind_offload_time["ENV"] == 0.0
