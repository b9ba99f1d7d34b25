"""Closed-loop simulation of one scenario.

Station 0 is the vehicle, station 1 the edge server that offers MOT, ENV and
TPL inside its areas, station 9 the attacker. Everything that crosses
stations travels over the bus, including the attacker's injections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import BinaryIO, Optional

import numpy as np

from .attacker import Attacker
from .geometry import Box, Polyline, obb_overlap
from .network import Bus, Envelope
from .orchestration import (OFFLOADABLE, FallbackReason, OffloadState, make_service,
                            select_composition, trigger_fallback, try_offload)
from .pipeline import (Outcome, PipelineInputs, RouteMap, Stage, Trajectory, VehicleSpec,
                       run_pipeline, select_stages)
from .qos import QosRecord, QosVerdict, observe, watchdog
from .scenario import ScenarioConfig, VehicleSpawn
from .telemetry import CsvLog
from .world import (EgoMotion, IDMParams, OffRoute, PlannerParams, Tracker, VehicleState,
                    build_environment, build_grid, curve_route, find_leader, plan_trajectory,
                    sense, step_idm, straight_route)

CAV, MEC, ATTACKER = 0, 1, 9
# the stream through which each remote kind reaches the vehicle
STREAM_OF = {"MOT": "TrackList", "TPL": "Trajectory"}
SERVICE_OF = {v: k for k, v in STREAM_OF.items()}
OFFER_PERIOD = 0.5
REQUEST_TIMEOUT = 1.0
REMOTE_TRACK_IDS = 100_000


def config_tag(kinds) -> str:
    return "+".join(k for k in OFFLOADABLE if k in kinds) or "local"


def route_points(route: dict) -> np.ndarray:
    if route["type"] == "straight":
        return straight_route(float(route.get("length", 400.0)), float(route.get("step", 5.0)))
    return curve_route(float(route.get("straight", 150.0)), float(route.get("radius", 60.0)),
                       float(route.get("angle", 90.0)), float(route.get("tail", 150.0)),
                       float(route.get("step", 5.0)))


@dataclass
class RunReport:
    name: str
    seed: int
    mufasa: bool
    attack: str
    areas: str
    sim_time: float = 0.0
    collisions: int = 0
    collision_detail: str = ""
    goal_reached: bool = False
    failure: bool = False
    fallbacks: list = field(default_factory=list)  # (time, reason, detail)
    stage_exec: dict = field(default_factory=lambda: {s.value: 0 for s in Stage})
    stage_detected: dict = field(default_factory=lambda: {s.value: 0 for s in Stage})
    config_stage_exec: dict = field(default_factory=dict)  # config tag -> stage -> count
    offload_time: dict = field(default_factory=lambda: {k: 0.0 for k in OFFLOADABLE})
    local_time: dict = field(default_factory=lambda: {k: 0.0 for k in OFFLOADABLE})
    pipeline_invocations: int = 0
    pipeline_safe: int = 0
    injections: int = 0
    # per attack window: (kind, start, end, first effect time, first fallback after it)
    attack_windows: list = field(default_factory=list)

    @property
    def safety_fallbacks(self) -> int:
        return sum(1 for f in self.fallbacks if f[1] == FallbackReason.SAFETY.value)


@dataclass
class RunResult:
    report: RunReport
    events: CsvLog
    qos: CsvLog
    stages: CsvLog
    attacks: CsvLog
    trace: CsvLog


class _World:
    """Ground truth: IDM traffic on the route lane and the opposite lane."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.true_map = RouteMap.from_reference(route_points(cfg.route), cfg.lane_width, "route")
        ref = self.true_map.reference
        self.maps = {
            "route": self.true_map,
            "decoy": RouteMap.from_reference(ref.offset(cfg.decoy_offset).points,
                                             cfg.lane_width, "decoy"),
        }
        self.main = ref
        self.oncoming = Polyline(ref.offset(cfg.lane_width).points[::-1])
        self.vehicles: list[VehicleState] = []
        self.spawns: list[VehicleSpawn] = []
        for i, sp in enumerate(cfg.vehicles):
            route = self.main if sp.lane == "main" else self.oncoming
            self.vehicles.append(VehicleState(i + 1, route, sp.s, sp.speed, (sp.length, sp.width),
                                              IDMParams(v0=sp.v0), sp.lane))
            self.spawns.append(sp)
        self.ego_spec = VehicleSpec(cfg.ego.length, cfg.ego.width)

    def step(self, t: float, dt: float, ego_s: float, ego_speed: float) -> None:
        """Advance every vehicle from ``t - dt`` to ``t``; the ego leads main-lane traffic behind it."""
        ego = VehicleState(0, self.main, ego_s, ego_speed,
                           (self.ego_spec.length, self.ego_spec.width))
        lanes: dict[str, list[VehicleState]] = {"main": [ego], "oncoming": []}
        for v in self.vehicles:
            lanes[v.lane].append(v)
        leader_of: dict[int, Optional[VehicleState]] = {}
        for members in lanes.values():
            members.sort(key=lambda v: v.s)
            for a, b in zip(members, members[1:] + [None]):
                leader_of[id(a)] = b
        t0 = t - dt
        new = []
        for v, sp in zip(self.vehicles, self.spawns):
            if sp.halted(t0):
                a = -sp.stop_decel
                v_new = max(v.speed + a * dt, 0.0)
                ds = (v.speed * v.speed / (2 * sp.stop_decel) if v_new == 0.0
                      else v.speed * dt + 0.5 * a * dt * dt)
                new.append(VehicleState(v.id, v.route, v.s + ds, v_new, v.extent, v.idm, v.lane))
            else:
                new.append(step_idm(v, leader_of[id(v)], dt))
        self.vehicles = new

    def boxes(self) -> list[Box]:
        return [v.box() for v in self.vehicles]


class Simulation:
    def __init__(self, cfg: ScenarioConfig, capture: Optional[BinaryIO] = None):
        self.cfg = cfg
        self.dt = cfg.dt
        seeds = np.random.SeedSequence(cfg.seed).spawn(4)
        self.world = _World(cfg)
        self.bus = Bus(cfg.link_model, seed=seeds[0], capture=capture)
        self.rng_cav = np.random.default_rng(seeds[1])
        self.rng_infra = np.random.default_rng(seeds[2])
        self.attacker = Attacker([_copy_spec(a) for a in cfg.attacks], seed=seeds[3])
        self.ego = self.world.ego_spec
        self.planner = PlannerParams(idm=IDMParams(v0=cfg.ego.v0, T=2.0, s0=2.5, a_max=1.5,
                                                   b=2.0, b_max=8.0))
        self.state = OffloadState.initial(t_wait=cfg.safety.t_wait)
        self.remote_desc = {k: make_service(k, MEC) for k in OFFLOADABLE}
        self.report = RunReport(cfg.name, cfg.seed, cfg.mufasa_enabled, cfg.attack_label,
                                config_tag(cfg.offload_areas))
        self.qos_log = CsvLog(("time", "kind", "latency_ms", "inter_arrival_ms", "verdict"))
        self.stage_log = CsvLog(("time", "stage", "outcome", "detail"))
        self.trace = CsvLog(("time", "id", "x", "y", "heading", "speed"))

        # vehicle side
        ref = self.world.main
        p0 = ref.point_at(cfg.ego.s)
        self.ego_pose = (float(p0[0]), float(p0[1]), ref.heading_at(cfg.ego.s), cfg.ego.speed)
        self.local_tracker = Tracker()
        self.local_tracks: list = []
        self.remote_tracks: list = []  # latest accepted TrackList from the server
        self.qos = {s: QosRecord(s) for s in SERVICE_OF}
        self.offered: frozenset = frozenset()
        self.pending: Optional[tuple[float, frozenset]] = None
        self.traj: Optional[Trajectory] = None
        self._desired_cache: dict = {}

        # server side
        self.mec_active: frozenset = frozenset()
        self.mec_map: Optional[RouteMap] = None
        self.mec_ego: Optional[EgoMotion] = None
        self.mec_dets: list = []
        self.mec_env_in: tuple = (-math.inf, -1, [])  # (time, order, tracks) feeding remote ENV
        self._env_order = 0
        self.remote_tracker = Tracker(first_id=REMOTE_TRACK_IDS)
        self.remote_tracker.reset(warm=False)
        self.ghost_session = 0
        self.next_offer = OFFER_PERIOD

    # -- helpers -------------------------------------------------------------------------

    @property
    def kinds(self) -> frozenset:
        return self.state.offloaded_kinds

    def _ego_motion(self, t: float) -> EgoMotion:
        x, y, h, v = self.ego_pose
        return EgoMotion((x, y), h, v, t, (self.ego.length, self.ego.width))

    def _send(self, kind: str, payload, src: int, dst: int, t: float) -> None:
        self.bus.send(Envelope(kind, payload, src, dst, t), t)

    def _env_write(self, t: float, tracks) -> None:
        self._env_order += 1
        key = (t, self._env_order)
        if key > self.mec_env_in[:2]:
            self.mec_env_in = (t, self._env_order, list(tracks))

    def _fallback(self, t: float, reason: FallbackReason, detail: str) -> None:
        was = self.kinds
        trigger_fallback(self.state, t, reason, detail)
        self.report.fallbacks.append((round(t, 6), reason.value, detail))
        self._send("OffloadCancel", {}, CAV, MEC, t)
        self.pending = None
        if "MOT" in was:
            self.local_tracker.reset(warm=True)

    def _desired(self, offered: frozenset) -> frozenset:
        if offered not in self._desired_cache:
            comp = select_composition(self.state.local.values(),
                                      [self.remote_desc[k] for k in sorted(offered)])
            self._desired_cache[offered] = comp.offloaded_kinds
        return self._desired_cache[offered]

    # -- vehicle: deliveries ---------------------------------------------------------------

    def _cav_receive(self, d, t: float, fresh: dict) -> None:
        env = d.envelope
        if env.kind in SERVICE_OF:
            svc = SERVICE_OF[env.kind]
            if svc not in self.kinds:
                return
            rec = self.qos[env.kind]
            verdict = observe(rec, env.generated_at, d.delivered_at, self.cfg.qos)
            lat, gap = rec.samples[-1]
            self.qos_log.add(round(d.delivered_at, 6), svc, round(lat, 3),
                             "" if gap is None else round(gap, 3), verdict.value)
            if verdict is not QosVerdict.OK:
                reason = (FallbackReason.LATENCY if verdict is QosVerdict.LATENCY
                          else FallbackReason.INTER_ARRIVAL)
                self._fallback(t, reason, f"{env.kind} {verdict.value} "
                                          f"latency={lat:.1f}ms")
                return
            if not d.stale:
                fresh[env.kind] = env.payload
        elif env.kind == "ServiceOffer":
            self.offered = frozenset(env.payload["kinds"])
        elif env.kind == "OffloadAck":
            kinds = frozenset(env.payload["kinds"])
            self.pending = None
            before = self.kinds
            if t >= self.state.wait_until:
                try_offload(self.state, [self.remote_desc[k] for k in sorted(kinds)], t)
            if self.kinds != kinds:
                # the server runs something we no longer want
                self._send("OffloadCancel", {}, CAV, MEC, t)
                self.state.events.add(t, "vehicle", "cancel", f"ack for {config_tag(kinds)} refused")
                return
            for k in self.kinds - before:
                if k in STREAM_OF:
                    self.qos[STREAM_OF[k]].reset(t)
            if "MOT" in self.kinds and "MOT" not in before:
                self.remote_tracks = []

    def _orchestrate(self, t: float) -> None:
        """Area checks and offload requests after this step's messages."""
        lost = self.kinds - self.offered
        if lost:
            self._fallback(t, FallbackReason.AREA_EXIT,
                           f"{config_tag(lost)} no longer offered")
        want = self._desired(self.offered) if self.offered else frozenset()
        if not want or want == self.kinds or t < self.state.wait_until:
            return
        if self.pending is not None and t - self.pending[0] < REQUEST_TIMEOUT:
            return
        self.pending = (t, want)
        self._send("OffloadRequest", {"kinds": sorted(want), "map_id": self.world.true_map.id},
                   CAV, MEC, t)
        self.state.events.add(t, "vehicle", "request", config_tag(want))

    # -- server ------------------------------------------------------------------------------

    def _mec_receive(self, d, t: float) -> None:
        env = d.envelope
        if env.kind == "EgoMotion":
            if not d.stale:
                self.mec_ego = env.payload
        elif env.kind == "DetectionList":
            if not d.stale and "MOT" in self.mec_active:
                self.mec_dets.append(env.payload)
        elif env.kind == "TrackList":
            # uplink from a local MOT into the remote ENV
            if not d.stale and "ENV" in self.mec_active and "MOT" not in self.mec_active:
                self._env_write(d.delivered_at, env.payload)
        elif env.kind == "OffloadRequest":
            kinds = frozenset(env.payload["kinds"])
            if "MOT" in kinds and "MOT" not in self.mec_active:
                self.ghost_session += 1
            if "ENV" in kinds and "ENV" not in self.mec_active:
                self.mec_env_in = (-math.inf, -1, [])
            self.mec_active = kinds
            self.mec_map = self.world.maps[env.payload["map_id"]]
            self._send("OffloadAck", {"kinds": sorted(kinds)}, MEC, CAV, t)
        elif env.kind == "OffloadCancel":
            self.mec_active = frozenset()
        elif env.kind == "MapSet":
            self.mec_map = self.world.maps[env.payload["map_id"]]

    def _mec_cycle(self, t: float, truth: list[Box]) -> None:
        if {"ENV", "TPL"} <= self.mec_active and self.mec_ego is not None and self.mec_map:
            envm = build_environment(self.mec_env_in[2], self.mec_ego, self.mec_map,
                                     self.cfg.lane_width)
            try:
                traj = plan_trajectory(envm, params=self.planner, source_station=MEC)
            except OffRoute:
                traj = None
            if traj is not None:
                self._send("Trajectory", traj, MEC, CAV, t)
        for dets in sorted(self.mec_dets, key=lambda ds: ds[0].stamp if ds else -1.0):
            stamp = dets[0].stamp if dets else None
            if stamp is not None and (self.remote_tracker.stamp is None
                                      or stamp >= self.remote_tracker.stamp):
                self.remote_tracker.update(dets, stamp)
        self.mec_dets = []
        infra = sense(truth, self.cfg.infra_position, self.cfg.infra_sensor, self.rng_infra, t)
        tracks = self.remote_tracker.update(infra, t)
        if "MOT" in self.mec_active:
            ego = self.mec_ego
            pos = ego.position if ego else self.cfg.infra_position
            heading = ego.heading if ego else 0.0
            out = self.attacker.ghosts(tracks, t, self.mec_active, self.ghost_session, pos, heading)
            self._send("TrackList", out, MEC, CAV, t)
            if "ENV" in self.mec_active:
                self._env_write(t, tracks)
        if t + 1e-9 >= self.next_offer:
            self.next_offer += OFFER_PERIOD
            if self.mec_ego is not None:
                x, y = self.mec_ego.position
                kinds = [k for k in OFFLOADABLE
                         if k in self.cfg.offload_areas and _inside(self.cfg.offload_areas[k], x, y)]
                self._send("ServiceOffer", {"kinds": kinds}, MEC, CAV, t)

    # -- attacker ------------------------------------------------------------------------------

    def _attack(self, t: float) -> None:
        a = self.attacker
        a.resolve(t, self.mec_active)
        a.map_swap(t, self.mec_active, self.mec_map.id if self.mec_map else None,
                   lambda map_id: self._send("MapSet", {"map_id": map_id}, ATTACKER, MEC, t))

        def inject(ti: float) -> bool:
            if "ENV" in self.mec_active:
                if "MOT" in self.mec_active:
                    self._env_write(ti, [])
                else:
                    # spoofed uplink from the vehicle
                    self._send("TrackList", [], CAV, MEC, ti)
                return True
            if "MOT" in self.mec_active:
                self._send("TrackList", [], MEC, CAV, ti)
                return True
            return False

        self.report.injections += a.spam(t - self.dt, t, self.mec_active, inject)

    # -- vehicle: perception, planning, validation ------------------------------------------------

    def _radar_lead(self) -> Optional[tuple[float, float]]:
        x, y, h, _ = self.ego_pose
        fov = self.cfg.sensor.fov_radius
        objs = [(v, v.position, v.extent[0]) for v in self.world.vehicles
                if math.hypot(v.position[0] - x, v.position[1] - y) <= fov]
        lead, gap = find_leader(objs, (x, y), self.ego.length, self.world.true_map,
                                self.cfg.lane_width)
        if lead is None:
            return None
        return gap, max(lead.speed * math.cos(lead.heading - h), 0.0)

    def _plan_local(self, t: float, tracks) -> Optional[Trajectory]:
        envm = build_environment(tracks, self._ego_motion(t), self.world.true_map,
                                 self.cfg.lane_width)
        try:
            return plan_trajectory(envm, params=self.planner, source_station=CAV)
        except OffRoute:
            return None

    def _validate(self, t: float, plan, inputs: PipelineInputs) -> bool:
        tag = config_tag(self.kinds)
        res = run_pipeline(plan, inputs, self.cfg.safety)
        rep = self.report
        rep.pipeline_invocations += 1
        rep.pipeline_safe += res.safe
        per_cfg = rep.config_stage_exec.setdefault(tag, {s.value: 0 for s in Stage})
        for v in res.verdicts:
            rep.stage_exec[v.stage.value] += 1
            per_cfg[v.stage.value] += 1
            self.stage_log.add(t, v.stage.value, v.outcome.value, f"[{tag}] {v.detail}")
        if not res.safe:
            rep.stage_detected[res.stage.value] += 1
            self._fallback(t, FallbackReason.SAFETY, f"{res.stage.value}: {res.reason}")
        return res.safe

    def _cav_cycle(self, t: float, truth: list[Box], fresh: dict) -> None:
        x, y, h, v = self.ego_pose
        dets = sense(truth, (x, y), self.cfg.sensor, self.rng_cav, t)
        self._send("EgoMotion", self._ego_motion(t), CAV, MEC, t)
        if "MOT" in self.kinds:
            self._send("DetectionList", dets, CAV, MEC, t)
        if "TrackList" in fresh:
            self.remote_tracks = list(fresh["TrackList"])

        def local_chain() -> Optional[Trajectory]:
            if "MOT" not in self.kinds:
                self.local_tracks = self.local_tracker.update(dets, t)
                if "ENV" in self.kinds:
                    self._send("TrackList", self.local_tracks, CAV, MEC, t)
            if "ENV" in self.kinds:
                return None
            tracks = self.remote_tracks if "MOT" in self.kinds else self.local_tracks
            return self._plan_local(t, tracks)

        local_traj = local_chain()
        candidate = fresh.get("Trajectory") if "TPL" in self.kinds else local_traj
        if self.kinds and self.cfg.mufasa_enabled:
            new_tracks = fresh.get("TrackList") if "MOT" in self.kinds else None
            plan = [(s, a) for s, a in select_stages(self.kinds)
                    if (s is Stage.TRACK_VAL and new_tracks is not None)
                    or (s is not Stage.TRACK_VAL and candidate is not None)]
            if plan:
                tracks = self.remote_tracks if "MOT" in self.kinds else self.local_tracks
                grid_fn = lambda: build_grid(truth, (x, y), fov_radius=self.cfg.sensor.fov_radius)
                inputs = PipelineInputs(dets, self.world.true_map, (x, y), tracks, candidate,
                                        grid_fn, self._radar_lead(), self.ego, v)
                if not self._validate(t, plan, inputs):
                    # local services are active again: rerun the local chain now
                    candidate = local_chain()
        if candidate is not None:
            self.traj = candidate

    # -- main loop ----------------------------------------------------------------------------

    def _trace(self, t: float) -> None:
        x, y, h, v = self.ego_pose
        self.trace.add(t, 0, round(x, 4), round(y, 4), round(h, 5), round(v, 4))
        for veh in self.world.vehicles:
            px, py = veh.position
            self.trace.add(t, veh.id, round(px, 4), round(py, 4), round(veh.heading, 5),
                           round(veh.speed, 4))

    def _outcome(self, t: float) -> bool:
        """Record collisions and goal arrival; True ends the run."""
        x, y, h, _ = self.ego_pose
        ego_box = self.ego.box(x, y, h)
        for veh in self.world.vehicles:
            px, py = veh.position
            if math.hypot(px - x, py - y) < 10.0 and obb_overlap(ego_box, veh.box()):
                self._collide(t, f"vehicle {veh.id}")
                return True
        if not self.world.true_map.contains((x, y)):
            self._collide(t, "road departure")
            return True
        if _inside(self.cfg.target_zone, x, y):
            self.report.goal_reached = True
            self.state.events.add(t, "vehicle", "goal", "target zone reached")
            return self.cfg.stop_on_goal
        return False

    def _collide(self, t: float, detail: str) -> None:
        self.report.collisions += 1
        self.report.collision_detail = f"{t:.2f}s {detail}"
        self.state.events.add(t, "vehicle", "collision", detail)

    def run(self) -> RunResult:
        dt = self.dt
        t_end = min(self.cfg.duration, self.cfg.time_limit)
        n_steps = int(round(t_end / dt))
        truth = self.world.boxes()
        self._trace(0.0)
        self._cav_cycle(0.0, truth, {})
        self._mec_cycle(0.0, truth)
        ref = self.world.main
        steps_done = 0
        remote_ticks = {k: 0 for k in OFFLOADABLE}
        for step in range(1, n_steps + 1):
            t = round(step * dt, 9)
            for k in self.kinds:
                remote_ticks[k] += 1
            steps_done = step
            p = self.traj.pose_at(t) if self.traj is not None else None
            if p is not None:
                self.ego_pose = (p.x, p.y, p.heading, p.speed)
            x, y, _, v = self.ego_pose
            self.world.step(t, dt, ref.project((x, y))[0], v)
            truth = self.world.boxes()
            self._trace(t)
            if self._outcome(t):
                break
            self._attack(t)
            fresh: dict = {}
            for d in self.bus.deliver_due(t):
                if d.envelope.dst_station == CAV:
                    self._cav_receive(d, t, fresh)
                else:
                    self._mec_receive(d, t)
            for stream, rec in self.qos.items():
                if SERVICE_OF[stream] in self.kinds and \
                        watchdog(rec, t, self.cfg.qos) is not QosVerdict.OK:
                    self._fallback(t, FallbackReason.INTER_ARRIVAL, f"{stream} silent")
                    fresh.clear()
            self._orchestrate(t)
            self._cav_cycle(t, truth, fresh)
            self._mec_cycle(t, truth)
            self.state.check()
        for k in OFFLOADABLE:
            self.report.offload_time[k] = round(remote_ticks[k] * dt, 9)
            self.report.local_time[k] = round((steps_done - remote_ticks[k]) * dt, 9)
        self._finish(round(steps_done * dt, 9))
        return RunResult(self.report, self.state.events, self.qos_log, self.stage_log,
                         self.attacker.log, self.trace)

    def _finish(self, sim_time: float) -> None:
        rep = self.report
        rep.sim_time = sim_time
        rep.failure = rep.collisions > 0 or not rep.goal_reached
        fb_times = [f[0] for f in rep.fallbacks]
        for i, a in enumerate(self.attacker.schedule):
            rows = [r for r in self.attacker.log if r[1] == self.attacker.name(i)
                    and r[2] == a.kind and not str(r[3]).startswith("randomly")]
            first = rows[0][0] if rows else None
            caught = None
            if first is not None:
                caught = next((ft for ft in fb_times if ft >= first - 1e-9), None)
            rep.attack_windows.append((a.kind, a.start, a.end, first, caught))


def _inside(rect, x: float, y: float) -> bool:
    return rect[0] <= x <= rect[2] and rect[1] <= y <= rect[3]


def _copy_spec(a):
    from dataclasses import replace
    return replace(a, params=dict(a.params))


def run_scenario(cfg: ScenarioConfig, capture: Optional[BinaryIO] = None) -> RunResult:
    return Simulation(cfg, capture).run()
