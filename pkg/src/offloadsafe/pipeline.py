"""Multi-stage validation of data received from offloaded services.

Five stages run top to bottom; which ones apply depends on the set of
offloaded service kinds. A stage either passes, escalates (tracks are
untrusted and the tracker offload must end) or flags the trajectory unsafe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .assignment import hungarian_assign
from .geometry import Box, Polyline, obb_overlap, point_in_polygon
from .grid import OccupancyGrid, disk_cover

REACTION_TIME = 1.8  # s


class PipelineError(Exception):
    pass


class NotOffloaded(PipelineError):
    pass


class NoDetections(PipelineError):
    pass


class EmptyTrajectory(PipelineError):
    pass


class MissingInput(PipelineError):
    def __init__(self, name: str):
        super().__init__(f"missing pipeline input: {name}")
        self.name = name


class Stage(str, Enum):
    TRACK_VAL = "TrackVal"
    MAP_VAL = "MapVal"
    TRAJ_TRACKS = "TrajTracks"
    TRAJ_DETECTIONS = "TrajDetections"
    TRAJ_GRID = "TrajGrid"


STAGE_ORDER = list(Stage)


class Applicability(str, Enum):
    ALWAYS = "Always"
    CONDITIONAL = "Conditional"


class Outcome(str, Enum):
    PASS = "Pass"
    ESCALATE = "Escalate"
    UNSAFE = "Unsafe"


@dataclass(frozen=True)
class Track:
    id: int
    position: tuple[float, float]
    heading: float
    speed: float
    extent: tuple[float, float]
    stamp: float

    def __post_init__(self):
        if self.extent[0] <= 0 or self.extent[1] <= 0:
            raise ValueError("track extent must be positive")
        if self.speed < 0:
            raise ValueError("track speed must be non-negative")

    def predict(self, t: float) -> tuple[float, float]:
        """Constant-velocity position at absolute time ``t``."""
        dt = t - self.stamp
        return (self.position[0] + self.speed * math.cos(self.heading) * dt,
                self.position[1] + self.speed * math.sin(self.heading) * dt)


@dataclass(frozen=True)
class Detection:
    """Object-level measurement. Orientation of the box but never velocity."""

    position: tuple[float, float]
    extent: tuple[float, float]
    stamp: float
    heading: float = 0.0

    def __post_init__(self):
        if self.extent[0] <= 0 or self.extent[1] <= 0:
            raise ValueError("detection extent must be positive")


@dataclass(frozen=True)
class TrajectoryPoint:
    x: float
    y: float
    heading: float
    speed: float
    t: float


@dataclass(frozen=True)
class Trajectory:
    points: tuple[TrajectoryPoint, ...]
    stamp: float
    source_station: int = 0

    def __post_init__(self):
        if not self.points:
            raise EmptyTrajectory("trajectory has no points")
        if self.points[0].t != 0:
            raise ValueError("trajectory time offsets must start at 0")
        ts = [p.t for p in self.points]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("trajectory time offsets must be strictly increasing")

    def xy(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.points])

    def arc_lengths(self) -> np.ndarray:
        xy = self.xy()
        steps = np.hypot(*np.diff(xy, axis=0).T) if len(xy) > 1 else np.zeros(0)
        return np.concatenate([[0.0], np.cumsum(steps)])

    def within(self, distance: float) -> list[TrajectoryPoint]:
        """Points whose travelled arc length does not exceed ``distance``."""
        s = self.arc_lengths()
        return [p for p, si in zip(self.points, s) if si <= distance + 1e-9]

    def pose_at(self, t_abs: float) -> TrajectoryPoint:
        """Linear interpolation at absolute time; clamps to the ends."""
        rel = t_abs - self.stamp
        pts = self.points
        if rel <= 0:
            return pts[0]
        if rel >= pts[-1].t:
            return pts[-1]
        ts = [p.t for p in pts]
        i = int(np.searchsorted(ts, rel, side="right")) - 1
        a, b = pts[i], pts[i + 1]
        w = (rel - a.t) / (b.t - a.t)
        dh = math.atan2(math.sin(b.heading - a.heading), math.cos(b.heading - a.heading))
        return TrajectoryPoint(a.x + w * (b.x - a.x), a.y + w * (b.y - a.y),
                               a.heading + w * dh, a.speed + w * (b.speed - a.speed), rel)


@dataclass
class RouteMap:
    reference: Polyline
    left_boundary: Polyline
    right_boundary: Polyline
    id: str = "route"

    def __post_init__(self):
        ring = np.vstack([self.left_boundary.points, self.right_boundary.points[::-1]])
        self._ring = ring

    @classmethod
    def from_reference(cls, points, lane_width: float = 3.5, id: str = "route") -> "RouteMap":
        ref = Polyline(points)
        return cls(ref, ref.offset(0.5 * lane_width), ref.offset(-0.5 * lane_width), id)

    @property
    def corridor(self) -> np.ndarray:
        return self._ring

    def contains(self, p) -> bool:
        return point_in_polygon(p, self._ring)

    def check_brackets(self) -> bool:
        return all(self.contains(p) for p in self.reference.points)


@dataclass(frozen=True)
class SafetyParams:
    theta_tr: float = 0.2
    theta_map: float = 0.3
    theta_obj: float = 5.0
    a_b: float = 8.0
    t_wait: float = 10.0
    reaction_time: float = REACTION_TIME

    def __post_init__(self):
        for name in ("theta_tr", "theta_map", "theta_obj", "a_b", "t_wait", "reaction_time"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class VehicleSpec:
    length: float = 4.5
    width: float = 1.8

    def box(self, x: float, y: float, heading: float) -> Box:
        return Box(x, y, heading, self.length, self.width)


@dataclass(frozen=True)
class StageVerdict:
    stage: Stage
    outcome: Outcome
    detail: str = ""

    def __post_init__(self):
        if self.outcome is Outcome.UNSAFE and not self.detail:
            raise ValueError("unsafe verdicts need a detail")


# -- stage selection ----------------------------------------------------------

A, C = Applicability.ALWAYS, Applicability.CONDITIONAL

_PLANS = {
    frozenset({"MOT"}): [(Stage.TRACK_VAL, A), (Stage.MAP_VAL, A),
                         (Stage.TRAJ_DETECTIONS, C), (Stage.TRAJ_GRID, A)],
    frozenset({"MOT", "ENV", "TPL"}): [(Stage.TRACK_VAL, A), (Stage.MAP_VAL, A),
                                       (Stage.TRAJ_TRACKS, C), (Stage.TRAJ_DETECTIONS, C),
                                       (Stage.TRAJ_GRID, C)],
    frozenset({"ENV", "TPL"}): [(Stage.MAP_VAL, A), (Stage.TRAJ_TRACKS, A),
                                (Stage.TRAJ_DETECTIONS, C)],
}


def select_stages(offloaded_kinds) -> list[tuple[Stage, Applicability]]:
    kinds = frozenset(offloaded_kinds)
    if not kinds:
        raise NotOffloaded("nothing is offloaded")
    try:
        return list(_PLANS[kinds])
    except KeyError:
        raise ValueError(f"not an offload configuration: {sorted(kinds)}") from None


# -- distances ------------------------------------------------------------------

def safety_distance(v_now: float, reaction_time: float = REACTION_TIME) -> float:
    if v_now < 0:
        raise ValueError("speed must be non-negative")
    return v_now * reaction_time


def braking_distance(v: float, a_b: float) -> float:
    if v < 0 or a_b <= 0:
        raise ValueError("need v >= 0 and a_b > 0")
    return v * v / (2.0 * a_b)


def follow_distance(v_now: float, v_lead: float, a_b: float,
                    reaction_time: float = REACTION_TIME) -> float:
    gap = braking_distance(v_now, a_b) - braking_distance(v_lead, a_b)
    return max(gap, 0.0) + safety_distance(v_now, reaction_time)


def validation_distance(v_now: float, lead: Optional[tuple[float, float]], p: SafetyParams) -> float:
    """Static validation horizon: following distance behind a leader, else braking distance."""
    if lead is not None:
        return follow_distance(v_now, lead[1], p.a_b, p.reaction_time)
    return braking_distance(v_now, p.a_b)


# -- stage (i): tracks against local detections -----------------------------------

def fov_radius(ego_position, detections: Sequence[Detection]) -> float:
    if not detections:
        raise NoDetections("cannot derive a field of view without detections")
    ex, ey = ego_position
    return max(math.hypot(d.position[0] - ex, d.position[1] - ey) for d in detections)


def validate_tracks(tracks: Sequence[Track], detections: Sequence[Detection], ego_position,
                    p: SafetyParams) -> StageVerdict:
    radius = fov_radius(ego_position, detections)
    t_det = max(d.stamp for d in detections)
    ex, ey = ego_position
    pred = []
    for tr in tracks:
        x, y = tr.predict(t_det)
        if math.hypot(x - ex, y - ey) <= radius:
            pred.append((x, y))
    if not pred:
        return StageVerdict(Stage.TRACK_VAL, Outcome.PASS, "no tracks in field of view")
    tp = np.array(pred)
    dp = np.array([d.position for d in detections])
    cost = np.hypot(tp[:, None, 0] - dp[None, :, 0], tp[:, None, 1] - dp[None, :, 1])
    pairs = hungarian_assign(cost)
    costs = {i: cost[i, j] for i, j in pairs}
    # surplus tracks (more tracks than detections) pay their nearest-detection distance
    per_track = [costs.get(i, cost[i].min()) for i in range(len(pred))]
    mean = float(np.mean(per_track))
    detail = f"mean assignment cost {mean:.3f} m over {len(per_track)} tracks"
    if mean < p.theta_tr:
        return StageVerdict(Stage.TRACK_VAL, Outcome.PASS, detail)
    return StageVerdict(Stage.TRACK_VAL, Outcome.ESCALATE, detail)


# -- stage (ii): trajectory against the local map --------------------------------------

def validate_trajectory_map(traj: Trajectory, route_map: RouteMap, p: SafetyParams) -> StageVerdict:
    xy = traj.xy()
    dist = route_map.reference.distances(xy)
    for k in np.nonzero(dist > p.theta_map)[0]:
        if not route_map.contains(xy[k]):
            return StageVerdict(Stage.MAP_VAL, Outcome.UNSAFE,
                                f"point {k} at t={traj.points[k].t:.2f}s leaves corridor "
                                f"({dist[k]:.2f} m from reference)")
    return StageVerdict(Stage.MAP_VAL, Outcome.PASS, f"max offset {float(dist.max()):.2f} m")


# -- stages (iii)/(iv): low-level collision check ---------------------------------------

def _llcc(points, objects, ego: VehicleSpec, p: SafetyParams, t0: float):
    """``objects`` is a list of (label, pose-at-time callable, heading, extent)."""
    for pt in points:
        ego_box = None
        t_abs = t0 + pt.t
        for label, where, heading, extent in objects:
            ox, oy = where(t_abs)
            if math.hypot(ox - pt.x, oy - pt.y) > p.theta_obj:
                continue
            if ego_box is None:
                ego_box = ego.box(pt.x, pt.y, pt.heading)
            if obb_overlap(ego_box, Box(ox, oy, heading, extent[0], extent[1])):
                return f"collision with {label} at t={pt.t:.2f}s"
    return None


def validate_trajectory_tracks(traj: Trajectory, tracks: Sequence[Track], ego: VehicleSpec,
                               p: SafetyParams, v_now: Optional[float] = None) -> StageVerdict:
    v = traj.points[0].speed if v_now is None else v_now
    horizon = safety_distance(v, p.reaction_time)
    points = traj.within(horizon)
    objects = [(f"track {tr.id}", tr.predict, tr.heading, tr.extent) for tr in tracks]
    hit = _llcc(points, objects, ego, p, traj.stamp)
    if hit:
        return StageVerdict(Stage.TRAJ_TRACKS, Outcome.UNSAFE, hit)
    return StageVerdict(Stage.TRAJ_TRACKS, Outcome.PASS,
                        f"{len(points)} points within {horizon:.1f} m")


def validate_trajectory_detections(traj: Trajectory, detections: Sequence[Detection],
                                   lead: Optional[tuple[float, float]], ego: VehicleSpec,
                                   p: SafetyParams, v_now: Optional[float] = None) -> StageVerdict:
    """``lead`` is (bumper gap m, leader speed m/s) when a leading vehicle is known."""
    v = traj.points[0].speed if v_now is None else v_now
    s_valid = validation_distance(v, lead, p)
    if lead is not None and lead[0] < s_valid:
        return StageVerdict(Stage.TRAJ_DETECTIONS, Outcome.UNSAFE,
                            f"gap {lead[0]:.2f} m below following distance {s_valid:.2f} m")
    points = traj.within(s_valid)
    objects = []
    for k, d in enumerate(detections):
        pos = d.position
        objects.append((f"detection {k}", lambda _t, pos=pos: pos, d.heading, d.extent))
    hit = _llcc(points, objects, ego, p, traj.stamp)
    if hit:
        return StageVerdict(Stage.TRAJ_DETECTIONS, Outcome.UNSAFE, hit)
    return StageVerdict(Stage.TRAJ_DETECTIONS, Outcome.PASS,
                        f"{len(points)} points within {s_valid:.1f} m")


# -- stage (v): occupancy grid -------------------------------------------------------------

def grid_check_radius(grid: OccupancyGrid, disk_radius: float) -> float:
    # disk centre and occupied cell are both only known to a cell; pad by two half-diagonals
    return disk_radius + grid.resolution * math.sqrt(2.0)


def validate_trajectory_grid(traj: Trajectory, grid: OccupancyGrid, ego: VehicleSpec,
                             p: SafetyParams, v_now: Optional[float] = None,
                             disk_radius: Optional[float] = None) -> StageVerdict:
    v = traj.points[0].speed if v_now is None else v_now
    offsets, r = disk_cover(ego.length, ego.width)
    if disk_radius is not None:
        r = disk_radius
    dilated = grid.dilate(grid_check_radius(grid, r))
    s_b = braking_distance(v, p.a_b)
    for pt in traj.within(s_b):
        c, s = math.cos(pt.heading), math.sin(pt.heading)
        for off in offsets:
            cx, cy = pt.x + off * c, pt.y + off * s
            cell = grid.cell_of((cx, cy))
            if cell is None:
                return StageVerdict(Stage.TRAJ_GRID, Outcome.UNSAFE,
                                    f"pose at t={pt.t:.2f}s outside grid")
            if dilated[cell[1], cell[0]]:
                return StageVerdict(Stage.TRAJ_GRID, Outcome.UNSAFE,
                                    f"occupied cell {cell} at t={pt.t:.2f}s")
    return StageVerdict(Stage.TRAJ_GRID, Outcome.PASS, f"clear within {s_b:.1f} m")


# -- orchestration of the stages -------------------------------------------------------------

@dataclass
class PipelineInputs:
    detections: Sequence[Detection]
    route_map: RouteMap
    ego_position: tuple[float, float]
    tracks: Optional[Sequence[Track]] = None
    traj: Optional[Trajectory] = None
    grid: Union[OccupancyGrid, Callable[[], OccupancyGrid], None] = None
    lead: Optional[tuple[float, float]] = None
    ego: VehicleSpec = field(default_factory=VehicleSpec)
    v_now: Optional[float] = None


@dataclass
class PipelineResult:
    safe: bool
    reason: str = ""
    stage: Optional[Stage] = None  # stage credited with the fallback
    verdicts: list[StageVerdict] = field(default_factory=list)
    mot_untrusted: bool = False

    @property
    def executed(self) -> list[Stage]:
        return [v.stage for v in self.verdicts]


def run_pipeline(plan, inputs: PipelineInputs, p: SafetyParams) -> PipelineResult:
    stages = dict(plan)
    res = PipelineResult(safe=True)

    def fail(v: StageVerdict, reason: str):
        if res.safe:
            res.safe, res.reason, res.stage = False, reason, v.stage

    tracks_ok = inputs.tracks is not None
    if Stage.TRACK_VAL in stages and inputs.tracks is not None:
        if inputs.detections:
            v = validate_tracks(inputs.tracks, inputs.detections, inputs.ego_position, p)
            res.verdicts.append(v)
            if v.outcome is not Outcome.PASS:
                tracks_ok = False
                res.mot_untrusted = True
                fail(v, "MOT untrusted: " + v.detail)

    traj_stages = [s for s in stages if s is not Stage.TRACK_VAL]
    if not traj_stages:
        return res
    if inputs.traj is None:
        raise MissingInput("traj")
    traj = inputs.traj

    if Stage.MAP_VAL in stages:
        v = validate_trajectory_map(traj, inputs.route_map, p)
        res.verdicts.append(v)
        if v.outcome is Outcome.UNSAFE:
            fail(v, "map check: " + v.detail)
            return res

    if Stage.TRAJ_TRACKS in stages and tracks_ok:
        v = validate_trajectory_tracks(traj, inputs.tracks, inputs.ego, p, inputs.v_now)
        res.verdicts.append(v)
        if v.outcome is Outcome.UNSAFE:
            fail(v, "tracks check: " + v.detail)
            return res

    det_failed = False
    det_unusable = False
    if Stage.TRAJ_DETECTIONS in stages:
        applicable = stages[Stage.TRAJ_DETECTIONS] is A or not tracks_ok
        if applicable:
            det_unusable = not inputs.detections and inputs.lead is None
            v = validate_trajectory_detections(traj, inputs.detections, inputs.lead,
                                               inputs.ego, p, inputs.v_now)
            res.verdicts.append(v)
            det_failed = v.outcome is Outcome.UNSAFE
            if det_failed and Stage.TRAJ_GRID not in stages:
                fail(v, "detections check: " + v.detail)
                return res

    if Stage.TRAJ_GRID in stages:
        applicable = stages[Stage.TRAJ_GRID] is A or det_failed or det_unusable
        if applicable:
            grid = inputs.grid() if callable(inputs.grid) else inputs.grid
            if grid is None:
                raise MissingInput("grid")
            v = validate_trajectory_grid(traj, grid, inputs.ego, p, inputs.v_now)
            res.verdicts.append(v)
            if v.outcome is Outcome.UNSAFE:
                fail(v, "grid check: " + v.detail)
    return res
