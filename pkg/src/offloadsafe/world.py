"""Deterministic 2D traffic world and stand-in perception/planning services."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .assignment import hungarian_assign
from .geometry import Box, Polyline
from .grid import OccupancyGrid
from .pipeline import Detection, RouteMap, Track, Trajectory, TrajectoryPoint, VehicleSpec


class OffRoute(Exception):
    pass


class MissingMap(Exception):
    pass


@dataclass(frozen=True)
class IDMParams:
    v0: float = 12.0  # desired speed, m/s
    T: float = 1.5  # time headway, s
    s0: float = 2.0  # jam distance, m
    a_max: float = 1.5
    b: float = 2.0  # comfortable deceleration
    delta: float = 4.0
    b_max: float = 9.0  # physical braking limit


def idm_acceleration(v: float, gap: Optional[float], dv: float, p: IDMParams) -> float:
    """IDM acceleration; ``gap`` None means free road, ``dv`` is v - v_lead."""
    free = 1.0 - (v / p.v0) ** p.delta
    if gap is None:
        return p.a_max * free
    s_star = p.s0 + max(v * p.T + v * dv / (2.0 * math.sqrt(p.a_max * p.b)), 0.0)
    return p.a_max * (free - (s_star / max(gap, 1e-3)) ** 2)


@dataclass
class VehicleState:
    id: int
    route: Polyline
    s: float  # arc position along ``route``
    speed: float
    extent: tuple[float, float] = (4.5, 1.8)
    idm: IDMParams = field(default_factory=IDMParams)
    lane: str = "main"

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be non-negative")
        if self.extent[0] <= 0 or self.extent[1] <= 0:
            raise ValueError("extent must be positive")

    @property
    def position(self) -> tuple[float, float]:
        p = self.route.point_at(self.s)
        return float(p[0]), float(p[1])

    @property
    def heading(self) -> float:
        return self.route.heading_at(self.s)

    def box(self) -> Box:
        x, y = self.position
        return Box(x, y, self.heading, self.extent[0], self.extent[1])


def bumper_gap(follower: VehicleState, leader: VehicleState) -> float:
    return leader.s - follower.s - 0.5 * (leader.extent[0] + follower.extent[0])


def step_idm(follower: VehicleState, leader: Optional[VehicleState], dt: float,
             params: Optional[IDMParams] = None) -> VehicleState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    p = params or follower.idm
    v = follower.speed
    if leader is None:
        a = idm_acceleration(v, None, 0.0, p)
    else:
        a = idm_acceleration(v, bumper_gap(follower, leader), v - leader.speed, p)
    a = max(a, -p.b_max)
    v_new = v + a * dt
    if v_new < 0:
        # stop within the step
        ds = -v * v / (2 * a) if a < 0 else 0.0
        v_new = 0.0
    else:
        ds = v * dt + 0.5 * a * dt * dt
    return replace(follower, s=follower.s + ds, speed=v_new)


# -- sensing --------------------------------------------------------------------------

@dataclass(frozen=True)
class SensorModel:
    fov_radius: float = 50.0
    detection_probability: float = 1.0
    position_noise_sigma: float = 0.0
    clutter_rate: float = 0.0
    clutter_extent: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self):
        if self.fov_radius <= 0:
            raise ValueError("fov_radius must be positive")
        if not 0 < self.detection_probability <= 1:
            raise ValueError("detection probability must lie in (0, 1]")
        if self.position_noise_sigma < 0 or self.clutter_rate < 0:
            raise ValueError("noise and clutter must be non-negative")


def sense(objects: Sequence[Box], origin, model: SensorModel, rng: np.random.Generator,
          stamp: float = 0.0) -> list[Detection]:
    """Detections of ``objects`` within range of ``origin`` plus Poisson clutter."""
    ox, oy = float(origin[0]), float(origin[1])
    out = []
    for b in objects:
        # draw all variates per object so the stream does not depend on outcomes
        u = rng.random()
        noise = rng.normal(0.0, 1.0, 2) * model.position_noise_sigma
        if math.hypot(b.x - ox, b.y - oy) > model.fov_radius:
            continue
        if u >= model.detection_probability:
            continue
        out.append(Detection((b.x + float(noise[0]), b.y + float(noise[1])),
                             (b.length, b.width), stamp, b.heading))
    n_clutter = int(rng.poisson(model.clutter_rate)) if model.clutter_rate > 0 else 0
    for _ in range(n_clutter):
        r = model.fov_radius * math.sqrt(rng.random())
        phi = rng.uniform(-math.pi, math.pi)
        out.append(Detection((ox + r * math.cos(phi), oy + r * math.sin(phi)),
                             model.clutter_extent, stamp, 0.0))
    return out


def fuse_detections(groups: Sequence[Sequence[Detection]], radius: float = 1.0) -> list[Detection]:
    """Merge detections of the same object seen by several sensors (greedy, in order)."""
    fused: list[list[Detection]] = []
    for group in groups:
        for d in group:
            for cluster in fused:
                c = cluster[0]
                if math.hypot(c.position[0] - d.position[0], c.position[1] - d.position[1]) <= radius:
                    cluster.append(d)
                    break
            else:
                fused.append([d])
    out = []
    for cluster in fused:
        x = sum(d.position[0] for d in cluster) / len(cluster)
        y = sum(d.position[1] for d in cluster) / len(cluster)
        c = cluster[0]
        out.append(Detection((x, y), c.extent, max(d.stamp for d in cluster), c.heading))
    return out


# -- tracking ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrackerParams:
    gate: float = 3.0  # m
    confirm_hits: int = 3  # M
    confirm_window: int = 4  # N
    max_misses: int = 3
    accel_sigma: float = 2.0
    meas_sigma: float = 0.05
    init_speed_var: float = 100.0


@dataclass
class _KfTrack:
    id: int
    x: np.ndarray
    P: np.ndarray
    extent: tuple[float, float]
    heading: float
    hits: list = field(default_factory=list)
    misses: int = 0
    confirmed: bool = False


class Tracker:
    """Global-nearest-neighbour tracker with constant-velocity Kalman filters."""

    def __init__(self, params: Optional[TrackerParams] = None, first_id: int = 1):
        self.params = params or TrackerParams()
        self.tracks: list[_KfTrack] = []
        self._next_id = first_id
        self._warm = True
        self.stamp: Optional[float] = None

    def reset(self, warm: bool = True) -> None:
        """Drop all tracks. A warm restart confirms tracks born on the next frame."""
        self.tracks.clear()
        self._warm = warm
        self.stamp = None

    def _predict(self, dt: float) -> None:
        F = np.eye(4)
        F[0, 2] = F[1, 3] = dt
        q = self.params.accel_sigma ** 2
        G = np.array([[0.5 * dt * dt, 0], [0, 0.5 * dt * dt], [dt, 0], [0, dt]])
        Q = G @ G.T * q
        for t in self.tracks:
            t.x = F @ t.x
            t.P = F @ t.P @ F.T + Q

    def _update(self, t: _KfTrack, d: Detection) -> None:
        H = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])
        R = np.eye(2) * max(self.params.meas_sigma, 1e-3) ** 2
        y = np.array(d.position) - H @ t.x
        S = H @ t.P @ H.T + R
        K = t.P @ H.T @ np.linalg.inv(S)
        t.x = t.x + K @ y
        t.P = (np.eye(4) - K @ H) @ t.P
        t.extent = d.extent
        t.heading = d.heading

    def update(self, detections: Sequence[Detection], now: float) -> list[Track]:
        p = self.params
        dt = 0.0 if self.stamp is None else now - self.stamp
        if dt < 0:
            raise ValueError("tracker time went backwards")
        self._predict(dt)
        self.stamp = now
        assigned_t: set[int] = set()
        assigned_d: set[int] = set()
        cost = None
        if self.tracks and detections:
            tp = np.array([t.x[:2] for t in self.tracks])
            dp = np.array([d.position for d in detections])
            cost = np.hypot(tp[:, None, 0] - dp[None, :, 0], tp[:, None, 1] - dp[None, :, 1])
            # confirmed tracks pick first so tentative ones cannot steal their detections
            for confirmed in (True, False):
                rows = [i for i, t in enumerate(self.tracks) if t.confirmed == confirmed]
                cols = [j for j in range(len(detections)) if j not in assigned_d]
                if not rows or not cols:
                    continue
                sub = cost[np.ix_(rows, cols)]
                for a, b in hungarian_assign(sub):
                    i, j = rows[a], cols[b]
                    if cost[i, j] <= p.gate:
                        self._update(self.tracks[i], detections[j])
                        assigned_t.add(i)
                        assigned_d.add(j)
        for i, t in enumerate(self.tracks):
            hit = i in assigned_t
            t.hits = (t.hits + [hit])[-p.confirm_window:]
            t.misses = 0 if hit else t.misses + 1
            if not t.confirmed and sum(t.hits) >= p.confirm_hits:
                t.confirmed = True
        self.tracks = [t for t in self.tracks if t.misses < p.max_misses]
        for j, d in enumerate(detections):
            # a second return inside the gate of a known track is not a new object
            if j in assigned_d or (cost is not None and cost[:, j].min() <= p.gate):
                continue
            P = np.diag([p.meas_sigma ** 2, p.meas_sigma ** 2, p.init_speed_var, p.init_speed_var])
            t = _KfTrack(self._next_id, np.array([d.position[0], d.position[1], 0.0, 0.0]), P,
                         d.extent, d.heading, [True], 0, confirmed=self._warm)
            self._next_id += 1
            self.tracks.append(t)
        self._warm = False
        return self.published(now)

    def published(self, now: float) -> list[Track]:
        out = []
        for t in self.tracks:
            if not t.confirmed:
                continue
            vx, vy = float(t.x[2]), float(t.x[3])
            speed = max(vx * math.cos(t.heading) + vy * math.sin(t.heading), 0.0)
            out.append(Track(t.id, (float(t.x[0]), float(t.x[1])), t.heading, speed, t.extent, now))
        return out


def track_update(tracker: Tracker, detections: Sequence[Detection], now: float) -> list[Track]:
    return tracker.update(detections, now)


# -- environment model ---------------------------------------------------------------------

@dataclass(frozen=True)
class EgoMotion:
    position: tuple[float, float]
    heading: float
    speed: float
    stamp: float
    extent: tuple[float, float] = (4.5, 1.8)


@dataclass
class EnvModel:
    tracks: list[Track]
    ego: EgoMotion
    route_map: RouteMap
    stamp: float
    leader: Optional[Track] = None
    leader_gap: Optional[float] = None


def find_leader(objects, ego_position, ego_length: float, route_map: RouteMap,
                lane_width: float = 3.5):
    """Nearest object ahead whose centre lies within half a lane of the reference.

    ``objects`` is a sequence of (object, position, length). Returns
    (object, bumper gap) or (None, None).
    """
    ref = route_map.reference
    s_ego, _ = ref.project(ego_position)
    best = (None, None)
    best_ds = math.inf
    for obj, pos, length in objects:
        s, d = ref.project(pos)
        if abs(d) > 0.5 * lane_width or s <= s_ego:
            continue
        # projections clamp at the route ends; ignore objects past the end
        if s >= ref.length - 1e-6 and math.hypot(*(np.asarray(pos) - ref.points[-1])) > 0.5 * lane_width:
            continue
        ds = s - s_ego
        if ds < best_ds:
            best_ds = ds
            best = (obj, ds - 0.5 * (length + ego_length))
    return best


def build_environment(tracks: Sequence[Track], ego: EgoMotion, route_map: Optional[RouteMap],
                      lane_width: float = 3.5) -> EnvModel:
    if route_map is None:
        raise MissingMap("environment model needs map data")
    leader, gap = find_leader([(t, t.position, t.extent[0]) for t in tracks],
                              ego.position, ego.extent[0], route_map, lane_width)
    return EnvModel(list(tracks), ego, route_map, ego.stamp, leader, gap)


# -- planning ------------------------------------------------------------------------------

@dataclass(frozen=True)
class PlannerParams:
    horizon: float = 4.0
    dt: float = 0.1
    idm: IDMParams = field(default_factory=lambda: IDMParams(v0=12.0, T=2.0, s0=2.5, a_max=1.5,
                                                             b=2.0, b_max=8.0))
    converge_length: float = 8.0  # lateral offset e-folding distance, m
    off_route_limit: float = 25.0


def plan_trajectory(env: EnvModel, route_map: Optional[RouteMap] = None,
                    params: Optional[PlannerParams] = None, source_station: int = 0) -> Trajectory:
    """Follow the reference of ``route_map`` with an IDM speed profile behind the leader."""
    p = params or PlannerParams()
    rmap = route_map or env.route_map
    ref = rmap.reference
    s0, d0 = ref.project(env.ego.position)
    if abs(d0) > p.off_route_limit:
        raise OffRoute(f"ego {abs(d0):.1f} m from reference of map {rmap.id}")
    lead_s = lead_v = None
    if env.leader is not None:
        tr = env.leader
        ls, _ = ref.project(tr.predict(env.stamp))
        lead_s = ls
        lead_v = tr.speed * math.cos(tr.heading - ref.heading_at(ls))
        lead_v = max(lead_v, 0.0)
        lead_len = tr.extent[0]
    n = int(round(p.horizon / p.dt))
    v = env.ego.speed
    s = s0
    ego_len = env.ego.extent[0]
    arc = np.empty(n + 1)
    speeds = np.empty(n + 1)
    for k in range(n + 1):
        arc[k], speeds[k] = s, v
        if lead_s is not None:
            gap = lead_s + lead_v * k * p.dt - s - 0.5 * (lead_len + ego_len)
            a = idm_acceleration(v, gap, v - lead_v, p.idm)
        else:
            a = idm_acceleration(v, None, 0.0, p.idm)
        a = min(max(a, -p.idm.b_max), p.idm.a_max)
        v_next = v + a * p.dt
        if v_next < 0:
            s += v * v / (2 * -a) if a < 0 else 0.0
            v = 0.0
        else:
            s += v * p.dt + 0.5 * a * p.dt * p.dt
            v = v_next
    # lateral offset decays exponentially with travelled distance
    d = d0 * np.exp(-(arc - s0) / p.converge_length)
    base = ref.points_at(arc)
    h = ref.headings_at(arc)
    xs = base[:, 0] - d * np.sin(h)
    ys = base[:, 1] + d * np.cos(h)
    hs = h + np.arctan(-d / p.converge_length)
    pts = [TrajectoryPoint(float(xs[k]), float(ys[k]), float(hs[k]), float(speeds[k]),
                           round(k * p.dt, 9)) for k in range(n + 1)]
    return Trajectory(tuple(pts), env.stamp, source_station)


# -- grid mapping --------------------------------------------------------------------------

def build_grid(objects: Sequence[Box], ego_position, resolution: float = 0.2,
               size: float = 40.0, fov_radius: float = 50.0) -> OccupancyGrid:
    """Ego-centred grid with the footprints of objects inside the sensor range."""
    grid = OccupancyGrid.centered(ego_position, size, resolution)
    ex, ey = ego_position
    reach = fov_radius
    for b in objects:
        if math.hypot(b.x - ex, b.y - ey) > reach:
            continue
        grid.fill_box(b)
    return grid


# -- routes --------------------------------------------------------------------------------

def straight_route(length: float, step: float = 5.0) -> np.ndarray:
    xs = np.arange(0.0, length + 1e-9, step)
    return np.stack([xs, np.zeros_like(xs)], axis=1)


def curve_route(straight: float, radius: float, angle_deg: float, tail: float,
                step: float = 5.0) -> np.ndarray:
    """Straight section, left-hand arc, straight exit."""
    pts = [np.array([x, 0.0]) for x in np.arange(0.0, straight + 1e-9, step)]
    ang = math.radians(angle_deg)
    n_arc = max(int(math.ceil(radius * ang / step)), 2)
    cx, cy = straight, radius
    for k in range(1, n_arc + 1):
        a = ang * k / n_arc
        pts.append(np.array([cx + radius * math.sin(a), cy - radius * math.cos(a)]))
    end = pts[-1]
    direction = np.array([math.cos(ang), math.sin(ang)])
    for x in np.arange(step, tail + 1e-9, step):
        pts.append(end + direction * x)
    return np.array(pts)
