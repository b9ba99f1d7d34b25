"""Scenario files (JSON) and their validated in-memory form."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from .attacker import ATTACK_KINDS, AttackSpec
from .network import LINK_PROFILES, LinkModel
from .orchestration import OFFLOADABLE
from .pipeline import SafetyParams
from .qos import QosConfig
from .world import SensorModel


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


@dataclass
class VehicleSpawn:
    lane: str = "main"  # "main" follows the route, "oncoming" runs the opposite lane
    s: float = 0.0
    speed: float = 0.0
    v0: float = 10.0
    length: float = 4.5
    width: float = 1.8
    # halts as [start, duration]: brake at ``stop_decel`` from start, resume IDM afterwards
    stops: list = field(default_factory=list)
    stop_decel: float = 3.0

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValueError("vehicle extent must be positive")
        if self.speed < 0 or self.v0 <= 0:
            raise ValueError("speeds must be positive")
        self.stops = [list(map(float, w)) for w in self.stops]
        if any(len(w) != 2 or w[1] <= 0 for w in self.stops):
            raise ValueError("stops are [start, duration] pairs with positive duration")

    def halted(self, t: float) -> bool:
        return any(a <= t < a + d for a, d in self.stops)


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    seed: int = 0
    duration: float = 40.0
    dt: float = 0.05
    route: dict = field(default_factory=lambda: {"type": "straight", "length": 400.0})
    lane_width: float = 3.5
    decoy_offset: float = 20.0
    ego: VehicleSpawn = field(default_factory=lambda: VehicleSpawn(speed=8.0, v0=12.0))
    vehicles: list[VehicleSpawn] = field(default_factory=list)
    offload_areas: dict[str, list[float]] = field(default_factory=dict)
    link_profile: str = "wifi"
    link: Optional[LinkModel] = None
    qos: QosConfig = field(default_factory=QosConfig)
    safety: SafetyParams = field(default_factory=SafetyParams)
    sensor: SensorModel = field(default_factory=lambda: SensorModel(
        fov_radius=50.0, position_noise_sigma=0.02, clutter_rate=0.5))
    infra_sensor: SensorModel = field(default_factory=lambda: SensorModel(
        fov_radius=400.0, position_noise_sigma=0.02, clutter_rate=0.5))
    infra_position: tuple[float, float] = (200.0, 10.0)
    attacks: list[AttackSpec] = field(default_factory=list)
    target_zone: list[float] = field(default_factory=lambda: [340.0, -2.0, 360.0, 2.0])
    time_limit: float = 40.0
    mufasa_enabled: bool = True
    stop_on_goal: bool = True

    @property
    def link_model(self) -> LinkModel:
        return self.link or LINK_PROFILES[self.link_profile]

    @property
    def attack_label(self) -> str:
        kinds = sorted({"Random" if a.random else a.kind for a in self.attacks})
        return "+".join(kinds) if kinds else "none"


def _dataclass_from(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path, "expected an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}", "unknown field")
    kwargs = {}
    for k, v in data.items():
        kwargs[k] = tuple(v) if isinstance(v, list) and k in ("clutter_extent",) else v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(path, str(e)) from None


def _number(data: dict, key: str, path: str, positive: bool = False):
    v = data[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}", "expected a number")
    if positive and v <= 0:
        raise ConfigError(f"{path}.{key}", "must be positive")
    return v


def _rect(v, path: str) -> list[float]:
    if not (isinstance(v, list) and len(v) == 4 and all(isinstance(x, (int, float)) for x in v)):
        raise ConfigError(path, "expected [xmin, ymin, xmax, ymax]")
    if v[0] >= v[2] or v[1] >= v[3]:
        raise ConfigError(path, "empty rectangle")
    return [float(x) for x in v]


def config_from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("$", "scenario must be an object")
    data = copy.deepcopy(data)
    known = {f.name for f in fields(ScenarioConfig)}
    for k in data:
        if k not in known:
            raise ConfigError(f"$.{k}", "unknown field")
    kw: dict[str, Any] = {}
    for key in ("name", "link_profile"):
        if key in data:
            if not isinstance(data[key], str):
                raise ConfigError(f"$.{key}", "expected a string")
            kw[key] = data[key]
    if "link_profile" in kw and kw["link_profile"] not in LINK_PROFILES:
        raise ConfigError("$.link_profile", f"unknown profile, choose from {sorted(LINK_PROFILES)}")
    if "seed" in data:
        if isinstance(data["seed"], bool) or not isinstance(data["seed"], int):
            raise ConfigError("$.seed", "expected an integer")
        kw["seed"] = data["seed"]
    for key in ("duration", "dt", "lane_width", "time_limit"):
        if key in data:
            kw[key] = float(_number(data, key, "$", positive=True))
    if "decoy_offset" in data:
        kw["decoy_offset"] = float(_number(data, "decoy_offset", "$"))
    for key in ("mufasa_enabled", "stop_on_goal"):
        if key in data:
            if not isinstance(data[key], bool):
                raise ConfigError(f"$.{key}", "expected true/false")
            kw[key] = data[key]
    if "route" in data:
        r = data["route"]
        if not isinstance(r, dict) or r.get("type") not in ("straight", "curve"):
            raise ConfigError("$.route.type", "expected 'straight' or 'curve'")
        kw["route"] = r
    if "ego" in data:
        kw["ego"] = _dataclass_from(VehicleSpawn, data["ego"], "$.ego")
    if "vehicles" in data:
        if not isinstance(data["vehicles"], list):
            raise ConfigError("$.vehicles", "expected a list")
        kw["vehicles"] = [_dataclass_from(VehicleSpawn, v, f"$.vehicles[{i}]")
                          for i, v in enumerate(data["vehicles"])]
        for i, v in enumerate(kw["vehicles"]):
            if v.lane not in ("main", "oncoming"):
                raise ConfigError(f"$.vehicles[{i}].lane", "expected 'main' or 'oncoming'")
    if "offload_areas" in data:
        areas = data["offload_areas"]
        if not isinstance(areas, dict):
            raise ConfigError("$.offload_areas", "expected an object")
        for k, v in areas.items():
            if k not in OFFLOADABLE:
                raise ConfigError(f"$.offload_areas.{k}", "not an offloadable service kind")
            areas[k] = _rect(v, f"$.offload_areas.{k}")
        kw["offload_areas"] = areas
    if "link" in data:
        kw["link"] = _dataclass_from(LinkModel, data["link"], "$.link")
    if "qos" in data:
        kw["qos"] = _dataclass_from(QosConfig, data["qos"], "$.qos")
    if "safety" in data:
        kw["safety"] = _dataclass_from(SafetyParams, data["safety"], "$.safety")
    if "sensor" in data:
        kw["sensor"] = _dataclass_from(SensorModel, data["sensor"], "$.sensor")
    if "infra_sensor" in data:
        kw["infra_sensor"] = _dataclass_from(SensorModel, data["infra_sensor"], "$.infra_sensor")
    if "infra_position" in data:
        v = data["infra_position"]
        if not (isinstance(v, list) and len(v) == 2):
            raise ConfigError("$.infra_position", "expected [x, y]")
        kw["infra_position"] = (float(v[0]), float(v[1]))
    if "target_zone" in data:
        kw["target_zone"] = _rect(data["target_zone"], "$.target_zone")
    if "attacks" in data:
        if not isinstance(data["attacks"], list):
            raise ConfigError("$.attacks", "expected a list")
        specs = []
        for i, a in enumerate(data["attacks"]):
            path = f"$.attacks[{i}]"
            if not isinstance(a, dict):
                raise ConfigError(path, "expected an object")
            kind = a.get("kind")
            if kind not in ATTACK_KINDS + ("Random",):
                raise ConfigError(f"{path}.kind", f"expected one of {ATTACK_KINDS + ('Random',)}")
            try:
                specs.append(AttackSpec(kind, float(a.get("start", 0.0)),
                                        float(a.get("duration", 1.0)), dict(a.get("params", {})),
                                        random=kind == "Random"))
            except ValueError as e:
                raise ConfigError(path, str(e)) from None
        kw["attacks"] = specs
    return ScenarioConfig(**kw)


def load_scenario(path) -> ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError("$", f"invalid JSON: {e}") from None
    cfg = config_from_dict(data)
    if "name" not in data:
        cfg.name = Path(path).stem
    return cfg


def config_to_dict(cfg: ScenarioConfig) -> dict:
    from .network import jsonable

    out = jsonable(cfg)
    out["attacks"] = [{"kind": "Random" if a.random else a.kind, "start": a.start,
                       "duration": a.duration, "params": a.params} for a in cfg.attacks]
    if cfg.link is None:
        out.pop("link")
    return out
