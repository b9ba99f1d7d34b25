"""Built-in scenario families.

Each generator returns a plain dict in the scenario file format, so the
families can be written to JSON, edited and replayed.
"""

from __future__ import annotations

import numpy as np

from .attacker import ATTACK_KINDS
from .geometry import Polyline
from .harness import route_points

CONFIGS = ("MOT", "MOT+ENV+TPL", "ENV+TPL")
# configurations in which each attack has a remote service to hit
ATTACK_CONFIGS = {
    "MapSwap": ("MOT+ENV+TPL", "ENV+TPL"),
    "EmptyTrackSpam": ("MOT", "MOT+ENV+TPL", "ENV+TPL"),
    "GhostTracks": ("MOT", "MOT+ENV+TPL"),
}
WHOLE_MAP = [-100.0, -500.0, 900.0, 500.0]


def route_for(seed: int) -> dict:
    """Even seeds drive a straight road, odd seeds a road with a left bend."""
    if seed % 2 == 0:
        return {"type": "straight", "length": 300.0}
    return {"type": "curve", "straight": 100.0, "radius": 60.0, "angle": 60.0, "tail": 150.0}


def goal_zone(route: dict, s_goal: float, half: float = 6.0) -> list[float]:
    p = Polyline(route_points(route)).point_at(s_goal)
    return [round(float(p[0]) - half, 3), round(float(p[1]) - half, 3),
            round(float(p[0]) + half, 3), round(float(p[1]) + half, 3)]


def _oncoming(rng, n: int, lo: float, hi: float) -> list[dict]:
    out = []
    for s in sorted(rng.uniform(lo, hi, n)):
        v = float(rng.uniform(8.0, 11.0))
        out.append({"lane": "oncoming", "s": round(float(s), 1), "speed": round(v, 2),
                    "v0": round(v, 2)})
    return out


def _base(seed: int, config: str, name: str) -> dict:
    route = route_for(seed)
    return {
        "name": name,
        "seed": seed,
        "duration": 45.0,
        "time_limit": 45.0,
        "route": route,
        "target_zone": goal_zone(route, 250.0),
        "ego": {"s": 5.0, "speed": 10.0, "v0": 12.0},
        "offload_areas": {k: WHOLE_MAP for k in config.split("+")},
        "link_profile": "wifi",
        "vehicles": [],
        "attacks": [],
    }


def attack_scenario(kind: str, config: str, seed: int, mufasa: bool = True) -> dict:
    """One attack against one configuration while the car ahead brakes to a halt."""
    if kind not in ATTACK_KINDS or config not in ATTACK_CONFIGS[kind]:
        raise ValueError(f"{kind} has no target under {config}")
    rng = np.random.default_rng([seed, ATTACK_KINDS.index(kind), CONFIGS.index(config)])
    start = round(float(rng.uniform(6.0, 8.0)), 2)
    tag = "mufasa" if mufasa else "plain"
    sc = _base(seed, config, f"{kind}-{config}-s{seed}-{tag}")
    sc["vehicles"] = [{"lane": "main", "s": round(float(rng.uniform(30.0, 40.0)), 1),
                       "speed": 10.0, "v0": 10.0, "stops": [[start + 0.5, 4.0]],
                       "stop_decel": 4.0}] + _oncoming(rng, 3, 0.0, 250.0)
    sc["attacks"] = [{"kind": kind, "start": start, "duration": 5.0}]
    sc["mufasa_enabled"] = mufasa
    return sc


def attack_suite(seeds=range(10), mufasa: bool = True) -> list[dict]:
    return [attack_scenario(kind, config, seed, mufasa)
            for kind in ATTACK_KINDS for config in ATTACK_CONFIGS[kind] for seed in seeds]


def clean_scenario(config: str, seed: int) -> dict:
    """No attack; the car ahead still brakes to a halt once and traffic comes the other way."""
    rng = np.random.default_rng([seed, 99, CONFIGS.index(config)])
    sc = _base(seed, config, f"clean-{config}-s{seed}")
    stop = round(float(rng.uniform(6.0, 12.0)), 2)
    sc["vehicles"] = [{"lane": "main", "s": round(float(rng.uniform(30.0, 40.0)), 1),
                       "speed": 10.0, "v0": 10.0, "stops": [[stop, 3.0]], "stop_decel": 4.0}]
    sc["vehicles"] += _oncoming(rng, 2 + seed % 3, 0.0, 300.0)
    return sc


def clean_suite(seeds=range(4)) -> list[dict]:
    return [clean_scenario(config, seed) for config in CONFIGS for seed in seeds]


def random_campaign_scenario(seed: int, n_attacks: int = 10, t_wait: float = 2.0) -> dict:
    """Longer drive through changing offload areas with attacks of random kind and time.

    The vehicle crosses three zones: only MOT offered, everything offered,
    only ENV and TPL offered. The car ahead stops every few seconds.
    """
    rng = np.random.default_rng([seed, 7])
    route = {"type": "straight", "length": 420.0}
    starts = sorted(rng.uniform(2.0, 40.0, n_attacks))
    return {
        "name": f"random-s{seed}",
        "seed": seed,
        "duration": 90.0,
        "time_limit": 90.0,
        "route": route,
        "target_zone": goal_zone(route, 380.0),
        "ego": {"s": 5.0, "speed": 10.0, "v0": 12.0},
        "offload_areas": {"MOT": [-100.0, -500.0, 300.0, 500.0],
                          "ENV": [100.0, -500.0, 900.0, 500.0],
                          "TPL": [100.0, -500.0, 900.0, 500.0]},
        "safety": {"t_wait": t_wait},
        "link_profile": "wifi",
        "vehicles": [{"lane": "main", "s": round(float(rng.uniform(30.0, 40.0)), 1),
                      "speed": 10.0, "v0": 10.0, "stop_decel": 4.0,
                      "stops": [[round(6.0 + 8.0 * k + float(rng.uniform(0, 2)), 2), 2.0]
                                for k in range(6)]}] + _oncoming(rng, 4, 0.0, 420.0),
        "attacks": [{"kind": "Random", "start": round(float(s), 2), "duration": 3.0}
                    for s in starts],
    }


def random_campaign(seeds=range(4)) -> list[dict]:
    return [random_campaign_scenario(s) for s in seeds]


DENSITY_TIERS = (10, 20, 30)


def traffic_scenario(seed: int, n_vehicles: int, config: str = "MOT+ENV+TPL") -> dict:
    """Clean drive in denser traffic: a fifth of the vehicles ahead in the ego lane, the rest oncoming."""
    rng = np.random.default_rng([seed, 31, n_vehicles])
    sc = _base(seed, config, f"traffic{n_vehicles}-{config}-s{seed}")
    n_main = max(1, n_vehicles // 5)
    gaps = np.cumsum(rng.uniform(25.0, 35.0, n_main))
    sc["vehicles"] = [{"lane": "main", "s": round(float(5.0 + g), 1), "speed": 10.0, "v0": 10.0}
                      for g in gaps]
    sc["vehicles"] += _oncoming(rng, n_vehicles - n_main, 0.0, 300.0)
    return sc
