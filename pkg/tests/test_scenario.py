import json

import pytest

from offloadsafe.scenario import ConfigError, ScenarioConfig, config_from_dict, config_to_dict, load_scenario
from offloadsafe.suites import attack_scenario, clean_scenario, random_campaign_scenario


@pytest.mark.parametrize("data, path", [
    ({"bogus": 1}, "$.bogus"),
    ({"seed": 1.5}, "$.seed"),
    ({"seed": True}, "$.seed"),
    ({"dt": 0}, "$.dt"),
    ({"duration": "long"}, "$.duration"),
    ({"mufasa_enabled": 1}, "$.mufasa_enabled"),
    ({"route": {"type": "spiral"}}, "$.route.type"),
    ({"link_profile": "5g"}, "$.link_profile"),
    ({"vehicles": [{"lane": "left"}]}, "$.vehicles[0].lane"),
    ({"vehicles": [{"length": -1}]}, "$.vehicles[0]"),
    ({"ego": {"wings": 2}}, "$.ego.wings"),
    ({"offload_areas": {"CTRL": [0, 0, 1, 1]}}, "$.offload_areas.CTRL"),
    ({"offload_areas": {"MOT": [0, 0, 0, 1]}}, "$.offload_areas.MOT"),
    ({"target_zone": [1, 2, 3]}, "$.target_zone"),
    ({"qos": {"l_max": -5}}, "$.qos"),
    ({"attacks": [{"kind": "Jamming"}]}, "$.attacks[0].kind"),
    ({"attacks": [{"kind": "MapSwap", "duration": 0}]}, "$.attacks[0]"),
])
def test_config_errors_name_the_field(data, path):
    with pytest.raises(ConfigError) as e:
        config_from_dict(data)
    assert e.value.path == path


def test_defaults():
    cfg = config_from_dict({})
    assert cfg == ScenarioConfig()
    assert cfg.attack_label == "none" and cfg.link_model.base_latency > 0


def test_load_scenario_names_by_file_stem(tmp_path):
    p = tmp_path / "my_run.json"
    p.write_text(json.dumps({"seed": 4}))
    assert load_scenario(p).name == "my_run"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_scenario(p)


@pytest.mark.parametrize("sc", [
    attack_scenario("MapSwap", "MOT+ENV+TPL", 1),
    attack_scenario("GhostTracks", "MOT", 2, mufasa=False),
    clean_scenario("ENV+TPL", 3),
    random_campaign_scenario(0),
])
def test_round_trip(sc):
    cfg = config_from_dict(sc)
    again = config_from_dict(json.loads(json.dumps(config_to_dict(cfg))))
    assert again == cfg
    assert config_to_dict(again) == config_to_dict(cfg)


def test_random_attacks_keep_their_label():
    cfg = config_from_dict(random_campaign_scenario(1))
    assert cfg.attack_label == "Random"
    assert all(a.random for a in cfg.attacks)
