import json

import pytest

from offloadsafe import aggregate_reports, config_from_dict, report_csv, run_scenario
from offloadsafe.cli import main
from offloadsafe.orchestration import OFFLOADABLE
from offloadsafe.report import read_report_csv, table_from_rows
from offloadsafe.suites import attack_scenario, clean_scenario

CASES = {
    "clean": clean_scenario("MOT+ENV+TPL", 0),
    "mapswap_plain": attack_scenario("MapSwap", "MOT+ENV+TPL", 0, mufasa=False),
    "mapswap": attack_scenario("MapSwap", "MOT+ENV+TPL", 0),
    "ghosts": attack_scenario("GhostTracks", "MOT", 0),
    "spam": attack_scenario("EmptyTrackSpam", "ENV+TPL", 0),
}


@pytest.fixture(scope="module")
def results():
    return {k: run_scenario(config_from_dict(sc)) for k, sc in CASES.items()}


@pytest.mark.parametrize("case", list(CASES))
def test_run_invariants(results, case):
    r = results[case].report
    dt = CASES[case].get("dt", 0.05)
    for k in OFFLOADABLE:
        assert r.offload_time[k] + r.local_time[k] == pytest.approx(r.sim_time, abs=dt)
    for st in r.stage_exec:
        assert 0 <= r.stage_detected[st] <= r.stage_exec[st]
    assert sum(r.stage_detected.values()) >= r.safety_fallbacks
    assert r.failure == (r.collisions > 0 or not r.goal_reached)
    assert r.pipeline_safe <= r.pipeline_invocations


def test_clean_run_reaches_goal_without_safety_fallbacks(results):
    r = results["clean"].report
    assert r.goal_reached and not r.failure and r.safety_fallbacks == 0
    assert r.offload_time["MOT"] > 0


def test_map_swap_without_the_pipeline_fails(results):
    r = results["mapswap_plain"].report
    assert r.failure and not r.fallbacks
    assert sum(r.stage_exec.values()) == 0


def test_map_swap_with_the_pipeline_is_caught(results):
    r = results["mapswap"].report
    assert r.goal_reached and r.collisions == 0
    assert r.stage_detected["MapVal"] >= 1 and r.safety_fallbacks >= 1
    for kind, start, end, effect, caught in r.attack_windows:
        if effect is not None:
            assert caught is not None and caught >= effect


def test_ghosts_are_caught_by_track_validation(results):
    s = aggregate_reports([results["ghosts"].report])
    assert s.stage_detected["TrackVal"] > 0
    assert results["ghosts"].report.goal_reached


def test_spam_is_caught(results):
    r = results["spam"].report
    assert not r.failure and r.safety_fallbacks >= 1 and r.injections > 0


def test_aggregate_passthrough_and_empty(results):
    one = results["clean"].report
    s = aggregate_reports([one])
    assert s.stage_exec == one.stage_exec and s.pipeline_invocations == one.pipeline_invocations
    assert s.failures == {(one.attack, one.mufasa): [1, 0]}
    with pytest.raises(ValueError):
        aggregate_reports([])


def test_report_csv_is_stable_and_parses(results, tmp_path):
    s = aggregate_reports(r.report for r in results.values())
    text = report_csv(s)
    assert text == report_csv(aggregate_reports(r.report for r in results.values()))
    p = tmp_path / "report.csv"
    p.write_text(text)
    table = table_from_rows(read_report_csv(p))
    assert "MapSwap" in table and "TrackVal" in table and "pipeline invocations" in table


# -- command line --------------------------------------------------------------------------

@pytest.fixture()
def scenario_file(tmp_path):
    p = tmp_path / "short.json"
    sc = dict(clean_scenario("MOT", 1), duration=6.0, time_limit=6.0)
    p.write_text(json.dumps(sc))
    return p


def test_cli_run_and_report(scenario_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--scenario", str(scenario_file), "--seed", "3", "--out", str(out)]) == 0
    for f in ("events.csv", "qos.csv", "stages.csv", "attacks.csv", "trace.csv", "report.csv",
              "capture.bin"):
        assert (out / f).exists(), f
    assert "pipeline invocations" in capsys.readouterr().out
    assert main(["report", "--in", str(out)]) == 0
    figs = sorted(p.name for p in (out / "figures").iterdir())
    assert "failures.png" in figs and "stages.png" in figs and any("trace" in f for f in figs)


def test_cli_campaign_with_ablation(scenario_file, tmp_path):
    out = tmp_path / "camp"
    assert main(["campaign", "--dir", str(scenario_file.parent), "--out", str(out), "--ablate"]) == 0
    rows = read_report_csv(out / "report.csv")
    keys = {r["key"] for r in rows if r["section"] == "failures"}
    assert keys == {"none|mufasa", "none|plain"}
    assert (out / "summary.txt").read_text()
    assert main(["report", "--in", str(out), "--no-figures"]) == 0


def test_cli_generate(tmp_path):
    assert main(["generate", "--suite", "attack", "--seeds", "1", "--out", str(tmp_path)]) == 0
    files = list(tmp_path.glob("*.json"))
    assert len(files) >= 4
    for f in files:
        config_from_dict(json.loads(f.read_text()))


def test_cli_bad_config(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"vehicles": [{"lane": "sideways"}]}))
    assert main(["run", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "$.vehicles[0].lane" in capsys.readouterr().err
    assert main(["report", "--in", str(tmp_path / "missing")]) == 2
