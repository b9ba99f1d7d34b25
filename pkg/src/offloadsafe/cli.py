"""Command line: run one scenario, run a directory of scenarios, render a report."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import suites
from .harness import run_scenario
from .report import (aggregate_reports, read_report_csv, report_csv, summary_table,
                     table_from_rows, write_run)
from .scenario import ConfigError, ScenarioConfig, load_scenario


def _run_one(cfg: ScenarioConfig, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "capture.bin", "wb") as cap:
        result = run_scenario(cfg, capture=cap)
    write_run(out, result)
    return result.report


def _campaign_job(args):
    path, mufasa, out = args
    cfg = load_scenario(path)
    if not mufasa:
        cfg = dataclasses.replace(cfg, mufasa_enabled=False)
        if not cfg.name.endswith("-plain"):
            cfg.name += "-plain"
    return _run_one(cfg, Path(out) / cfg.name)


def cmd_run(args) -> int:
    cfg = load_scenario(args.scenario)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.no_mufasa:
        cfg.mufasa_enabled = False
    report = _run_one(cfg, Path(args.out))
    print(summary_table(aggregate_reports([report])), end="")
    status = "FAILURE" if report.failure else "ok"
    print(f"{cfg.name}: {status}, goal {'reached' if report.goal_reached else 'missed'}, "
          f"{len(report.fallbacks)} fallbacks, outputs in {args.out}")
    return 0


def cmd_campaign(args) -> int:
    files = sorted(Path(args.dir).glob("*.json"))
    if not files:
        print(f"no scenario files in {args.dir}", file=sys.stderr)
        return 2
    for f in files:
        load_scenario(f)  # fail early on a bad file
    out = Path(args.out)
    modes = (True, False) if args.ablate else (True,)
    jobs = [(str(f), m, str(out / "runs")) for m in modes for f in files]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            reports = list(pool.map(_campaign_job, jobs))
    else:
        reports = [_campaign_job(j) for j in jobs]
    summary = aggregate_reports(reports)
    (out / "report.csv").write_text(report_csv(summary))
    text = summary_table(summary)
    (out / "summary.txt").write_text(text)
    print(text, end="")
    return 0


def cmd_report(args) -> int:
    src = Path(args.input)
    csv_path = src / "report.csv"
    if not csv_path.exists():
        print(f"{csv_path} not found", file=sys.stderr)
        return 2
    rows = read_report_csv(csv_path)
    print(table_from_rows(rows), end="")
    if args.no_figures:
        return 0
    from . import plots

    fig_dir = Path(args.figures) if args.figures else src / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    made = [plots.failures_figure(rows, fig_dir / "failures.png"),
            plots.stages_figure(rows, fig_dir / "stages.png")]
    for trace in sorted(src.rglob("trace.csv")):
        run_dir = trace.parent
        events = read_report_csv(run_dir / "events.csv") if (run_dir / "events.csv").exists() else []
        name = "trace" if run_dir == src else f"trace-{run_dir.name}"
        made.append(plots.trace_figure(read_report_csv(trace), fig_dir / f"{name}.png", events))
    print(f"{len(made)} figures written to {fig_dir}")
    return 0


def cmd_generate(args) -> int:
    seeds = range(args.seeds)
    if args.suite == "attack":
        scenarios = suites.attack_suite(seeds, mufasa=True)
    elif args.suite == "clean":
        scenarios = suites.clean_suite(seeds)
    elif args.suite == "random":
        scenarios = suites.random_campaign(seeds)
    else:
        scenarios = [suites.traffic_scenario(s, n) for n in suites.DENSITY_TIERS for s in seeds]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for sc in scenarios:
        (out / f"{sc['name']}.json").write_text(json.dumps(sc, indent=2) + "\n")
    print(f"{len(scenarios)} scenarios written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="offloadsafe", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario file")
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-mufasa", action="store_true", help="disable the safety pipeline")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("campaign", help="run every scenario file in a directory")
    p.add_argument("--dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ablate", action="store_true",
                   help="also run each scenario with the safety pipeline disabled")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("report", help="print the summary of a run or campaign and draw figures")
    p.add_argument("--in", dest="input", required=True, help="directory holding report.csv")
    p.add_argument("--figures", help="figure directory (default: <in>/figures)")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("generate", help="write a built-in scenario family as JSON files")
    p.add_argument("--suite", choices=("attack", "clean", "random", "traffic"), required=True)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
