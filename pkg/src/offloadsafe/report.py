"""Campaign aggregation and the delimited report files."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .harness import RunReport, RunResult
from .orchestration import OFFLOADABLE
from .pipeline import Stage

REPORT_HEADER = ("section", "key", "field", "value")
STAGES = [s.value for s in Stage]


@dataclass
class CampaignSummary:
    runs: list[RunReport]
    # (attack label, mufasa) -> [runs, failures]
    failures: dict = field(default_factory=dict)
    stage_exec: dict = field(default_factory=lambda: {s: 0 for s in STAGES})
    stage_detected: dict = field(default_factory=lambda: {s: 0 for s in STAGES})
    config_stage_exec: dict = field(default_factory=dict)
    fallback_reasons: Counter = field(default_factory=Counter)
    pipeline_invocations: int = 0
    pipeline_safe: int = 0
    collisions: int = 0

    @property
    def safe_fraction(self) -> float:
        if not self.pipeline_invocations:
            return 1.0
        return self.pipeline_safe / self.pipeline_invocations


def aggregate_reports(reports) -> CampaignSummary:
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to aggregate")
    s = CampaignSummary(reports)
    for r in reports:
        cell = s.failures.setdefault((r.attack, r.mufasa), [0, 0])
        cell[0] += 1
        cell[1] += int(r.failure)
        for st in STAGES:
            s.stage_exec[st] += r.stage_exec[st]
            s.stage_detected[st] += r.stage_detected[st]
        for tag, counts in r.config_stage_exec.items():
            acc = s.config_stage_exec.setdefault(tag, {st: 0 for st in STAGES})
            for st, n in counts.items():
                acc[st] += n
        s.fallback_reasons.update(f[1] for f in r.fallbacks)
        s.pipeline_invocations += r.pipeline_invocations
        s.pipeline_safe += r.pipeline_safe
        s.collisions += r.collisions
    return s


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.3f}"
    return str(v)


def summary_rows(s: CampaignSummary) -> list[tuple]:
    rows = []
    for r in s.runs:
        fields = [("seed", r.seed), ("mufasa", r.mufasa), ("attack", r.attack),
                  ("areas", r.areas), ("sim_time", r.sim_time), ("collisions", r.collisions),
                  ("goal_reached", r.goal_reached), ("failure", r.failure),
                  ("fallbacks", len(r.fallbacks)), ("safety_fallbacks", r.safety_fallbacks),
                  ("pipeline_invocations", r.pipeline_invocations),
                  ("pipeline_safe", r.pipeline_safe), ("injections", r.injections)]
        for k in OFFLOADABLE:
            fields += [(f"offloaded_{k}", r.offload_time[k]), (f"local_{k}", r.local_time[k])]
        rows += [("run", r.name, f, _fmt(v)) for f, v in fields]
    for (attack, mufasa), (n, fails) in sorted(s.failures.items()):
        key = f"{attack}|{'mufasa' if mufasa else 'plain'}"
        rows += [("failures", key, "runs", str(n)), ("failures", key, "failures", str(fails))]
    for st in STAGES:
        rows += [("stages", st, "executions", str(s.stage_exec[st])),
                 ("stages", st, "detected", str(s.stage_detected[st]))]
    for tag in sorted(s.config_stage_exec):
        for st in STAGES:
            rows.append(("config_stages", f"{tag}|{st}", "executions",
                         str(s.config_stage_exec[tag][st])))
    for reason in sorted(s.fallback_reasons):
        rows.append(("fallbacks", reason, "count", str(s.fallback_reasons[reason])))
    rows += [("totals", "pipeline", "invocations", str(s.pipeline_invocations)),
             ("totals", "pipeline", "safe", str(s.pipeline_safe)),
             ("totals", "pipeline", "safe_fraction", f"{s.safe_fraction:.4f}"),
             ("totals", "runs", "count", str(len(s.runs))),
             ("totals", "runs", "collisions", str(s.collisions))]
    return rows


def report_csv(s: CampaignSummary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    w.writerows(summary_rows(s))
    return buf.getvalue()


def read_report_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _table(header, rows) -> str:
    cells = [tuple(map(str, header))] + [tuple(map(str, r)) for r in rows]
    widths = [max(len(c[i]) for c in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def summary_table(s: CampaignSummary) -> str:
    return table_from_rows([dict(zip(REPORT_HEADER, r)) for r in summary_rows(s)])


def table_from_rows(rows: list[dict]) -> str:
    """Plain-text view of report rows, as produced by ``summary_rows`` or read back from CSV."""
    fails, exe, det, totals = {}, {}, {}, {}
    for r in rows:
        sec, key, fld, val = r["section"], r["key"], r["field"], r["value"]
        if sec == "failures":
            fails.setdefault(key, {})[fld] = val
        elif sec == "stages":
            (exe if fld == "executions" else det)[key] = val
        elif sec == "totals":
            totals[(key, fld)] = val
    fail_rows = []
    for key in sorted(fails):
        attack, mode = key.rsplit("|", 1)
        fail_rows.append((attack, "on" if mode == "mufasa" else "off",
                          fails[key].get("runs", "0"), fails[key].get("failures", "0")))
    stage_rows = [(st, exe.get(st, "0"), det.get(st, "0")) for st in STAGES]
    frac = float(totals.get(("pipeline", "safe_fraction"), "1"))
    parts = [
        "Failures per attack",
        _table(("attack", "pipeline", "runs", "failures"), fail_rows),
        "",
        "Safety stages",
        _table(("stage", "executions", "detected"), stage_rows),
        "",
        f"pipeline invocations {totals.get(('pipeline', 'invocations'), '0')}, "
        f"safe {totals.get(('pipeline', 'safe'), '0')} ({100 * frac:.2f}%), "
        f"collisions {totals.get(('runs', 'collisions'), '0')}",
    ]
    return "\n".join(parts) + "\n"


def write_run(out_dir, result: RunResult) -> None:
    """Per-run logs plus a single-run report.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.events.write(out / "events.csv")
    result.qos.write(out / "qos.csv")
    result.stages.write(out / "stages.csv")
    result.attacks.write(out / "attacks.csv")
    result.trace.write(out / "trace.csv")
    (out / "report.csv").write_text(report_csv(aggregate_reports([result.report])))
