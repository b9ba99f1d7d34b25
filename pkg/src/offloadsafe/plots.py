"""Figures for the report command, drawn from the CSV outputs.

Figures are built on ``matplotlib.figure.Figure`` directly so nothing
touches the global pyplot state or needs a display.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

from .report import STAGES


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    return path


def failures_figure(rows: list[dict], path) -> Path:
    """Failure counts per attack, with and without the safety pipeline."""
    counts = defaultdict(lambda: {"mufasa": 0, "plain": 0})
    for r in rows:
        if r["section"] == "failures" and r["field"] == "failures":
            attack, mode = r["key"].rsplit("|", 1)
            counts[attack][mode] = int(r["value"])
    attacks = sorted(counts)
    x = np.arange(len(attacks))
    fig = Figure(figsize=(6, 3.5))
    ax = fig.add_subplot()
    ax.bar(x - 0.2, [counts[a]["plain"] for a in attacks], 0.4, label="without pipeline")
    ax.bar(x + 0.2, [counts[a]["mufasa"] for a in attacks], 0.4, label="with pipeline")
    ax.set_xticks(x, attacks, rotation=20)
    ax.set_ylabel("failed runs")
    ax.legend()
    return _save(fig, path)


def stages_figure(rows: list[dict], path) -> Path:
    """Executions and detected issues per safety stage (log scale)."""
    exe = {s: 0 for s in STAGES}
    det = {s: 0 for s in STAGES}
    for r in rows:
        if r["section"] == "stages":
            (exe if r["field"] == "executions" else det)[r["key"]] = int(r["value"])
    x = np.arange(len(STAGES))
    fig = Figure(figsize=(6, 3.5))
    ax = fig.add_subplot()
    ax.bar(x - 0.2, [max(exe[s], 0.5) for s in STAGES], 0.4, label="executions")
    ax.bar(x + 0.2, [max(det[s], 0.5) for s in STAGES], 0.4, label="detected")
    ax.set_yscale("log")
    ax.set_xticks(x, STAGES, rotation=20)
    ax.legend()
    return _save(fig, path)


def trace_figure(trace_rows: list[dict], path, events: list[dict] = ()) -> Path:
    """Ground-truth paths; the ego is id 0, fallbacks are marked on its path."""
    paths = defaultdict(list)
    for r in trace_rows:
        paths[int(r["id"])].append((float(r["time"]), float(r["x"]), float(r["y"])))
    fig = Figure(figsize=(7, 4))
    ax = fig.add_subplot()
    for vid, pts in sorted(paths.items()):
        p = np.array(pts)
        if vid == 0:
            ax.plot(p[:, 1], p[:, 2], "k-", lw=2, label="ego")
        else:
            ax.plot(p[:, 1], p[:, 2], lw=0.8, alpha=0.6)
    ego = np.array(paths.get(0, []))
    falls = [float(e["time"]) for e in events if e["event"] == "fallback"]
    if len(ego) and falls:
        idx = np.searchsorted(ego[:, 0], falls).clip(0, len(ego) - 1)
        ax.plot(ego[idx, 1], ego[idx, 2], "rx", label="fallback")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(loc="best")
    return _save(fig, path)
