"""Row buffers written out as CSV files."""

from __future__ import annotations

import csv
import io
from pathlib import Path


def fmt_time(t: float) -> str:
    return f"{t:.3f}"


class CsvLog:
    def __init__(self, header: tuple[str, ...]):
        self.header = header
        self.rows: list[tuple] = []

    def add(self, *row) -> None:
        if len(row) != len(self.header):
            raise ValueError(f"expected {len(self.header)} fields, got {len(row)}")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def where(self, **match) -> list[tuple]:
        idx = {self.header.index(k): v for k, v in match.items()}
        return [r for r in self.rows if all(r[i] == v for i, v in idx.items())]

    def to_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for r in self.rows:
            w.writerow([fmt_time(x) if isinstance(x, float) and i == 0 else x
                        for i, x in enumerate(r)])
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())


def event_log() -> CsvLog:
    return CsvLog(("time", "entity", "event", "detail"))
