"""Plain-text CSV artifacts with ``# key=value`` metadata lines.

Floats are written with ``repr`` so that reading and re-writing a file is
byte-identical.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path


def fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


@dataclass
class CsvTable:
    columns: list[str]
    rows: list[list[str]] = field(default_factory=list)
    meta: dict[str, str] = field(default_factory=dict)

    def add_row(self, values) -> None:
        row = [fmt(v) for v in values]
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} fields, expected {len(self.columns)}")
        self.rows.append(row)

    def column(self, name: str, convert=float) -> list:
        j = self.columns.index(name)
        return [convert(r[j]) for r in self.rows]

    def dumps(self) -> str:
        buf = io.StringIO()
        for key, value in self.meta.items():
            buf.write(f"# {key}={value}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        writer.writerows(self.rows)
        return buf.getvalue()

    @classmethod
    def loads(cls, text: str) -> "CsvTable":
        meta = {}
        lines = text.splitlines()
        body_start = 0
        for i, line in enumerate(lines):
            if line.startswith("# "):
                key, _, value = line[2:].partition("=")
                meta[key] = value
                body_start = i + 1
            else:
                break
        reader = csv.reader(lines[body_start:])
        columns = next(reader)
        rows = [list(r) for r in reader]
        return cls(columns, rows, meta)

    def write(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def read(cls, path) -> "CsvTable":
        return cls.loads(Path(path).read_text(encoding="utf-8"))
