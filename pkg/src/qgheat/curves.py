"""Heat-content curves ``(t, Q_t)`` tagged with their producing method."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .artifacts import CsvTable, fmt


class Method(Enum):
    MERCER = "MERCER"
    PROBABILISTIC = "PROBABILISTIC"
    MONTE_CARLO = "MONTE_CARLO"
    CN = "CN"


@dataclass
class HeatContentCurve:
    t_grid: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    method: Method
    graph_name: str = ""
    total_length: float = math.nan
    run_info: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.errors = np.asarray(self.errors, dtype=float)

    def check(self, slack: float = 0.0) -> dict[str, bool]:
        """Curve invariants within the attached errors."""
        v, e = self.values, self.errors + slack
        total = self.total_length
        return {
            "positive_bounded": bool(np.all(v + e > 0) and np.all(v - e <= total)),
            "non_increasing": bool(np.all(np.diff(v) <= e[1:] + e[:-1])),
        }

    def at(self, t: float) -> tuple[float, float]:
        i = int(np.argmin(np.abs(self.t_grid - t)))
        return float(self.values[i]), float(self.errors[i])

    def to_csv(self) -> CsvTable:
        meta = {"method": self.method.value, "graph": self.graph_name, "total_length": fmt(self.total_length)}
        meta.update(self.run_info)
        table = CsvTable(["t", "Q", "error"], meta=meta)
        for row in zip(self.t_grid, self.values, self.errors):
            table.add_row(row)
        return table

    @classmethod
    def from_csv(cls, table: CsvTable) -> "HeatContentCurve":
        meta = dict(table.meta)
        method = Method(meta.pop("method"))
        name = meta.pop("graph")
        total = float(meta.pop("total_length"))
        return cls(np.array(table.column("t")), np.array(table.column("Q")), np.array(table.column("error")),
                   method, name, total, meta)


def compare_curves(a: HeatContentCurve, b: HeatContentCurve) -> np.ndarray:
    """``|Q_a - Q_b| / (err_a + err_b)`` on the common grid (values <= 1 mean agreement)."""
    if a.t_grid.shape != b.t_grid.shape or not np.allclose(a.t_grid, b.t_grid, rtol=1e-12):
        raise ValueError("curves are on different grids")
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.abs(a.values - b.values) / (a.errors + b.errors)
    return np.where(a.values == b.values, 0.0, r)
