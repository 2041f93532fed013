"""Crime-cost valuation, patrol cost and benefit/cost ratio."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping

import numpy as np

# per-offense social cost, 2008 dollars
COSTS_2008 = {
    "homicide": 8_982_907,
    "rape": 240_776,
    "aggravated_assault": 107_020,
    "robbery": 42_310,
    "burglary": 6_462,
    "larceny": 3_532,
    "vehicle_theft": 10_772,
}
# published 2018 column, used to check the derived factor
COSTS_2018 = {
    "homicide": 10_548_448,
    "rape": 282_738,
    "aggravated_assault": 125_671,
    "robbery": 49_684,
    "burglary": 7_588,
    "larceny": 4_148,
    "vehicle_theft": 12_649,
}
# 2008 -> 2018, from the murder row of the two columns
INFLATION_2008_2018 = 10_548_448 / 8_982_907


@dataclass(frozen=True)
class CostTable:
    costs: Mapping[str, float]
    year: int

    def __post_init__(self):
        bad = [k for k, v in self.costs.items() if not v > 0]
        if bad:
            raise ValueError(f"costs must be positive: {bad}")

    def __getitem__(self, offense: str) -> float:
        return self.costs[offense]

    @classmethod
    def from_csv(cls, path, year: int | None = None) -> "CostTable":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or not {"offense", "cost"} <= set(rows[0]):
            raise ValueError(f"{path}: expected columns offense,cost")
        yr = year if year is not None else int(rows[0].get("year") or 0)
        return cls({r["offense"]: float(r["cost"]) for r in rows}, yr)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["offense", "cost", "year"])
            for k, v in self.costs.items():
                w.writerow([k, f"{v:.15g}", self.year])


BASE_TABLE = CostTable(COSTS_2008, 2008)


def inflate(table: CostTable, factor: float = INFLATION_2008_2018,
            year: int | None = None) -> CostTable:
    """Scale every row by ``factor`` and round to whole dollars."""
    if not factor > 0:
        raise ValueError("inflation factor must be positive")
    yr = year if year is not None else (2018 if factor == INFLATION_2008_2018 else table.year)
    return CostTable({k: float(round(v * factor)) for k, v in table.costs.items()}, yr)


def report_table(factor: float = INFLATION_2008_2018) -> CostTable:
    return inflate(BASE_TABLE, factor)


def value_breakdown(counts: Mapping[str, float], table: CostTable) -> dict:
    missing = [k for k in counts if k not in table.costs]
    if missing:
        raise KeyError(f"no cost for offenses {missing}")
    out = {}
    for k, n in counts.items():
        n = float(n)
        if not np.isfinite(n):
            raise ValueError(f"count for {k} is not finite")
        out[k] = n * table[k]
    return out


def crimes_avoided_value(counts: Mapping[str, float], table: CostTable) -> float:
    """Sum of prevented count times per-offense cost."""
    return float(sum(value_breakdown(counts, table).values()))


def allocate_by_mix(total: float, mix: Mapping[str, float]) -> dict:
    """Spread a prevented total over offenses in proportion to an observed mix."""
    s = float(sum(mix.values()))
    if s <= 0:
        raise ValueError("offense mix has no mass")
    return {k: total * v / s for k, v in mix.items()}


@dataclass(frozen=True)
class ProgramCostInputs:
    budget: float = 48.5e6
    officers: float = 755
    benefits_uplift: float = 0.20
    hours_per_year: float = 2080
    program_hours: float = 7744

    def __post_init__(self):
        if min(self.budget, self.officers, self.hours_per_year) <= 0:
            raise ValueError("budget, officers and hours per year must be positive")
        if self.benefits_uplift < 0 or self.program_hours < 0:
            raise ValueError("uplift and program hours must be nonnegative")

    @property
    def cost_per_officer(self) -> float:
        return self.budget / self.officers

    @property
    def hourly_rate(self) -> float:
        return self.cost_per_officer * (1 + self.benefits_uplift) / self.hours_per_year


def patrol_cost(inputs: ProgramCostInputs) -> float:
    return inputs.hourly_rate * inputs.program_hours


def benefit_cost(value: float, cost: float) -> float:
    if not cost > 0:
        raise ValueError("cost must be positive")
    return value / cost


def cost_benefit_report(prevented: Mapping[str, float], inputs: ProgramCostInputs,
                        table: CostTable | None = None) -> dict:
    """All intermediates of the valuation, ready for JSON."""
    table = table or report_table()
    sub = value_breakdown(prevented, table)
    value = float(sum(sub.values()))
    cost = patrol_cost(inputs)
    return {
        "cost_year": table.year,
        "costs": dict(table.costs),
        "prevented": {k: float(v) for k, v in prevented.items()},
        "subtotals": sub,
        "value": value,
        "cost_per_officer": inputs.cost_per_officer,
        "hourly_rate": inputs.hourly_rate,
        "program_hours": inputs.program_hours,
        "patrol_cost": cost,
        "benefit_cost": benefit_cost(value, cost) if cost > 0 else None,
    }
