"""Lagged-count features and regression targets built from a panel.

Rows are (cell, week) pairs; a row for week ``w`` only ever reads panel weeks
strictly before ``w``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .geogrid import adjacency_matrix
from .ingest import PanelTensor

DEFAULT_LAGS = (1, 2, 3, 4, 8, 12, 26, 52)
MLP_LAGS = tuple(range(1, 53))
BASELINE_WEEKS = 52


class InsufficientHistoryError(ValueError):
    def __init__(self, as_of, earliest):
        self.as_of = as_of
        self.earliest = earliest
        super().__init__(
            f"week {as_of} lacks lag history; earliest feasible as-of week is {earliest}"
        )


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray      # (n_rows, n_columns)
    cells: np.ndarray       # active-cell position per row
    weeks: np.ndarray       # target week per row
    columns: tuple          # (variable, lag) or (variable, lag, "nh")

    def __len__(self):
        return self.values.shape[0]

    def hstack(self, other: "FeatureMatrix") -> "FeatureMatrix":
        if not (np.array_equal(self.cells, other.cells) and np.array_equal(self.weeks, other.weeks)):
            raise ValueError("feature matrices are not row-aligned")
        return FeatureMatrix(np.hstack([self.values, other.values]), self.cells, self.weeks,
                             self.columns + other.columns)

    def to_csv(self, path) -> None:
        header = ["cell", "week"] + ["_".join(map(str, c)) for c in self.columns]
        data = np.column_stack([self.cells, self.weeks, self.values])
        np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt="%.10g")


@dataclass(frozen=True)
class TargetVector:
    values: np.ndarray
    cells: np.ndarray
    weeks: np.ndarray


def _check_history(panel: PanelTensor, weeks, max_back: int) -> np.ndarray:
    weeks = np.atleast_1d(np.asarray(weeks, dtype=np.int64))
    if weeks.size == 0:
        raise ValueError("no target weeks requested")
    lo = int(weeks.min())
    if lo - max_back < 0:
        raise InsufficientHistoryError(lo, max_back)
    if int(weeks.max()) > panel.n_weeks:
        raise ValueError(f"as-of week {int(weeks.max())} beyond panel end {panel.n_weeks}")
    return weeks


def _lagged(counts_vw: np.ndarray, weeks: np.ndarray, lags: Sequence[int]) -> np.ndarray:
    # counts_vw: (n_cells, n_weeks) -> (n_weeks_req, n_cells, n_lags)
    idx = weeks[:, None] - np.asarray(lags)[None, :]
    return np.transpose(counts_vw[:, idx], (1, 0, 2))


def lag_rows(panel: PanelTensor, variables: Sequence[str], lags: Sequence[int],
             weeks) -> FeatureMatrix:
    """Lagged counts for every active cell at each week in ``weeks``."""
    lags = tuple(int(l) for l in lags)
    if min(lags) < 1:
        raise ValueError("lags must be >= 1")
    weeks = _check_history(panel, weeks, max(lags))
    n = panel.n_cells
    blocks = [_lagged(panel[v], weeks, lags) for v in variables]
    values = np.concatenate(blocks, axis=2).reshape(len(weeks) * n, -1).astype(float)
    cols = tuple((v, l) for v in variables for l in lags)
    return FeatureMatrix(values, np.tile(np.arange(n), len(weeks)), np.repeat(weeks, n), cols)


def lag_stack(panel: PanelTensor, variables: Sequence[str], lags: Sequence[int],
              as_of: int) -> FeatureMatrix:
    return lag_rows(panel, variables, lags, [as_of])


@lru_cache(maxsize=32)
def _adjacency_for(grid):
    return adjacency_matrix(grid)


def neighborhood_rows(panel: PanelTensor, variables: Sequence[str], lags: Sequence[int],
                      weeks) -> FeatureMatrix:
    """Lagged counts summed over each cell's queen neighbours (mask-aware)."""
    lags = tuple(int(l) for l in lags)
    weeks = _check_history(panel, weeks, max(lags))
    adj = _adjacency_for(panel.grid)
    n = panel.n_cells
    blocks = []
    for v in variables:
        summed = np.asarray(adj @ panel[v].astype(float))
        blocks.append(_lagged(summed, weeks, lags))
    values = np.concatenate(blocks, axis=2).reshape(len(weeks) * n, -1)
    cols = tuple((v, l, "nh") for v in variables for l in lags)
    return FeatureMatrix(values, np.tile(np.arange(n), len(weeks)), np.repeat(weeks, n), cols)


def neighborhood_stack(panel, variables, lags, as_of) -> FeatureMatrix:
    return neighborhood_rows(panel, variables, lags, [as_of])


def count_target(panel: PanelTensor, variable: str, weeks) -> TargetVector:
    weeks = np.atleast_1d(np.asarray(weeks, dtype=np.int64))
    vals = panel[variable][:, weeks].T.reshape(-1).astype(float)
    n = panel.n_cells
    return TargetVector(vals, np.tile(np.arange(n), len(weeks)), np.repeat(weeks, n))


def baseline_mean(panel: PanelTensor, variable: str, weeks,
                  baseline_weeks: int = BASELINE_WEEKS) -> np.ndarray:
    """Mean count over the ``baseline_weeks`` strictly before each week: (n_weeks_req, n_cells)."""
    weeks = _check_history(panel, weeks, baseline_weeks)
    c = panel[variable].astype(float)
    csum = np.concatenate([np.zeros((c.shape[0], 1)), np.cumsum(c, axis=1)], axis=1)
    return ((csum[:, weeks] - csum[:, weeks - baseline_weeks]) / baseline_weeks).T


def diff_rows(panel: PanelTensor, variable: str, weeks,
              baseline_weeks: int = BASELINE_WEEKS) -> TargetVector:
    """Positive deviation of each week's count from its trailing one-year mean."""
    weeks = _check_history(panel, weeks, baseline_weeks)
    if int(weeks.max()) >= panel.n_weeks:
        raise ValueError("target week must lie inside the panel")
    base = baseline_mean(panel, variable, weeks, baseline_weeks)
    obs = panel[variable][:, weeks].T.astype(float)
    vals = np.maximum(0.0, obs - base).reshape(-1)
    n = panel.n_cells
    return TargetVector(vals, np.tile(np.arange(n), len(weeks)), np.repeat(weeks, n))


def diff_target(panel: PanelTensor, variable: str, as_of: int,
                baseline_weeks: int = BASELINE_WEEKS) -> TargetVector:
    return diff_rows(panel, variable, [as_of], baseline_weeks)
