"""Rolling one-week-ahead evaluation plus accuracy and dispersion metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ingest import PanelTensor
from .models import TRAIN_WEEKS, ModelSpec, ScoreGrid, fit, score

logger = logging.getLogger(__name__)

PERSISTENCE_THRESHOLDS = (0.25, 0.5, 0.75, 1.0)


class BacktestError(RuntimeError):
    def __init__(self, week, cause):
        self.week = week
        self.cause = cause
        super().__init__(f"week {week}: {type(cause).__name__}: {cause}")


@dataclass(frozen=True)
class BacktestConfig:
    calibration_weeks: int = 104
    evaluation_weeks: int = 156
    refit_every: int = 1
    train_weeks: int = TRAIN_WEEKS
    top_fraction: float = 0.01
    start: int = 0          # first calibration week

    def __post_init__(self):
        if self.calibration_weeks < 1 or self.evaluation_weeks < 1:
            raise ValueError("calibration and evaluation spans must be nonempty")
        if self.refit_every < 1:
            raise ValueError("refit cadence must be >= 1 week")
        if self.train_weeks != TRAIN_WEEKS:
            raise ValueError(f"training window is fixed at {TRAIN_WEEKS} weeks")
        if not 0 < self.top_fraction <= 1:
            raise ValueError("top fraction must be in (0, 1]")

    @property
    def evaluation_range(self) -> range:
        first = self.start + self.calibration_weeks
        return range(first, first + self.evaluation_weeks)

    @property
    def calibration_range(self) -> range:
        return range(self.start, self.start + self.calibration_weeks)

    def validate(self, panel: PanelTensor):
        if self.start < 0 or self.evaluation_range.stop > panel.n_weeks:
            raise ValueError(f"evaluation span ends at week {self.evaluation_range.stop} "
                             f"but the panel has {panel.n_weeks} weeks")


@dataclass(frozen=True)
class ScoreSeries:
    weeks: np.ndarray        # consecutive forecast weeks
    scores: np.ndarray       # (n_weeks, n_cells)
    label: str = ""

    def __post_init__(self):
        w = np.asarray(self.weeks, dtype=np.int64)
        if w.size > 1 and np.any(np.diff(w) != 1):
            raise ValueError("score series weeks must be consecutive")
        s = np.asarray(self.scores, dtype=float)
        if s.ndim != 2 or s.shape[0] != w.size:
            raise ValueError("scores must be (n_weeks, n_cells)")
        object.__setattr__(self, "weeks", w)
        object.__setattr__(self, "scores", s)

    def __len__(self):
        return len(self.weeks)

    def grid(self, i: int) -> ScoreGrid:
        return ScoreGrid(int(self.weeks[i]), self.scores[i])

    @classmethod
    def from_grids(cls, grids: Sequence[ScoreGrid], label: str = "") -> "ScoreSeries":
        return cls(np.array([g.week for g in grids]), np.vstack([g.scores for g in grids]), label)


@dataclass(frozen=True)
class TradeoffCurve:
    area: np.ndarray
    capture: np.ndarray
    label: str = ""

    def __post_init__(self):
        a = np.asarray(self.area, dtype=float)
        c = np.asarray(self.capture, dtype=float)
        if a.shape != c.shape or a.ndim != 1 or a.size < 2:
            raise ValueError("curve needs matching 1-D area/capture arrays with >= 2 points")
        if a[0] != 0 or c[0] != 0:
            raise ValueError("curve must start at (0, 0)")
        tol = 1e-12
        if np.any(np.diff(a) < -tol) or np.any(np.diff(c) < -tol):
            raise ValueError("curve must be nondecreasing in both coordinates")
        if a.min() < 0 or a.max() > 1 + tol or c.min() < 0 or c.max() > 1 + tol:
            raise ValueError("curve coordinates must lie in [0, 1]")
        object.__setattr__(self, "area", a)
        object.__setattr__(self, "capture", c)

    def at(self, a: float) -> float:
        return float(np.interp(a, self.area, self.capture))

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.area, self.capture]), delimiter=",",
                   header="area_fraction,capture_fraction", comments="", fmt="%.10g")


# ---------------------------------------------------------------------------
# rolling evaluation


def rolling_backtest(spec: ModelSpec, panel: PanelTensor, cfg: BacktestConfig,
                     weeks: Sequence[int] | None = None) -> ScoreSeries:
    """Fit on the 104 weeks before each refit week and score forward one week at a time."""
    if weeks is None:
        cfg.validate(panel)
        weeks = cfg.evaluation_range
    weeks = list(weeks)
    grids, model = [], None
    for i, w in enumerate(weeks):
        try:
            if i % cfg.refit_every == 0:
                model = fit(spec, panel, w)
            grids.append(score(model, panel, w))
        except Exception as exc:  # annotate with the failing week
            raise BacktestError(w, exc) from exc
    logger.info("%s: scored %d weeks", spec.kind, len(grids))
    return ScoreSeries.from_grids(grids, spec.kind)


def tune(kind: str, candidates: Sequence[dict], panel: PanelTensor, cfg: BacktestConfig,
         variable: str = "p1v", weeks: int = 26, seed: int = 0, area: float | None = None):
    """Pick the candidate hyperparameters with the best pAUC on the last calibration weeks."""
    area = cfg.top_fraction if area is None else area
    cal = cfg.calibration_range
    span = range(max(cal.start, cal.stop - weeks), cal.stop)
    best, best_val = None, -np.inf
    results = []
    for params in candidates:
        spec = ModelSpec(kind, params, seed=seed, target=variable)
        series = rolling_backtest(spec, panel, cfg, weeks=span)
        val = pauc(tradeoff_curve(series, panel, variable, max_area=max(area, 1.0 / panel.n_cells)),
                   area)
        results.append((params, val))
        if val > best_val:
            best, best_val = params, val
    return best, results


# ---------------------------------------------------------------------------
# curves


def _week_capture(scores: np.ndarray, actual: np.ndarray, k_max: int) -> np.ndarray:
    """Cumulative captured crime after 0..k_max cells, ties pooled at their mean."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = actual[order].astype(float)
    # tie groups
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    ends = np.r_[starts[1:], len(s)]
    sizes = ends - starts
    per_cell = np.repeat(np.add.reduceat(y, starts) / sizes, sizes)
    return np.r_[0.0, np.cumsum(per_cell)][:k_max + 1]


def _k_max(n: int, max_area: float) -> int:
    return int(np.clip(np.ceil(max_area * n - 1e-9), 1, n))


def tradeoff_curve(series: ScoreSeries, actual: PanelTensor, variable: str,
                   max_area: float = 1.0) -> TradeoffCurve:
    """Mean over weeks of the share of that week's crime captured by the top-scored cells."""
    counts = actual[variable]
    n = series.scores.shape[1]
    if counts.shape[0] != n:
        raise ValueError("score series and panel cover different cells")
    k = _k_max(n, max_area)
    curves = []
    for i, w in enumerate(series.weeks):
        if w >= actual.n_weeks:
            raise ValueError(f"no actual counts for week {w}")
        y = counts[:, w]
        total = y.sum()
        if total == 0:
            continue
        curves.append(_week_capture(series.scores[i], y, k) / total)
    if not curves:
        raise ValueError("no crime in the evaluation span; curve undefined")
    return TradeoffCurve(np.arange(k + 1) / n, np.mean(curves, axis=0), series.label)


def oracle_curve(actual: PanelTensor, variable: str, weeks, max_area: float = 1.0) -> TradeoffCurve:
    weeks = np.asarray(list(weeks))
    s = ScoreSeries(weeks, actual[variable][:, weeks].T.astype(float), "oracle")
    return tradeoff_curve(s, actual, variable, max_area)


def pauc(curve: TradeoffCurve, A: float = 0.01) -> float:
    """Trapezoidal area under the curve on [0, A], both axes as fractions."""
    if A <= 0:
        raise ValueError("A must be positive")
    if A > curve.area[-1] + 1e-12:
        raise ValueError(f"A={A} exceeds the curve's area domain {curve.area[-1]}")
    a, c = curve.area, curve.capture
    inside = a < A
    xs = np.r_[a[inside], A]
    # at a vertical step landing exactly on A take the upper value
    end = c[a == A][-1] if np.any(a == A) else np.interp(A, a, c)
    ys = np.r_[c[inside], end]
    return float(np.sum(np.diff(xs) * (ys[1:] + ys[:-1]) / 2.0))


def composite_curve(chronic: ScoreSeries, temporary: ScoreSeries, actual: PanelTensor,
                    variable: str, max_area: float = 1.0) -> TradeoffCurve:
    """Equal-split chronic/temporary program: at k cells, the top ceil(k/2) chronic cells
    plus the top remaining temporary cells (a cell in both counts as chronic)."""
    if not np.array_equal(chronic.weeks, temporary.weeks):
        raise ValueError("chronic and temporary series cover different weeks")
    counts = actual[variable]
    n = chronic.scores.shape[1]
    k_max = _k_max(n, max_area)
    curves = []
    for i, w in enumerate(chronic.weeks):
        y = counts[:, w].astype(float)
        total = y.sum()
        if total == 0:
            continue
        c_order = np.lexsort((np.arange(n), -chronic.scores[i]))
        t_order = np.lexsort((np.arange(n), -temporary.scores[i]))
        chosen = np.zeros(n, bool)
        cum = np.zeros(k_max + 1)
        got, ci, tj, n_c = 0.0, 0, 0, 0

        def next_temp(tj):
            while chosen[t_order[tj]]:
                tj += 1
            return tj
        for k in range(1, k_max + 1):
            if (k + 1) // 2 > n_c:
                cell = c_order[ci]
                ci += 1
                n_c += 1
                if chosen[cell]:
                    # already held as a temporary pick: relabel and refill the temporary slot
                    tj = next_temp(tj)
                    cell = t_order[tj]
            else:
                tj = next_temp(tj)
                cell = t_order[tj]
            chosen[cell] = True
            got += y[cell]
            cum[k] = got
        curves.append(cum / total)
    if not curves:
        raise ValueError("no crime in the evaluation span; curve undefined")
    return TradeoffCurve(np.arange(k_max + 1) / n, np.mean(curves, axis=0), "composite")


# ---------------------------------------------------------------------------
# selection dispersion


def top_k(n_cells: int, fraction: float) -> int:
    return max(1, int(round(fraction * n_cells)))


def top_selections(series: ScoreSeries, fraction: float = 0.01) -> list[np.ndarray]:
    """Per-week top-fraction cell sets, ties to the lower cell index."""
    k = top_k(series.scores.shape[1], fraction)
    return [series.grid(i).top(k) for i in range(len(series))]


def _selection_counts(selections, fraction):
    if isinstance(selections, ScoreSeries):
        selections = top_selections(selections, fraction)
    selections = [np.asarray(list(s), dtype=np.int64) for s in selections]
    if not selections:
        raise ValueError("empty selection series")
    allc = np.concatenate(selections) if selections else np.zeros(0, np.int64)
    cells, n = np.unique(allc, return_counts=True)
    return cells, n, len(selections)


def selection_entropy(selections, fraction: float = 0.01) -> float:
    """Entropy in bits of how often each cell appears among the weekly selections."""
    _, n, _ = _selection_counts(selections, fraction)
    if n.sum() == 0:
        raise ValueError("no selections")
    p = n / n.sum()
    return float(-(p * np.log2(p)).sum()) + 0.0


def persistence_table(selections, fraction: float = 0.01,
                      thresholds: Sequence[float] = PERSISTENCE_THRESHOLDS) -> dict:
    """Share of all selections held by cells selected in more than t of the weeks.

    The top threshold (1.0) counts cells selected in every week.
    """
    _, n, W = _selection_counts(selections, fraction)
    total = n.sum()
    out = {}
    for t in thresholds:
        keep = n >= W if t >= 1.0 else n > t * W
        out[float(t)] = float(n[keep].sum() / total) if total else 0.0
    return out


def footprint(selections, n_cells: int, fraction: float = 0.01) -> tuple[set, float]:
    """Cells ever selected and their share of the masked city."""
    if isinstance(selections, ScoreSeries):
        selections = top_selections(selections, fraction)
    cells = set()
    for s in selections:
        cells.update(int(c) for c in s)
    return cells, len(cells) / n_cells


@dataclass
class MetricRow:
    model: str
    pauc: float
    pauc_mean_capture: float
    entropy: float
    persistence: dict = field(default_factory=dict)
    footprint: float = 0.0

    def as_dict(self) -> dict:
        d = {"model": self.model, "pauc": self.pauc, "pauc_over_A": self.pauc_mean_capture,
             "entropy_bits": self.entropy, "footprint_fraction": self.footprint}
        for t, v in self.persistence.items():
            d[f"persist_gt_{int(round(t * 100))}"] = v
        return d


def evaluate(series: ScoreSeries, actual: PanelTensor, variable: str,
             top_fraction: float = 0.01, A: float | None = None,
             footprint_weeks: int | None = 52) -> tuple[MetricRow, TradeoffCurve]:
    """Metric row for one model; the footprint covers the first ``footprint_weeks`` weeks."""
    A = top_fraction if A is None else A
    n = series.scores.shape[1]
    curve = tradeoff_curve(series, actual, variable, max_area=max(A, 1.0 / n))
    sel = top_selections(series, top_fraction)
    fp = footprint(sel[:footprint_weeks] if footprint_weeks else sel, n)[1]
    val = pauc(curve, A)
    return MetricRow(series.label, val, val / A, selection_entropy(sel),
                     persistence_table(sel), fp), curve
