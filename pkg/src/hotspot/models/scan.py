"""Expectation-based Poisson scan over axis-aligned space-time boxes.

For a box S with observed count C and expected count B the log likelihood
ratio is ``C log(C/B) + B - C`` when ``C > B`` and zero otherwise.  Boxes are
enumerated exhaustively (up to ``max_side`` cells per spatial side) with 3-D
prefix sums; the top non-overlapping boxes are reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..ingest import PanelTensor


@dataclass(frozen=True)
class Cluster:
    row0: int
    row1: int   # inclusive
    col0: int
    col1: int   # inclusive
    week0: int  # absolute panel week, inclusive
    week1: int
    score: float
    observed: float
    expected: float
    cells: tuple  # active-cell positions inside the box

    @property
    def size(self) -> int:
        return len(self.cells)

    @property
    def duration(self) -> int:
        return self.week1 - self.week0 + 1

    @property
    def intensity(self) -> float:
        return self.observed / self.expected if self.expected > 0 else float("inf")

    def volume(self) -> int:
        return (self.row1 - self.row0 + 1) * (self.col1 - self.col0 + 1) * self.duration


def poisson_llr(observed, expected):
    c = np.asarray(observed, dtype=float)
    b = np.asarray(expected, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = c * np.log(np.where(c > 0, c, 1.0) / np.where(b > 0, b, 1.0)) + b - c
    return np.where((c > b) & (b > 0), val, 0.0)


def _prefix3(a):
    out = np.zeros((a.shape[0] + 1, a.shape[1] + 1, a.shape[2] + 1))
    out[1:, 1:, 1:] = a.cumsum(0).cumsum(1).cumsum(2)
    return out


def _box_sums(P, r0, r1, c0, c1, t0, t1):
    # half-open upper bounds
    return (P[r1, c1, t1] - P[r0, c1, t1] - P[r1, c0, t1] - P[r1, c1, t0]
            + P[r0, c0, t1] + P[r0, c1, t0] + P[r1, c0, t0] - P[r0, c0, t0])


def enumerate_boxes(n_rows, n_cols, n_t, max_side, max_duration):
    hs = np.arange(1, min(max_side, n_rows) + 1)
    ws = np.arange(1, min(max_side, n_cols) + 1)
    ds = np.arange(1, min(max_duration, n_t) + 1)
    parts = []
    for h in hs:
        for w in ws:
            for d in ds:
                r0, c0, t0 = np.meshgrid(np.arange(n_rows - h + 1), np.arange(n_cols - w + 1),
                                         np.arange(n_t - d + 1), indexing="ij")
                r0, c0, t0 = r0.ravel(), c0.ravel(), t0.ravel()
                parts.append(np.stack([r0, r0 + h, c0, c0 + w, t0, t0 + d]))
    return np.concatenate(parts, axis=1)


def scan_scores(observed, expected, max_side=4, max_duration=None):
    """LLR of every box. observed/expected: (n_rows, n_cols, n_t) rasters."""
    n_rows, n_cols, n_t = observed.shape
    boxes = enumerate_boxes(n_rows, n_cols, n_t, max_side, max_duration or n_t)
    C = _box_sums(_prefix3(observed), *boxes)
    B = _box_sums(_prefix3(expected), *boxes)
    return boxes, poisson_llr(C, B), C, B


def _overlaps(box, chosen):
    for o in chosen:
        if (box[0] < o[1] and o[0] < box[1] and box[2] < o[3] and o[2] < box[3]
                and box[4] < o[5] and o[4] < box[5]):
            return True
    return False


def top_boxes(boxes, scores, k):
    order = np.argsort(-scores, kind="stable")
    chosen = []
    for i in order:
        if scores[i] <= 0 or len(chosen) >= k:
            break
        b = boxes[:, i]
        if not _overlaps(b, [boxes[:, j] for j in chosen]):
            chosen.append(i)
    return chosen


def expected_counts(panel: PanelTensor, variable: str, window: tuple, baseline_weeks: int = 52):
    """Per-cell expected weekly count from the weeks before ``window``.

    The estimate is shrunk toward the city-wide cell mean so cells with an
    empty history still carry a positive expectation.
    """
    w0 = window[0]
    lo = max(0, w0 - baseline_weeks)
    hist = panel[variable][:, lo:w0].astype(float)
    nb = hist.shape[1]
    if nb == 0:
        raise ValueError("scan window has no baseline history before it")
    city = hist.mean()
    return (hist.sum(axis=1) + city) / (nb + 1)


def scan_clusters(panel: PanelTensor, variable: str, window: tuple, top_k: int = 5,
                  max_side: int = 4, baseline_weeks: int = 52, max_duration=None,
                  expected=None) -> list[Cluster]:
    """Top ``top_k`` non-overlapping space-time clusters in weeks [w0, w1)."""
    w0, w1 = int(window[0]), int(window[1])
    if w1 <= w0:
        raise ValueError("scan window must be nonempty")
    grid = panel.grid
    obs_cells = panel[variable][:, w0:w1].astype(float)
    if obs_cells.sum() == 0:
        return []
    if expected is None:
        expected = expected_counts(panel, variable, (w0, w1), baseline_weeks)
    exp_cells = np.repeat(np.asarray(expected, dtype=float)[:, None], w1 - w0, axis=1)
    obs = np.zeros((grid.n_rows * grid.n_cols, w1 - w0))
    exp = np.zeros_like(obs)
    obs[grid.active] = obs_cells
    exp[grid.active] = exp_cells
    obs = obs.reshape(grid.n_rows, grid.n_cols, -1)
    exp = exp.reshape(grid.n_rows, grid.n_cols, -1)
    boxes, scores, C, B = scan_scores(obs, exp, max_side, max_duration)
    out = []
    for i in top_boxes(boxes, scores, top_k):
        r0, r1, c0, c1, t0, t1 = (int(v) for v in boxes[:, i])
        cells = tuple(int(p) for p in (grid._position[(r * grid.n_cols + c)]
                                       for r in range(r0, r1) for c in range(c0, c1)) if p >= 0)
        out.append(Cluster(r0, r1 - 1, c0, c1 - 1, w0 + t0, w0 + t1 - 1, float(scores[i]),
                           float(C[i]), float(B[i]), cells))
    return out


def max_score_null(expected_raster, n_replicates=99, seed=0, max_side=4, max_duration=None):
    """Maximum scan LLR over Poisson(expected) replicates (Monte Carlo null)."""
    rng = np.random.default_rng(seed)
    shape = expected_raster.shape
    boxes = enumerate_boxes(*shape, max_side, max_duration or shape[2])
    PB = _prefix3(expected_raster)
    B = _box_sums(PB, *boxes)
    out = np.empty(n_replicates)
    for r in range(n_replicates):
        sim = rng.poisson(expected_raster).astype(float)
        out[r] = poisson_llr(_box_sums(_prefix3(sim), *boxes), B).max()
    return out


def box_iou(a, b) -> float:
    """IoU of two inclusive (row0,row1,col0,col1,week0,week1) boxes in cell-weeks."""
    inter = 1
    for lo1, hi1, lo2, hi2 in ((a[0], a[1], b[0], b[1]), (a[2], a[3], b[2], b[3]),
                               (a[4], a[5], b[4], b[5])):
        span = min(hi1, hi2) - max(lo1, lo2) + 1
        if span <= 0:
            return 0.0
        inter *= span

    def vol(x):
        return (x[1] - x[0] + 1) * (x[3] - x[2] + 1) * (x[5] - x[4] + 1)
    return inter / (vol(a) + vol(b) - inter)


def cluster_features(clusters: list[Cluster], n_cells: int) -> np.ndarray:
    """(n_cells, 3) size/duration/intensity of the best cluster covering each cell."""
    feats = np.zeros((n_cells, 3))
    best = np.full(n_cells, -np.inf)
    for cl in clusters:
        for p in cl.cells:
            if cl.score > best[p]:
                best[p] = cl.score
                feats[p] = (cl.size, cl.duration, cl.intensity)
    return feats
