"""Grid geometry, city mask, zones and the balanced crossover partitions.

Cells are addressed by ``CellId(row, col)``; row grows with ``y`` and col with
``x``.  A cell is inside the city iff its zone id is nonzero.  Everything
downstream works on *active* cells, enumerated in increasing linear index
``row * n_cols + col``.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

QUEEN_OFFSETS = tuple(
    (dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)
)


class OutOfMaskError(ValueError):
    """Raised when a point falls outside the grid or on a masked-out cell."""

    def __init__(self, point, reason="outside grid"):
        self.point = point
        super().__init__(f"point {point!r} is out of mask ({reason})")


class PartitionError(ValueError):
    pass


class CellId(NamedTuple):
    row: int
    col: int


@dataclass(frozen=True, eq=False)
class GridSpec:
    origin_x: float
    origin_y: float
    cell_size: float
    n_rows: int
    n_cols: int
    zones: np.ndarray  # (n_rows, n_cols) int, 0 = outside the city

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        if self.n_rows * self.n_cols < 1:
            raise ValueError("grid must contain at least one cell")
        zones = np.asarray(self.zones, dtype=np.int64)
        if zones.shape != (self.n_rows, self.n_cols):
            raise ValueError(
                f"zone raster shape {zones.shape} != ({self.n_rows}, {self.n_cols})"
            )
        if (zones < 0).any():
            raise ValueError("zone ids must be nonnegative (0 marks outside)")
        zones.setflags(write=False)
        object.__setattr__(self, "zones", zones)
        active = np.flatnonzero(zones.ravel() > 0)
        active.setflags(write=False)
        object.__setattr__(self, "active", active)
        lookup = np.full(self.n_rows * self.n_cols, -1, dtype=np.int64)
        lookup[active] = np.arange(active.size)
        lookup.setflags(write=False)
        object.__setattr__(self, "_position", lookup)

    @classmethod
    def full(cls, n_rows, n_cols, cell_size=500.0, origin=(0.0, 0.0), zone=1):
        """A rectangular city whose every cell belongs to one zone."""
        return cls(origin[0], origin[1], cell_size, n_rows, n_cols,
                   np.full((n_rows, n_cols), zone, dtype=np.int64))

    @property
    def mask(self) -> np.ndarray:
        return self.zones > 0

    @property
    def n_active(self) -> int:
        return int(self.active.size)

    @property
    def cell_area(self) -> float:
        return self.cell_size ** 2

    @property
    def zone_ids(self) -> list[int]:
        return sorted(int(z) for z in np.unique(self.zones) if z > 0)

    def zone_of(self, cell: CellId) -> int:
        return int(self.zones[cell.row, cell.col])

    def in_bounds(self, cell) -> bool:
        return 0 <= cell[0] < self.n_rows and 0 <= cell[1] < self.n_cols

    def linear(self, cell) -> int:
        return int(cell[0]) * self.n_cols + int(cell[1])

    def cell_at(self, linear_index: int) -> CellId:
        return CellId(*divmod(int(linear_index), self.n_cols))

    def position(self, cell) -> int:
        """Index of ``cell`` in the active-cell ordering, or -1 if masked out."""
        if not self.in_bounds(cell):
            return -1
        return int(self._position[self.linear(cell)])

    def active_cells(self) -> list[CellId]:
        return [self.cell_at(i) for i in self.active]

    def active_rows_cols(self) -> tuple[np.ndarray, np.ndarray]:
        return np.divmod(self.active, self.n_cols)

    def centers(self) -> np.ndarray:
        """(n_active, 2) array of cell-center coordinates (x, y)."""
        rows, cols = self.active_rows_cols()
        return np.column_stack([
            self.origin_x + (cols + 0.5) * self.cell_size,
            self.origin_y + (rows + 0.5) * self.cell_size,
        ])

    def zone_vector(self) -> np.ndarray:
        return self.zones.ravel()[self.active]

    def to_raster(self, values, fill=0.0) -> np.ndarray:
        """Scatter a per-active-cell vector back onto the full raster."""
        values = np.asarray(values)
        out = np.full(self.n_rows * self.n_cols, fill, dtype=np.result_type(values, type(fill)))
        out[self.active] = values
        return out.reshape(self.n_rows, self.n_cols)

    def from_raster(self, raster) -> np.ndarray:
        raster = np.asarray(raster)
        return raster.reshape(self.n_rows * self.n_cols, *raster.shape[2:])[self.active]


def cell_of(point, grid: GridSpec) -> CellId:
    x, y = float(point[0]), float(point[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"point {point!r} is not finite")
    row = math.floor((y - grid.origin_y) / grid.cell_size)
    col = math.floor((x - grid.origin_x) / grid.cell_size)
    cell = CellId(row, col)
    if not grid.in_bounds(cell):
        raise OutOfMaskError(point)
    if grid.zones[row, col] == 0:
        raise OutOfMaskError(point, "masked-out cell")
    return cell


def cells_of(xs, ys, grid: GridSpec) -> np.ndarray:
    """Vectorised ``cell_of`` returning active positions (-1 when out of mask)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    rows = np.floor((ys - grid.origin_y) / grid.cell_size)
    cols = np.floor((xs - grid.origin_x) / grid.cell_size)
    ok = (np.isfinite(rows) & np.isfinite(cols) & (rows >= 0) & (rows < grid.n_rows)
          & (cols >= 0) & (cols < grid.n_cols))
    out = np.full(xs.shape, -1, dtype=np.int64)
    lin = rows[ok].astype(np.int64) * grid.n_cols + cols[ok].astype(np.int64)
    out[ok] = grid._position[lin]
    return out


def cell_center(cell, grid: GridSpec) -> tuple[float, float]:
    return (grid.origin_x + (cell[1] + 0.5) * grid.cell_size,
            grid.origin_y + (cell[0] + 0.5) * grid.cell_size)


def neighbors(cell, grid: GridSpec, mask_aware: bool = True) -> set[CellId]:
    """Queen's-case neighbours of ``cell`` that lie inside the grid."""
    out = set()
    for dr, dc in QUEEN_OFFSETS:
        nb = CellId(cell[0] + dr, cell[1] + dc)
        if not grid.in_bounds(nb):
            continue
        if mask_aware and grid.zones[nb.row, nb.col] == 0:
            continue
        out.add(nb)
    return out


def adjacency_matrix(grid: GridSpec) -> sp.csr_matrix:
    """Sparse 0/1 queen adjacency between active cells (mask-aware, no self loops)."""
    rows, cols = grid.active_rows_cols()
    src, dst = [], []
    for dr, dc in QUEEN_OFFSETS:
        r2, c2 = rows + dr, cols + dc
        ok = (r2 >= 0) & (r2 < grid.n_rows) & (c2 >= 0) & (c2 < grid.n_cols)
        pos = np.full(rows.shape, -1, dtype=np.int64)
        pos[ok] = grid._position[r2[ok] * grid.n_cols + c2[ok]]
        keep = pos >= 0
        src.append(np.flatnonzero(keep))
        dst.append(pos[keep])
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    n = grid.n_active
    return sp.csr_matrix((np.ones(src.size), (src, dst)), shape=(n, n))


def load_grid(config: Mapping, base_dir: Path | str = ".") -> GridSpec:
    """Build a grid from a config mapping plus its zone-raster CSV.

    Expected keys: ``origin_x``, ``origin_y``, ``cell_size`` (default 500),
    ``n_rows``, ``n_cols`` and ``zones_csv`` (columns ``row,col,zone_id``).
    """
    zones = np.zeros((int(config["n_rows"]), int(config["n_cols"])), dtype=np.int64)
    path = Path(base_dir) / config["zones_csv"]
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            zones[int(rec["row"]), int(rec["col"])] = int(rec["zone_id"])
    return GridSpec(float(config.get("origin_x", 0.0)), float(config.get("origin_y", 0.0)),
                    float(config.get("cell_size", 500.0)), int(config["n_rows"]),
                    int(config["n_cols"]), zones)


def write_zones_csv(grid: GridSpec, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "zone_id"])
        for cell in grid.active_cells():
            w.writerow([cell.row, cell.col, grid.zone_of(cell)])


# ---------------------------------------------------------------------------
# zone partitioning


@dataclass(frozen=True)
class ZonePartition:
    zone: int
    assignment: dict  # CellId -> "A" | "B"
    imbalance: float
    area_imbalance: float = 0.0

    def half(self, label: str) -> list[CellId]:
        return sorted(c for c, h in self.assignment.items() if h == label)


def _components(cells: set) -> list[list]:
    seen, comps = set(), []
    for start in sorted(cells):
        if start in seen:
            continue
        comp, queue = [], deque([start])
        seen.add(start)
        while queue:
            c = queue.popleft()
            comp.append(c)
            for dr, dc in QUEEN_OFFSETS:
                nb = (c[0] + dr, c[1] + dc)
                if nb in cells and nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
        comps.append(sorted(comp))
    return comps


def _connected(cells: set) -> bool:
    return len(cells) > 0 and len(_components(cells)) == 1


@dataclass
class _Split:
    side_a: set
    side_b: set
    w_a: float
    w_b: float
    total: float
    n: int
    max_area_gap: int = field(default=0)

    @property
    def imbalance(self) -> float:
        return abs(self.w_a - self.w_b) / self.total if self.total > 0 else 0.0

    @property
    def area_gap(self) -> int:
        return abs(len(self.side_a) - len(self.side_b))


def partition_zone(zone_cells: Iterable, weights: Mapping, tolerance: float = 0.05,
                   zone: int = 0) -> ZonePartition:
    """Split a zone into two connected halves of near-equal area and crime.

    Every axis-aligned straight cut through the zone's bounding box is tried;
    among cuts whose halves are both connected and whose areas differ by at
    most ``max(1, floor(tolerance * n))`` cells, the one with the smallest
    crime imbalance wins.  Greedy boundary moves and swaps then lower the
    imbalance further while keeping both halves connected and area-balanced.
    Half ``A`` always contains the lowest (row, col) cell of the zone.
    """
    cells = {CellId(int(c[0]), int(c[1])) for c in zone_cells}
    if len(cells) < 2:
        raise PartitionError("zone has fewer than two cells and cannot be partitioned")
    comps = _components(cells)
    if len(comps) > 1:
        raise PartitionError(f"zone {zone} is disconnected; components: {comps}")
    w = {c: float(weights.get(c, 0.0)) for c in cells}
    if any(v < 0 for v in w.values()):
        raise ValueError("weights must be nonnegative")
    n = len(cells)
    total = sum(w.values())
    max_gap = max(1, math.floor(tolerance * n))

    split = _best_straight_cut(cells, w, total, max_gap)
    split = _rebalance_area(split, w, max_gap)
    split = _greedy_refine(split, w, max_gap)

    first = min(cells)
    a, b = (split.side_a, split.side_b) if first in split.side_a else (split.side_b, split.side_a)
    assignment = {c: "A" for c in a}
    assignment.update({c: "B" for c in b})
    assignment = dict(sorted(assignment.items()))
    if split.imbalance > tolerance:
        warnings.warn(
            f"zone {zone}: best crime imbalance {split.imbalance:.3f} exceeds tolerance {tolerance}",
            stacklevel=2,
        )
    return ZonePartition(zone, assignment, split.imbalance, split.area_gap / n)


def _best_straight_cut(cells, w, total, max_gap) -> _Split:
    rows = [c.row for c in cells]
    cols = [c.col for c in cells]
    candidates = []
    for axis, lo, hi in ((0, min(rows), max(rows)), (1, min(cols), max(cols))):
        for k in range(lo + 1, hi + 1):
            a = {c for c in cells if c[axis] < k}
            b = cells - a
            if not a or not b:
                continue
            s = _Split(a, b, sum(w[c] for c in a), sum(w[c] for c in b), total, len(cells))
            connected = _connected(a) and _connected(b)
            candidates.append((not connected, s.area_gap > max_gap, s.imbalance, s.area_gap, axis, k, s))
    feasible = [c for c in candidates if not c[0] and not c[1]]
    if feasible:
        return min(feasible, key=lambda c: c[2:6])[-1]
    connected = [c for c in candidates if not c[0]]
    if connected:
        best = min(connected, key=lambda c: (c[3], c[2], c[4], c[5]))[-1]
        logger.info("no straight cut meets the area tolerance; using area gap %d", best.area_gap)
        return best
    # Irregular zone: grow half A breadth-first from the lowest cell.
    order = _bfs_order(cells, min(cells))
    a = set(order[: len(cells) // 2])
    b = cells - a
    if not (_connected(a) and _connected(b)):
        raise PartitionError("no connected two-way split found for zone")
    return _Split(a, b, sum(w[c] for c in a), sum(w[c] for c in b), total, len(cells))


def _bfs_order(cells, start):
    order, seen, queue = [], {start}, deque([start])
    while queue:
        c = queue.popleft()
        order.append(c)
        for dr, dc in QUEEN_OFFSETS:
            nb = CellId(c[0] + dr, c[1] + dc)
            if nb in cells and nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return order


def _boundary(side, other):
    out = []
    for c in sorted(side):
        for dr, dc in QUEEN_OFFSETS:
            if (c[0] + dr, c[1] + dc) in other:
                out.append(c)
                break
    return out


def _rebalance_area(split: _Split, w, max_gap) -> _Split:
    """Move boundary cells off the larger half until the area gap is within bounds."""
    a, b = set(split.side_a), set(split.side_b)
    total = split.total
    while abs(len(a) - len(b)) > max_gap:
        big, small = (a, b) if len(a) > len(b) else (b, a)
        moved = False
        for c in sorted(_boundary(big, small), key=lambda c: (w[c], c)):
            rest = big - {c}
            if _connected(rest):
                big.discard(c)
                small.add(c)
                moved = True
                break
        if not moved:
            raise PartitionError("cannot balance half areas while keeping both halves connected")
    wa = sum(w[c] for c in a)
    return _Split(a, b, wa, total - wa, total, split.n)


def _greedy_refine(split: _Split, w, max_gap, max_rounds: int = 500) -> _Split:
    a, b = set(split.side_a), set(split.side_b)
    wa, wb, total = split.w_a, split.w_b, split.total
    if total <= 0:
        return split

    def imb(x, y):
        return abs(x - y) / total

    for _ in range(max_rounds):
        current = imb(wa, wb)
        if current == 0:
            break
        ba, bb = _boundary(a, b), _boundary(b, a)
        moves = []
        for c in ba:  # A -> B
            if abs((len(a) - 1) - (len(b) + 1)) <= max_gap:
                moves.append((imb(wa - w[c], wb + w[c]), 0, (c,), ()))
        for c in bb:  # B -> A
            if abs((len(a) + 1) - (len(b) - 1)) <= max_gap:
                moves.append((imb(wa + w[c], wb - w[c]), 1, (), (c,)))
        for ca in ba:
            for cb in bb:
                d = w[cb] - w[ca]
                moves.append((imb(wa + d, wb - d), 2, (ca,), (cb,)))
        moves = [m for m in moves if m[0] < current - 1e-12]
        moves.sort(key=lambda m: (m[0], m[1], m[2], m[3]))
        applied = False
        for new_imb, _, from_a, from_b in moves:
            na = (a - set(from_a)) | set(from_b)
            nb = (b - set(from_b)) | set(from_a)
            if na and nb and _connected(na) and _connected(nb):
                a, b = na, nb
                wa = sum(w[c] for c in a)
                wb = total - wa
                applied = True
                break
        if not applied:
            break
    return _Split(a, b, wa, wb, total, split.n)


def partition_city(grid: GridSpec, weights, tolerance: float = 0.05) -> dict[int, ZonePartition]:
    """Partition every zone; ``weights`` is a per-active-cell vector."""
    weights = np.asarray(weights, dtype=float)
    out = {}
    cells = grid.active_cells()
    zv = grid.zone_vector()
    for z in grid.zone_ids:
        idx = np.flatnonzero(zv == z)
        zc = [cells[i] for i in idx]
        out[z] = partition_zone(zc, {cells[i]: weights[i] for i in idx}, tolerance, zone=z)
    return out


def half_vector(grid: GridSpec, partitions: Mapping[int, ZonePartition]) -> np.ndarray:
    """Per-active-cell half label: 0 for A, 1 for B."""
    out = np.zeros(grid.n_active, dtype=np.int8)
    for part in partitions.values():
        for cell, h in part.assignment.items():
            out[grid.position(cell)] = 0 if h == "A" else 1
    return out
