"""Synthetic city: persistent hot cells, seasonal drift, flare-ups and self-excitation.

Weekly P1V rate in active cell c::

    lam[c, w] = b[c] * s[w] + f[c, w]
    f[c, w]   = episode[c, w] + excitation * E[c, w]
    E[c, w]   = decay * (E[c, w-1] + y[c, w-1] + neighbor_weight * sum_nbrs y[., w-1])

``episode`` holds pre-drawn flare-up bumps (random start, geometric length).
Leading indicators are Poisson multiples of the current rate plus the next
week's flare bump, so they carry real signal about upcoming flare-ups.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date

import numpy as np

from .geogrid import GridSpec, adjacency_matrix
from .ingest import (WEEK_SECONDS, EventRecord, IndicatorDictionary, PanelTensor,
                     week_start_seconds)

P1V_MIX = {"homicide": 0.01, "rape": 0.06, "robbery": 0.40, "aggravated_assault": 0.53}
P1P_MIX = {"burglary": 0.25, "larceny": 0.60, "vehicle_theft": 0.15}
DEFAULT_START = date(2011, 6, 6)


@dataclass(frozen=True)
class CityConfig:
    n_rows: int = 20
    n_cols: int = 20
    zone_rows: int = 2
    zone_cols: int = 2
    cell_size: float = 500.0
    base_rate: float = 0.03
    n_hot: int = 10
    hot_rate: float = 1.0
    moderate_fraction: float = 0.1
    moderate_rate: float = 0.15
    seasonal_amplitude: float = 0.2
    flare_prob: float = 0.003
    flare_weeks: float = 4.0
    flare_amplitude: float = 0.6
    excitation: float = 0.1
    decay: float = 0.5
    neighbor_weight: float = 0.05
    offense_multiplier: float = 0.5
    call_multiplier: float = 1.0
    p1p_ratio: float = 1.5
    lead: float = 1.0

    def __post_init__(self):
        stab = self.excitation * (1 + 8 * self.neighbor_weight) * self.decay / (1 - self.decay)
        if not 0 <= self.decay < 1 or stab >= 1:
            raise ValueError("self-excitation parameters give an explosive process")


def city_grid(cfg: CityConfig) -> GridSpec:
    """Fully active grid split into zone_rows x zone_cols rectangular zones (ids from 1)."""
    r = np.arange(cfg.n_rows) * cfg.zone_rows // cfg.n_rows
    c = np.arange(cfg.n_cols) * cfg.zone_cols // cfg.n_cols
    zones = r[:, None] * cfg.zone_cols + c[None, :] + 1
    return GridSpec(0.0, 0.0, cfg.cell_size, cfg.n_rows, cfg.n_cols, zones)


@dataclass(frozen=True, eq=False)
class World:
    grid: GridSpec
    baseline: np.ndarray      # b[c], weekly rate
    seasonal: np.ndarray      # s[w]
    episodes: np.ndarray      # (n_cells, n_weeks) flare bumps
    config: CityConfig
    start: date = DEFAULT_START
    adjacency: object = field(default=None, repr=False)

    @property
    def n_weeks(self) -> int:
        return len(self.seasonal)

    @property
    def hot_cells(self) -> np.ndarray:
        return np.flatnonzero(self.baseline >= self.config.hot_rate)


def make_world(cfg: CityConfig, n_weeks: int, seed: int = 0, start: date = DEFAULT_START) -> World:
    rng = np.random.default_rng(seed)
    grid = city_grid(cfg)
    n = grid.n_active
    b = np.full(n, cfg.base_rate)
    perm = rng.permutation(n)
    n_mod = int(round(cfg.moderate_fraction * n))
    b[perm[cfg.n_hot:cfg.n_hot + n_mod]] = cfg.moderate_rate
    b[perm[:cfg.n_hot]] = cfg.hot_rate * rng.uniform(1.0, 1.2, cfg.n_hot)
    w = np.arange(n_weeks)
    s = 1.0 + cfg.seasonal_amplitude * np.sin(2 * np.pi * w / 52.0)
    ep = np.zeros((n, n_weeks))
    starts = rng.random((n, n_weeks)) < cfg.flare_prob
    for c, w0 in zip(*np.nonzero(starts)):
        length = rng.geometric(1.0 / cfg.flare_weeks)
        ep[c, w0:w0 + length] += cfg.flare_amplitude
    return World(grid, b, s, ep, cfg, start, adjacency_matrix(grid))


class CrimeProcess:
    """Stateful weekly P1V generator (carries the self-excitation memory)."""

    def __init__(self, world: World):
        self.world = world
        self.memory = np.zeros(world.grid.n_active)
        self.week = 0

    def rate(self, w: int, deterrence=None) -> np.ndarray:
        wd = self.world
        lam = wd.baseline * wd.seasonal[w] + wd.episodes[:, w] + wd.config.excitation * self.memory
        if deterrence is not None:
            lam = lam - deterrence
        return np.maximum(lam, 0.0)

    def advance(self, counts: np.ndarray):
        cfg = self.world.config
        spill = np.asarray(self.world.adjacency @ counts.astype(float)).ravel()
        self.memory = cfg.decay * (self.memory + counts + cfg.neighbor_weight * spill)
        self.week += 1

    def step(self, rng: np.random.Generator, deterrence=None) -> tuple[np.ndarray, np.ndarray]:
        """Draw this week's P1V counts; returns (counts, rate)."""
        lam = self.rate(self.week, deterrence)
        y = rng.poisson(lam)
        self.advance(y)
        return y, lam


def indicator_rates(world: World, w: int, lam: np.ndarray) -> np.ndarray:
    nxt = world.episodes[:, w + 1] if w + 1 < world.n_weeks else 0.0
    return lam + world.config.lead * nxt


def draw_categories(world: World, w: int, p1v: np.ndarray, lam: np.ndarray,
                    rng: np.random.Generator, dictionary: IndicatorDictionary,
                    indicators: bool = True) -> dict:
    """Split P1V counts into component categories and draw P1P and indicator counts."""
    out = {}
    comp = list(P1V_MIX)
    split = np.array([rng.multinomial(k, list(P1V_MIX.values())) for k in p1v]) if len(p1v) else \
        np.zeros((0, len(comp)), np.int64)
    for i, name in enumerate(comp):
        out[name] = split[:, i]
    p1p = rng.poisson(world.config.p1p_ratio * world.baseline * world.seasonal[w])
    psplit = np.array([rng.multinomial(k, list(P1P_MIX.values())) for k in p1p])
    for i, name in enumerate(P1P_MIX):
        out[name] = psplit[:, i]
    if indicators:
        base = indicator_rates(world, w, lam)
        for name in dictionary.offense_indicators:
            out[name] = rng.poisson(world.config.offense_multiplier * base)
        for name in dictionary.call_indicators:
            out[name] = rng.poisson(world.config.call_multiplier * base)
    return out


def simulate_panel(world: World, seed: int = 0, n_weeks: int | None = None,
                   dictionary: IndicatorDictionary | None = None,
                   process: CrimeProcess | None = None) -> PanelTensor:
    """Undisturbed (no patrol) history panel over the first ``n_weeks`` weeks."""
    dictionary = dictionary or IndicatorDictionary()
    n_weeks = world.n_weeks if n_weeks is None else n_weeks
    rng = np.random.default_rng(seed)
    proc = process or CrimeProcess(world)
    weekly = []
    for w in range(n_weeks):
        y, lam = proc.step(rng)
        weekly.append(draw_categories(world, w, y, lam, rng, dictionary))
    cats = {k: np.stack([wk[k] for wk in weekly], axis=1) for k in weekly[0]}
    return PanelTensor.from_categories(cats, world.start, world.grid, dictionary)


def events_from_counts(counts_by_category: dict, grid: GridSpec, start: date, weeks,
                       rng: np.random.Generator, source: str = "offense") -> list[EventRecord]:
    """Point events realising per-category (n_cells, len(weeks)) counts, ordered by time."""
    t0 = week_start_seconds(start)
    centers = grid.centers()
    half = grid.cell_size / 2.0
    out = []
    for cat in sorted(counts_by_category):
        counts = np.asarray(counts_by_category[cat])
        for j, w in enumerate(weeks):
            col = counts[:, j]
            n = int(col.sum())
            if n == 0:
                continue
            cells = np.repeat(np.arange(len(col)), col)
            # whole seconds keep timestamps exact through the ISO text format
            ts = t0 + w * WEEK_SECONDS + rng.integers(0, WEEK_SECONDS, n)
            xs = centers[cells, 0] + rng.uniform(-half, half, n)
            ys = centers[cells, 1] + rng.uniform(-half, half, n)
            out.extend(EventRecord(float(t), float(x), float(y), source, cat, False, None)
                       for t, x, y in zip(ts, xs, ys))
    out.sort(key=lambda e: (e.timestamp, e.category, e.x, e.y))
    return out


def panel_events(panel: PanelTensor, dictionary: IndicatorDictionary, seed: int = 0,
                 ) -> list[EventRecord]:
    """Point events that rebuild every category count of ``panel``."""
    rng = np.random.default_rng(seed)
    weeks = range(panel.n_weeks)
    offense = {c: panel[c] for c in dictionary.categories if c not in dictionary.calls}
    calls = {c: panel[c] for c in dictionary.call_indicators}
    ev = events_from_counts(offense, panel.grid, panel.start, weeks, rng, "offense")
    ev += events_from_counts(calls, panel.grid, panel.start, weeks, rng, "call")
    ev.sort(key=lambda e: (e.timestamp, e.category, e.x, e.y))
    return ev


def write_fixture(out, cfg: CityConfig | None = None, n_weeks: int = 130, seed: int = 0):
    """Zone raster plus gzipped event file for a synthetic city (gzip mtime pinned)."""
    import gzip
    import io
    from pathlib import Path

    from .geogrid import write_zones_csv
    from .ingest import write_events
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = cfg or CityConfig()
    world = make_world(cfg, n_weeks, seed)
    dictionary = IndicatorDictionary()
    panel = simulate_panel(world, seed=seed, dictionary=dictionary)
    write_zones_csv(world.grid, out / "zones.csv")
    buf = io.StringIO()
    write_events(panel_events(panel, dictionary, seed), buf)
    with open(out / "events.csv.gz", "wb") as raw:
        with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as gz:
            gz.write(buf.getvalue().encode())
    return panel
