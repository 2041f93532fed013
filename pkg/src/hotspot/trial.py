"""Crossover field-trial simulation.

Each zone is split into halves A and B.  One half is treated each week, the
first chosen at random and then alternating.  Every week, per zone and per
half, the top chronic (moving-average) cells and then the top temporary
(positive-deviation) cells are selected.  Treated-half picks get the
treatment patrol rate and control-half picks the baseline rate.  Crime is
drawn from the synthetic city with rate ``max(0, b*s + f - tau*D)``, where
D = foot + car/3.

Seeds: a replication seed is split with ``SeedSequence(seed).spawn(3)`` into
the schedule, patrol and crime streams.  Patrol and crime draws for trial
week j use ``default_rng([stream, j])``, so a week's draws never depend on
how many weeks were simulated before it.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

from .geogrid import GridSpec, ZonePartition, half_vector, partition_city, write_zones_csv
from .ingest import P1P, P1V, EventRecord, IndicatorDictionary, PanelTensor, write_events
from .models import FittedModel, ModelSpec, fit, score
from .synth import (CityConfig, CrimeProcess, World, draw_categories, events_from_counts,
                    make_world, simulate_panel)

logger = logging.getLogger(__name__)

HALVES = ("A", "B")


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class TrialConfig:
    weeks: int = 52
    n_chronic: int = 3
    n_temporary: int = 3
    treatment_mean: float = 12.9
    control_mean: float = 1.9
    background_mean: float = 0.05
    foot_share: float = 0.5
    foot_car_correlation: float = 0.0
    car_weight: float = 1.0 / 3.0
    exclusion_radius: int = 1
    tau: float = 0.0
    deterrence: str = "linear"          # or "multiplicative": rate * exp(-tau * D)
    zero_variance: bool = False         # patrols exactly at their means
    chronic_window: int = 52
    partition_tolerance: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.weeks < 2:
            raise ValueError("a trial needs at least 2 weeks")
        if min(self.n_chronic, self.n_temporary) < 0:
            raise ValueError("hot-spot counts must be nonnegative")
        if min(self.treatment_mean, self.control_mean, self.background_mean) < 0:
            raise ValueError("patrol means must be nonnegative")
        if not 0 <= self.foot_share <= 1 or not 0 <= self.foot_car_correlation <= 1:
            raise ValueError("foot share and correlation must lie in [0, 1]")
        if self.deterrence not in ("linear", "multiplicative"):
            raise ValueError(f"unknown deterrence form {self.deterrence!r}")
        if self.exclusion_radius != 1:
            raise ValueError("only the queen (radius 1) exclusion ring is supported")

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def replication_seeds(master: int, n: int) -> list[int]:
    """Independent replication seeds derived from one master seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master).spawn(n)]


def _streams(seed: int) -> tuple[int, int, int]:
    a, b, c = (int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(3))
    return a, b, c


# ---------------------------------------------------------------------------
# schedule


@dataclass(frozen=True)
class AssignmentSchedule:
    zones: tuple
    first: tuple        # treated half in week 0, per zone
    weeks: int

    def treated_half(self, zone: int, week: int) -> str:
        i = self.zones.index(zone)
        start = HALVES.index(self.first[i])
        return HALVES[(start + week) % 2]

    def matrix(self) -> np.ndarray:
        """(n_zones, weeks) index of the treated half (0 = A, 1 = B)."""
        start = np.array([HALVES.index(h) for h in self.first])
        return (start[:, None] + np.arange(self.weeks)[None, :]) % 2

    def treated_cells(self, grid: GridSpec, halves: np.ndarray, week: int) -> np.ndarray:
        """T flag per active cell for one week."""
        zv = grid.zone_vector()
        treated = np.array([HALVES.index(self.treated_half(z, week)) for z in self.zones])
        lookup = dict(zip(self.zones, treated))
        return halves == np.array([lookup[z] for z in zv])

    def rows(self):
        for z in self.zones:
            for w in range(self.weeks):
                yield z, w, self.treated_half(z, w)


def schedule(zones: Sequence[int], weeks: int, seed: int) -> AssignmentSchedule:
    rng = np.random.default_rng(seed)
    zones = tuple(int(z) for z in sorted(zones))
    first = tuple(HALVES[int(rng.integers(2))] for _ in zones)
    return AssignmentSchedule(zones, first, int(weeks))


# ---------------------------------------------------------------------------
# selection


@dataclass(frozen=True)
class WeekSelection:
    week: int
    chronic: tuple            # (zone, position) in treated halves
    temporary: tuple
    control_chronic: tuple = ()   # same rule applied to the control halves
    control_temporary: tuple = ()

    def cells(self, treated: bool = True, kind: str | None = None) -> list[int]:
        if treated:
            groups = {"chronic": self.chronic, "temporary": self.temporary}
        else:
            groups = {"chronic": self.control_chronic, "temporary": self.control_temporary}
        keys = [kind] if kind else ["chronic", "temporary"]
        return [p for k in keys for _, p in groups[k]]


def _rank(scores: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Candidates by descending score, ties to the lower cell index."""
    s = scores[candidates]
    return candidates[np.lexsort((candidates, -s))]


def select_zone(chronic_scores, temporary_scores, candidates, n_chronic, n_temporary):
    candidates = np.asarray(candidates, dtype=np.int64)
    if len(candidates) < n_chronic + n_temporary:
        raise SelectionError(f"half has {len(candidates)} cells; need {n_chronic + n_temporary}")
    chronic = _rank(np.asarray(chronic_scores, float), candidates)[:n_chronic]
    rest = np.setdiff1d(candidates, chronic)
    temporary = _rank(np.asarray(temporary_scores, float), rest)[:n_temporary]
    return [int(c) for c in chronic], [int(c) for c in temporary]


def select_hotspots(chronic_scores, temporary_scores, sched: AssignmentSchedule, week: int,
                    cfg: TrialConfig, grid: GridSpec, halves: np.ndarray,
                    include_control: bool = True) -> WeekSelection:
    """Week's picks per zone: chronic first, then temporary among the remaining cells."""
    zv = grid.zone_vector()
    out = {"chronic": [], "temporary": [], "control_chronic": [], "control_temporary": []}
    for z in sched.zones:
        t_half = HALVES.index(sched.treated_half(z, week))
        for treated in ((True, False) if include_control else (True,)):
            half = t_half if treated else 1 - t_half
            cand = np.flatnonzero((zv == z) & (halves == half))
            ch, tp = select_zone(chronic_scores, temporary_scores, cand, cfg.n_chronic,
                                 cfg.n_temporary)
            pre = "" if treated else "control_"
            out[pre + "chronic"].extend((z, c) for c in ch)
            out[pre + "temporary"].extend((z, c) for c in tp)
    return WeekSelection(week, *(tuple(out[k]) for k in ("chronic", "temporary",
                                                         "control_chronic", "control_temporary")))


# ---------------------------------------------------------------------------
# patrols


@dataclass(frozen=True)
class PatrolLog:
    foot: np.ndarray      # (n_cells, weeks)
    car: np.ndarray
    car_weight: float = 1.0 / 3.0

    def __post_init__(self):
        if self.foot.shape != self.car.shape:
            raise ValueError("foot and car logs must align")
        if (self.foot < 0).any() or (self.car < 0).any():
            raise ValueError("patrol counts must be nonnegative")

    @property
    def dose(self) -> np.ndarray:
        return self.foot + self.car * self.car_weight

    @property
    def weeks(self) -> int:
        return self.foot.shape[1]


def patrol_means(selection: WeekSelection, n_cells: int, cfg: TrialConfig) -> np.ndarray:
    m = np.full(n_cells, cfg.background_mean)
    m[selection.cells(treated=False)] = cfg.control_mean
    m[selection.cells(treated=True)] = cfg.treatment_mean
    return m


def draw_patrols(means: np.ndarray, cfg: TrialConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    """Foot and car counts; a shared Poisson component sets their correlation."""
    mf = means * cfg.foot_share
    mc = means * (1 - cfg.foot_share)
    if cfg.zero_variance:
        return mf.copy(), mc.copy()
    shared = cfg.foot_car_correlation * np.sqrt(mf * mc)
    common = rng.poisson(shared)
    foot = rng.poisson(mf - shared) + common
    car = rng.poisson(mc - shared) + common
    return foot.astype(float), car.astype(float)


def simulate_patrols(selections: Sequence[WeekSelection], n_cells: int, cfg: TrialConfig,
                     seed: int) -> PatrolLog:
    foot = np.zeros((n_cells, len(selections)))
    car = np.zeros_like(foot)
    for j, sel in enumerate(selections):
        rng = np.random.default_rng([seed, sel.week])
        foot[:, j], car[:, j] = draw_patrols(patrol_means(sel, n_cells, cfg), cfg, rng)
    return PatrolLog(foot, car, cfg.car_weight)


# ---------------------------------------------------------------------------
# crime


def deterred_rate(rate: np.ndarray, dose: np.ndarray, cfg: TrialConfig) -> np.ndarray:
    if cfg.deterrence == "linear":
        return np.maximum(rate - cfg.tau * dose, 0.0)
    return rate * np.exp(-cfg.tau * dose)


def simulate_crime(world: World, patrols: PatrolLog, cfg: TrialConfig, seed: int,
                   first_week: int = 0, process: CrimeProcess | None = None) -> np.ndarray:
    """P1V counts (n_cells, weeks) for world weeks first_week.. under the logged patrols."""
    proc = process or CrimeProcess(world)
    proc.week = first_week
    out = np.zeros((world.grid.n_active, patrols.weeks), dtype=np.int64)
    for j in range(patrols.weeks):
        rng = np.random.default_rng([seed, j])
        lam = deterred_rate(proc.rate(proc.week), patrols.dose[:, j], cfg)
        out[:, j] = rng.poisson(lam)
        proc.advance(out[:, j])
    return out


# ---------------------------------------------------------------------------
# full trial


TRIAL_VARIABLES = (P1V, P1P)


@dataclass(eq=False)
class TrialSetup:
    """Everything shared by replications: world, pre-trial history, halves, scorers."""
    world: World
    history: PanelTensor
    memory: np.ndarray
    partitions: dict
    halves: np.ndarray
    chronic_spec: ModelSpec
    temporary_model: FittedModel
    dictionary: IndicatorDictionary
    scoring_vars: tuple

    @property
    def grid(self) -> GridSpec:
        return self.world.grid

    @property
    def history_weeks(self) -> int:
        return self.history.n_weeks

    @property
    def trial_start(self) -> date:
        return self.world.start + timedelta(weeks=self.history_weeks)


def _subpanel(panel: PanelTensor, variables) -> PanelTensor:
    idx = [panel.index(v) for v in variables]
    return PanelTensor(tuple(variables), panel.start, panel.counts[idx], panel.grid)


def prepare_trial(city: CityConfig, cfg: TrialConfig, history_weeks: int = 104, seed: int = 0,
                  temporary_spec: ModelSpec | None = None) -> TrialSetup:
    """Simulate pre-trial history, draw zone halves and fit the temporary scorer once."""
    dictionary = IndicatorDictionary()
    world = make_world(city, history_weeks + cfg.weeks, seed=seed)
    proc = CrimeProcess(world)
    full = simulate_panel(world, seed=seed, n_weeks=history_weeks, dictionary=dictionary,
                          process=proc)
    temporary_spec = temporary_spec or ModelSpec("MLP-DIFF", {"variables": (P1V,)}, seed=seed)
    used = [P1V] + [v for v in (temporary_spec["variables"] or ()) if v != P1V]
    if temporary_spec["variables"] is None:
        used += list(dictionary.offense_indicators)
    scoring_vars = tuple(dict.fromkeys(list(TRIAL_VARIABLES) + used))
    history = _subpanel(full, scoring_vars)
    parts = partition_city(world.grid, history[P1V].sum(axis=1), cfg.partition_tolerance)
    temp_model = fit(temporary_spec, history, history_weeks)
    return TrialSetup(world, history, proc.memory.copy(), parts, half_vector(world.grid, parts),
                      ModelSpec("MAVG", {"window": cfg.chronic_window}, seed=seed),
                      temp_model, dictionary, scoring_vars)


@dataclass(eq=False)
class TrialRun:
    setup: TrialSetup
    config: TrialConfig
    seed: int
    schedule: AssignmentSchedule
    selections: list
    patrols: PatrolLog
    outcomes: PanelTensor          # trial weeks only; P1V/P1P and components
    events: list = field(default_factory=list)

    @property
    def grid(self) -> GridSpec:
        return self.setup.grid

    @property
    def halves(self) -> np.ndarray:
        return self.setup.halves

    @property
    def partitions(self) -> dict:
        return self.setup.partitions


def _score_window(setup: TrialSetup, counts: np.ndarray, abs_week: int) -> PanelTensor:
    """Panel view holding just the lag history needed to score ``abs_week``."""
    lo = max(0, abs_week - 53)
    return PanelTensor(setup.scoring_vars, setup.world.start + timedelta(weeks=lo),
                       counts[:, :, lo:abs_week + 1], setup.grid), abs_week - lo


def run_trial(setup: TrialSetup, cfg: TrialConfig, seed: int | None = None,
              with_events: bool = True) -> TrialRun:
    """One replication: weekly scoring, selection, patrols and crime."""
    seed = cfg.seed if seed is None else seed
    s_sched, s_patrol, s_crime = _streams(seed)
    world, grid = setup.world, setup.grid
    H = setup.history_weeks
    sched = schedule(setup.partitions.keys(), cfg.weeks, s_sched)
    proc = CrimeProcess(world)
    proc.memory = setup.memory.copy()
    proc.week = H
    n = grid.n_active
    counts = np.zeros((len(setup.scoring_vars), n, H + cfg.weeks + 1), dtype=np.int64)
    counts[:, :, :H] = setup.history.counts
    var_idx = {v: i for i, v in enumerate(setup.scoring_vars)}
    cats_by_week, selections = [], []
    foot = np.zeros((n, cfg.weeks))
    car = np.zeros((n, cfg.weeks))
    # scoring runs on short relative-week views; the model only ever saw weeks < H
    temp_model = replace(setup.temporary_model, week=0)
    for j in range(cfg.weeks):
        w = H + j
        view, rel = _score_window(setup, counts, w)
        chronic = score(fit(setup.chronic_spec, view, rel), view, rel).scores
        temporary = score(temp_model, view, rel).scores
        sel = select_hotspots(chronic, temporary, sched, j, cfg, grid, setup.halves)
        selections.append(sel)
        rng_p = np.random.default_rng([s_patrol, j])
        foot[:, j], car[:, j] = draw_patrols(patrol_means(sel, n, cfg), cfg, rng_p)
        rng_c = np.random.default_rng([s_crime, j])
        dose = foot[:, j] + car[:, j] * cfg.car_weight
        lam = deterred_rate(proc.rate(w), dose, cfg)
        y = rng_c.poisson(lam)
        proc.advance(y)
        cats = draw_categories(world, w, y, lam, rng_c, setup.dictionary,
                               indicators=len(setup.scoring_vars) > 2)
        cats_by_week.append(cats)
        for v, i in var_idx.items():
            counts[i, :, w] = y if v == P1V else (
                sum(cats[c] for c in setup.dictionary.p1p) if v == P1P else cats[v])
    comp = list(setup.dictionary.p1v) + list(setup.dictionary.p1p)
    outcome_cats = {c: np.stack([wk[c] for wk in cats_by_week], axis=1) for c in comp}
    outcomes = PanelTensor.from_categories(outcome_cats, setup.trial_start, grid, setup.dictionary)
    events = []
    if with_events:
        events = events_from_counts(outcome_cats, grid, setup.trial_start, range(cfg.weeks),
                                    np.random.default_rng([s_crime, cfg.weeks]))
    return TrialRun(setup, cfg, seed, sched, selections, PatrolLog(foot, car, cfg.car_weight),
                    outcomes, events)


# ---------------------------------------------------------------------------
# bundle I/O


SELECTION_TYPES = ("chronic", "temporary", "control_chronic", "control_temporary")


def write_bundle(run: TrialRun, out: Path) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    grid = run.grid
    with open(out / "schedule.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["zone", "week", "treated_half"])
        w.writerows(run.schedule.rows())
    with open(out / "selections.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["week", "zone", "cell", "type"])
        for sel in run.selections:
            for t in SELECTION_TYPES:
                for z, p in getattr(sel, t):
                    w.writerow([sel.week, z, int(grid.active[p]), t])
    with open(out / "patrols.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["week", "cell", "foot", "car"])
        for j in range(run.patrols.weeks):
            for p in np.flatnonzero((run.patrols.foot[:, j] > 0) | (run.patrols.car[:, j] > 0)):
                w.writerow([j, int(grid.active[p]), repr(float(run.patrols.foot[p, j])),
                            repr(float(run.patrols.car[p, j]))])
    with open(out / "events.csv", "w", newline="") as fh:
        write_events(run.events, fh)
    with open(out / "partitions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["zone", "row", "col", "half"])
        for z in sorted(run.partitions):
            for cell, h in sorted(run.partitions[z].assignment.items()):
                w.writerow([z, cell.row, cell.col, h])
    write_zones_csv(grid, out / "zones.csv")
    meta = {"grid": {"origin_x": grid.origin_x, "origin_y": grid.origin_y,
                     "cell_size": grid.cell_size, "n_rows": grid.n_rows, "n_cols": grid.n_cols,
                     "zones_csv": "zones.csv"},
            "trial_start": run.setup.trial_start.isoformat(), "weeks": run.config.weeks,
            "seed": run.seed, "config": run.config.as_dict()}
    with open(out / "trial.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [out / n for n in ("schedule.csv", "selections.csv", "patrols.csv", "events.csv",
                              "partitions.csv", "zones.csv", "trial.json")]


class BundleError(FileNotFoundError):
    pass


BUNDLE_FILES = ("trial.json", "zones.csv", "schedule.csv", "selections.csv", "patrols.csv",
                "events.csv", "partitions.csv")


@dataclass(eq=False)
class TrialBundle:
    grid: GridSpec
    trial_start: date
    weeks: int
    config: TrialConfig
    schedule: AssignmentSchedule
    selections: list
    patrols: PatrolLog
    partitions: dict
    halves: np.ndarray
    events_path: Path


def read_bundle(path: Path) -> TrialBundle:
    """Load a trial bundle written by ``write_bundle`` (events are read separately)."""
    from .geogrid import CellId, load_grid
    path = Path(path)
    for name in BUNDLE_FILES:
        if not (path / name).exists():
            raise BundleError(f"bundle {path} is missing {name}; run the simulate command first")
    meta = json.loads((path / "trial.json").read_text())
    grid = load_grid(meta["grid"], path)
    weeks = int(meta["weeks"])
    cfg = TrialConfig(**meta["config"])
    first = {}
    with open(path / "schedule.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            if int(row["week"]) == 0:
                first[int(row["zone"])] = row["treated_half"]
    zones = tuple(sorted(first))
    sched = AssignmentSchedule(zones, tuple(first[z] for z in zones), weeks)
    sel_rows = {w: {t: [] for t in SELECTION_TYPES} for w in range(weeks)}
    with open(path / "selections.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            p = grid.position(grid.cell_at(int(row["cell"])))
            sel_rows[int(row["week"])][row["type"]].append((int(row["zone"]), p))
    selections = [WeekSelection(w, *(tuple(sel_rows[w][t]) for t in SELECTION_TYPES))
                  for w in range(weeks)]
    foot = np.zeros((grid.n_active, weeks))
    car = np.zeros_like(foot)
    with open(path / "patrols.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            p = grid.position(grid.cell_at(int(row["cell"])))
            foot[p, int(row["week"])] = float(row["foot"])
            car[p, int(row["week"])] = float(row["car"])
    assign = {}
    with open(path / "partitions.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            assign.setdefault(int(row["zone"]), {})[CellId(int(row["row"]), int(row["col"]))] = \
                row["half"]
    parts = {z: ZonePartition(z, a, float("nan")) for z, a in assign.items()}
    return TrialBundle(grid, date.fromisoformat(meta["trial_start"]), weeks, cfg, sched,
                       selections, PatrolLog(foot, car, cfg.car_weight), parts,
                       half_vector(grid, parts), path / "events.csv")
