"""Event parsing and aggregation to cell-week count panels.

The event CSV has the columns::

    timestamp_iso8601, x_ft, y_ft, source, category, domestic, victim_group

``victim_group`` is optional.  Weeks are anchored on Mondays at 00:00 UTC.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from .geogrid import GridSpec, cells_of

logger = logging.getLogger(__name__)

EVENT_COLUMNS = ("timestamp_iso8601", "x_ft", "y_ft", "source", "category", "domestic",
                 "victim_group")
SOURCES = ("offense", "call")
WEEK_SECONDS = 7 * 24 * 3600
P1V = "p1v"
P1P = "p1p"


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class IndicatorDictionary:
    """Category vocabulary: Part 1 groups plus leading-indicator variables."""

    p1v: tuple = ("homicide", "rape", "robbery", "aggravated_assault")
    p1p: tuple = ("burglary", "larceny", "vehicle_theft")
    offense_indicators: tuple = (
        "simple_assault", "vandalism", "liquor_law", "public_drunkenness",
        "disorderly_conduct", "criminal_mischief", "trespass",
    )
    call_indicators: tuple = (
        "cad_assault", "cad_burglary", "cad_criminal_mischief", "cad_disorderly_person",
        "cad_disturbance", "cad_drug_complaint", "cad_harassment", "cad_larceny",
        "cad_suspicious_activity", "cad_vehicle_theft", "cad_weapons",
    )
    # recognised but never counted (e.g. retail crimes)
    excluded: tuple = ("retail_theft",)

    def __post_init__(self):
        if set(self.p1v) & set(self.p1p):
            raise ValueError("P1V and P1P categories must be disjoint")
        cats = self.categories
        if len(cats) != len(set(cats)):
            raise ValueError("every category must be listed exactly once")
        if set(cats) & set(self.excluded):
            raise ValueError("excluded categories may not also be counted")

    @property
    def categories(self) -> tuple:
        """Counted categories in panel order."""
        return self.p1v + self.p1p + self.offense_indicators + self.call_indicators

    @property
    def calls(self) -> frozenset:
        return frozenset(self.call_indicators)

    def known(self, category: str) -> bool:
        return category in self.categories or category in self.excluded

    @classmethod
    def from_mapping(cls, data: Mapping) -> "IndicatorDictionary":
        kw = {k: tuple(v) for k, v in data.items()
              if k in ("p1v", "p1p", "offense_indicators", "call_indicators", "excluded")}
        return cls(**kw)


@dataclass(frozen=True, slots=True)
class EventRecord:
    timestamp: float  # UTC seconds since the epoch
    x: float
    y: float
    source: str
    category: str
    domestic: bool = False
    victim_group: str | None = None


@dataclass
class RejectionReport:
    rows: list = field(default_factory=list)

    def add(self, line: int, reason: str, raw) -> None:
        self.rows.append({"line": line, "reason": reason, "raw": raw})

    def __len__(self):
        return len(self.rows)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.rows)


def parse_timestamp(text: str) -> float:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def format_timestamp(seconds: float) -> str:
    return datetime.fromtimestamp(seconds, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_events(stream: TextIO, dictionary: IndicatorDictionary | None = None,
                 ) -> tuple[list[EventRecord], RejectionReport]:
    """Parse an event CSV.  Malformed rows go to the rejection report."""
    dictionary = dictionary or IndicatorDictionary()
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("event stream has no header row") from None
    header = [h.strip() for h in header]
    missing = [c for c in EVENT_COLUMNS[:6] if c not in header]
    if missing:
        raise IngestError(f"event header missing columns {missing}")
    col = {name: header.index(name) for name in EVENT_COLUMNS if name in header}

    events, report = [], RejectionReport()
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not v.strip() for v in row):
            continue
        try:
            events.append(_parse_row(row, col, dictionary))
        except (ValueError, IndexError) as exc:
            report.add(lineno, str(exc), row)
    if report:
        logger.info("rejected %d malformed event rows", len(report))
    return events, report


def _parse_row(row, col, dictionary) -> EventRecord:
    if len(row) < len(col) - ("victim_group" in col):
        raise ValueError("too few fields")
    try:
        ts = parse_timestamp(row[col["timestamp_iso8601"]])
    except ValueError:
        raise ValueError(f"bad timestamp {row[col['timestamp_iso8601']]!r}") from None
    x = float(row[col["x_ft"]])
    y = float(row[col["y_ft"]])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError("non-finite coordinates")
    source = row[col["source"]].strip()
    if source not in SOURCES:
        raise ValueError(f"unknown source {source!r}")
    category = row[col["category"]].strip()
    if not dictionary.known(category):
        raise ValueError(f"unknown category {category!r}")
    dom = row[col["domestic"]].strip()
    if dom not in ("0", "1", ""):
        raise ValueError(f"bad domestic flag {dom!r}")
    victim = None
    if "victim_group" in col and col["victim_group"] < len(row):
        victim = row[col["victim_group"]].strip() or None
    return EventRecord(ts, x, y, source, category, dom == "1", victim)


def write_events(events: Iterable[EventRecord], stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(EVENT_COLUMNS)
    for e in events:
        w.writerow([format_timestamp(e.timestamp), repr(float(e.x)), repr(float(e.y)),
                    e.source, e.category, int(e.domestic), e.victim_group or ""])


# ---------------------------------------------------------------------------
# panels


def monday_of(d: date) -> date:
    return d - timedelta(days=d.weekday())


def week_start_seconds(start: date) -> float:
    return datetime(start.year, start.month, start.day, tzinfo=timezone.utc).timestamp()


@dataclass(frozen=True, eq=False)
class PanelTensor:
    """Counts indexed (variable, active cell, week).

    Week 0 begins at ``start`` (a Monday).  Composite variables ``p1v`` and
    ``p1p`` are sums of their component categories.
    """

    variables: tuple
    start: date
    counts: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 3 or counts.shape[0] != len(self.variables):
            raise ValueError("counts must be (n_variables, n_cells, n_weeks)")
        if counts.shape[1] != self.grid.n_active:
            raise ValueError("panel cell axis does not match the grid mask")
        if (counts < 0).any():
            raise ValueError("counts must be nonnegative")
        if self.start.weekday() != 0:
            raise ValueError("panel weeks must start on a Monday")
        counts = counts.copy()
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "variables", tuple(self.variables))

    @property
    def n_weeks(self) -> int:
        return self.counts.shape[2]

    @property
    def n_cells(self) -> int:
        return self.counts.shape[1]

    def index(self, variable: str) -> int:
        try:
            return self.variables.index(variable)
        except ValueError:
            raise KeyError(f"variable {variable!r} not in panel") from None

    def __getitem__(self, variable: str) -> np.ndarray:
        """(n_cells, n_weeks) counts of one variable."""
        return self.counts[self.index(variable)]

    def week_date(self, week: int) -> date:
        return self.start + timedelta(weeks=int(week))

    def week_of(self, timestamp: float) -> int:
        return math.floor((timestamp - week_start_seconds(self.start)) / WEEK_SECONDS)

    def with_counts(self, counts) -> "PanelTensor":
        return PanelTensor(self.variables, self.start, counts, self.grid)

    def truncated(self, n_weeks: int) -> "PanelTensor":
        return self.with_counts(self.counts[:, :, :n_weeks])

    def __add__(self, other: "PanelTensor") -> "PanelTensor":
        if (other.variables != self.variables or other.start != self.start
                or other.counts.shape != self.counts.shape):
            raise ValueError("panels are not aligned")
        return self.with_counts(self.counts + other.counts)

    def save(self, path) -> None:
        np.savez_compressed(path, counts=self.counts,
                            variables=np.array(self.variables),
                            start=np.array(self.start.isoformat()))

    @classmethod
    def load(cls, path, grid: GridSpec) -> "PanelTensor":
        with np.load(path, allow_pickle=False) as z:
            return cls(tuple(str(v) for v in z["variables"]),
                       date.fromisoformat(str(z["start"])), z["counts"], grid)

    @classmethod
    def from_categories(cls, category_counts: Mapping[str, np.ndarray], start: date,
                        grid: GridSpec, dictionary: IndicatorDictionary | None = None,
                        ) -> "PanelTensor":
        """Assemble a panel (adding composites) from per-category count arrays."""
        dictionary = dictionary or IndicatorDictionary()
        shape = next(iter(category_counts.values())).shape
        cats = list(dictionary.categories)
        for extra in category_counts:
            if extra not in cats:
                raise KeyError(f"unknown category {extra!r}")
        stack = [np.asarray(category_counts.get(c, np.zeros(shape, np.int64)), dtype=np.int64)
                 for c in cats]
        p1v = sum(stack[cats.index(c)] for c in dictionary.p1v)
        p1p = sum(stack[cats.index(c)] for c in dictionary.p1p)
        return cls(tuple(cats) + (P1V, P1P), start, np.stack(stack + [p1v, p1p]), grid)


@dataclass
class BuildReport:
    input_events: int = 0
    retained: int = 0
    dropped_out_of_mask: int = 0
    dropped_out_of_range: int = 0
    excluded_domestic: int = 0
    excluded_category: int = 0

    @property
    def dropped(self) -> int:
        return self.dropped_out_of_mask + self.dropped_out_of_range

    @property
    def excluded(self) -> int:
        return self.excluded_domestic + self.excluded_category

    def as_dict(self) -> dict:
        return {"input_events": self.input_events, "retained": self.retained,
                "dropped_out_of_mask": self.dropped_out_of_mask,
                "dropped_out_of_range": self.dropped_out_of_range,
                "excluded_domestic": self.excluded_domestic,
                "excluded_category": self.excluded_category}


def build_panel(events: Sequence[EventRecord], grid: GridSpec,
                dictionary: IndicatorDictionary | None, start: date, n_weeks: int,
                ) -> tuple[PanelTensor, BuildReport]:
    """Aggregate events into a (variable, cell, week) count panel.

    Domestic-flagged P1V events and excluded categories are removed; events
    outside the mask or the week range are dropped.  Every input event lands
    in exactly one of those buckets or in the panel.
    """
    dictionary = dictionary or IndicatorDictionary()
    if n_weeks < 1:
        raise ValueError("week range must be nonempty")
    start = monday_of(start)
    cats = list(dictionary.categories)
    cat_index = {c: i for i, c in enumerate(cats)}
    p1v = set(dictionary.p1v)
    report = BuildReport(input_events=len(events))
    counts = np.zeros((len(cats), grid.n_active, n_weeks), dtype=np.int64)
    if events:
        ts = np.array([e.timestamp for e in events], dtype=float)
        xs = np.array([e.x for e in events], dtype=float)
        ys = np.array([e.y for e in events], dtype=float)
        category = [e.category for e in events]
        excluded_cat = np.array([c not in cat_index for c in category])
        domestic = np.array([e.domestic and e.category in p1v for e in events]) & ~excluded_cat
        keep = ~excluded_cat & ~domestic
        pos = cells_of(xs, ys, grid)
        week = np.floor((ts - week_start_seconds(start)) / WEEK_SECONDS).astype(np.int64)
        out_mask = keep & (pos < 0)
        out_range = keep & ~out_mask & ((week < 0) | (week >= n_weeks))
        retained = keep & ~out_mask & ~out_range
        vi = np.array([cat_index.get(c, -1) for c in category], dtype=np.int64)
        np.add.at(counts, (vi[retained], pos[retained], week[retained]), 1)
        report.excluded_category = int(excluded_cat.sum())
        report.excluded_domestic = int(domestic.sum())
        report.dropped_out_of_mask = int(out_mask.sum())
        report.dropped_out_of_range = int(out_range.sum())
        report.retained = int(retained.sum())
    panel = PanelTensor.from_categories(dict(zip(cats, counts)), start, grid, dictionary)
    return panel, report


def read_events(paths: Iterable, dictionary: IndicatorDictionary | None = None,
                ) -> tuple[list[EventRecord], RejectionReport]:
    events, report = [], RejectionReport()
    for path in paths:
        opener = gzip.open if str(path).endswith(".gz") else open
        with opener(path, "rt", newline="") as fh:
            ev, rep = parse_events(fh, dictionary)
        events.extend(ev)
        for r in rep.rows:
            report.rows.append({**r, "file": str(path)})
    return events, report


def events_from_text(text: str, dictionary: IndicatorDictionary | None = None):
    return parse_events(io.StringIO(text), dictionary)
