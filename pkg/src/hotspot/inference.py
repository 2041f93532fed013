"""Cell-week regression sample, fixed-effects OLS, difference tables.

Outcome model (dose mode, variant 1)::

    Y[c,p,w] = b0 + b1 * HS*D*T + b2 * HS + alpha_p + delta_w + e

Variants 2-4 add adjacency terms and split hot spots into chronic and
temporary (and, in 4, dose into car and foot).  Indicator mode swaps D*T for T.
Fixed effects are dummy columns with the first level of each family dropped.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import linalg, stats

from .geogrid import adjacency_matrix
from .ingest import PanelTensor
from .trial import HALVES, AssignmentSchedule, PatrolLog, WeekSelection

VARIANTS = (1, 2, 3, 4)
MODES = ("dose", "indicator")
SE_TYPES = ("classical", "hc1")
LABELS = ("hot_spot", "adjacent", "other")

ROW_NAMES = {
    "const": "Constant",
    "hot_spot": "Hot Spot",
    "hot_spot_x_dose": "Hot Spot x Dose (Combined)",
    "hot_spot_x_treatment": "Hot Spot x Treatment",
    "chronic_hot_spot": "Chronic Hot Spot",
    "chronic_x_dose": "Chronic Hot Spot x Dose (Combined)",
    "chronic_x_treatment": "Chronic Hot Spot x Treatment",
    "chronic_x_dose_car": "Chronic Hot Spot x Dose (Car)",
    "chronic_x_dose_foot": "Chronic Hot Spot x Dose (Foot)",
    "temporary_hot_spot": "Temp. Hot Spot",
    "temporary_x_dose": "Temp. Hot Spot x Dose (Combined)",
    "temporary_x_treatment": "Temp. Hot Spot x Treatment",
    "temporary_x_dose_car": "Temp. Hot Spot x Dose (Car)",
    "temporary_x_dose_foot": "Temp. Hot Spot x Dose (Foot)",
    "adjacent": "Adj. to Hot Spot",
    "adjacent_x_treatment": "(Adj. to Hot Spot) x Treatment",
    "other_x_treatment": "(Not Adj. to Hot Spot) x Treatment",
}


class WeekMismatchError(ValueError):
    pass


class RankDeficientError(np.linalg.LinAlgError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__("design matrix is rank deficient; collinear columns: "
                         + ", ".join(self.columns))


# ---------------------------------------------------------------------------
# sample


@dataclass(frozen=True, eq=False)
class RegressionSample:
    y: np.ndarray
    chronic: np.ndarray        # bool
    temporary: np.ndarray      # bool
    adjacent: np.ndarray       # bool, non-hot-spot cell touching a hot spot of its own arm
    treated: np.ndarray        # bool, T[p, w]
    foot: np.ndarray
    car: np.ndarray
    dose: np.ndarray
    partition: np.ndarray      # int code into partition_labels
    week: np.ndarray
    cell: np.ndarray           # active-cell position
    partition_labels: tuple
    variable: str = "p1v"
    n_dropped: int = 0

    def __post_init__(self):
        n = len(self.y)
        for name in ("chronic", "temporary", "adjacent", "treated", "foot", "car", "dose",
                     "partition", "week", "cell"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"sample column {name} has the wrong length")
        if n and (self.partition.min() < 0 or self.partition.max() >= len(self.partition_labels)):
            raise ValueError("partition codes out of range")

    def __len__(self):
        return len(self.y)

    @property
    def hot_spot(self) -> np.ndarray:
        return self.chronic | self.temporary

    @property
    def other(self) -> np.ndarray:
        return ~(self.hot_spot | self.adjacent)

    @property
    def label(self) -> np.ndarray:
        out = np.full(len(self), "other", dtype=object)
        out[self.adjacent] = "adjacent"
        out[self.hot_spot] = "hot_spot"
        return out

    def subset(self, mask) -> "RegressionSample":
        mask = np.asarray(mask)
        cols = {k: getattr(self, k)[mask] for k in
                ("y", "chronic", "temporary", "adjacent", "treated", "foot", "car", "dose",
                 "partition", "week", "cell")}
        return RegressionSample(**cols, partition_labels=self.partition_labels,
                                variable=self.variable, n_dropped=self.n_dropped)

    def with_outcome(self, y) -> "RegressionSample":
        cols = {k: getattr(self, k) for k in
                ("chronic", "temporary", "adjacent", "treated", "foot", "car", "dose",
                 "partition", "week", "cell")}
        return RegressionSample(np.asarray(y, dtype=float), **cols,
                                partition_labels=self.partition_labels, variable=self.variable,
                                n_dropped=self.n_dropped)


def _positions(pairs) -> list[int]:
    return [p for _, p in pairs]


def build_sample(outcomes: PanelTensor, selections: Sequence[WeekSelection],
                 sched: AssignmentSchedule, patrols: PatrolLog, halves: np.ndarray,
                 variable: str = "p1v") -> RegressionSample:
    """Cell-week rows for one trial, with the spillover exclusions applied.

    Dropped: control-arm cells queen-adjacent to a treated hot spot and
    treated-arm cells queen-adjacent to a control hot spot.  Hot-spot cells
    are always kept.
    """
    n_weeks = outcomes.n_weeks
    lens = {"outcomes": n_weeks, "selections": len(selections), "patrols": patrols.weeks,
            "schedule": sched.weeks}
    if len(set(lens.values())) != 1:
        raise WeekMismatchError(f"inputs span different numbers of weeks: {lens}")
    for j, sel in enumerate(selections):
        if sel.week != j:
            raise WeekMismatchError(f"selection {j} is labelled week {sel.week}")
    grid = outcomes.grid
    n = grid.n_active
    halves = np.asarray(halves)
    if len(halves) != n or patrols.foot.shape[0] != n:
        raise ValueError("halves and patrols must cover every active cell")
    A = adjacency_matrix(grid)
    zv = grid.zone_vector()
    zones = sorted(set(zv.tolist()))
    labels = tuple(f"{z}{h}" for z in zones for h in HALVES)
    pcode = np.array([zones.index(z) for z in zv]) * 2 + halves.astype(int)
    Y = outcomes[variable]
    dose = patrols.dose
    parts = {k: [] for k in ("y", "chronic", "temporary", "adjacent", "treated", "foot", "car",
                             "dose", "partition", "week", "cell")}
    dropped = 0
    for j, sel in enumerate(selections):
        T = sched.treated_cells(grid, halves, j)
        chronic = np.zeros(n, bool)
        temporary = np.zeros(n, bool)
        chronic[_positions(sel.chronic) + _positions(sel.control_chronic)] = True
        temporary[_positions(sel.temporary) + _positions(sel.control_temporary)] = True
        hs = chronic | temporary
        near_t = np.asarray(A @ (hs & T).astype(float)).ravel() > 0
        near_c = np.asarray(A @ (hs & ~T).astype(float)).ravel() > 0
        drop = ~hs & ((~T & near_t) | (T & near_c))
        adj = ~hs & ~drop & np.where(T, near_t, near_c)
        keep = np.flatnonzero(~drop)
        dropped += int(drop.sum())
        parts["y"].append(Y[keep, j])
        parts["chronic"].append(chronic[keep])
        parts["temporary"].append(temporary[keep] & ~chronic[keep])
        parts["adjacent"].append(adj[keep])
        parts["treated"].append(T[keep])
        parts["foot"].append(patrols.foot[keep, j])
        parts["car"].append(patrols.car[keep, j])
        parts["dose"].append(dose[keep, j])
        parts["partition"].append(pcode[keep])
        parts["week"].append(np.full(len(keep), j))
        parts["cell"].append(keep)
    cols = {k: np.concatenate(v) for k, v in parts.items()}
    cols["y"] = cols["y"].astype(float)
    return RegressionSample(**cols, partition_labels=labels, variable=variable,
                            n_dropped=dropped)


def sample_from_run(run, variable: str = "p1v") -> RegressionSample:
    return build_sample(run.outcomes, run.selections, run.schedule, run.patrols, run.halves,
                        variable)


# ---------------------------------------------------------------------------
# OLS


@dataclass(frozen=True)
class Coefficient:
    name: str
    estimate: float
    se: float
    ci_low: float
    ci_high: float
    t: float
    p: float


@dataclass(frozen=True, eq=False)
class OLSResult:
    names: tuple
    coef: np.ndarray
    cov_classical: np.ndarray
    cov_hc1: np.ndarray
    residuals: np.ndarray
    n: int
    df_resid: int
    r2: float
    adj_r2: float
    se_type: str = "classical"

    @property
    def cov(self) -> np.ndarray:
        return self.cov_hc1 if self.se_type == "hc1" else self.cov_classical

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.cov), 0.0))

    @property
    def tstat(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.coef / self.se

    @property
    def pvalues(self) -> np.ndarray:
        return 2.0 * stats.t.sf(np.abs(self.tstat), self.df_resid)

    def conf_int(self, level: float = 0.95) -> np.ndarray:
        q = stats.t.ppf(0.5 + level / 2.0, self.df_resid)
        se = self.se
        return np.column_stack([self.coef - q * se, self.coef + q * se])

    def __getitem__(self, name: str) -> Coefficient:
        i = self.names.index(name)
        lo, hi = self.conf_int()[i]
        return Coefficient(name, float(self.coef[i]), float(self.se[i]), float(lo), float(hi),
                           float(self.tstat[i]), float(self.pvalues[i]))

    def with_se(self, se_type: str) -> "OLSResult":
        if se_type not in SE_TYPES:
            raise ValueError(f"unknown standard-error type {se_type!r}")
        return OLSResult(self.names, self.coef, self.cov_classical, self.cov_hc1,
                         self.residuals, self.n, self.df_resid, self.r2, self.adj_r2, se_type)


def _collinear(X: np.ndarray, names, tol: float):
    _, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int((d > tol * d[0]).sum()) if len(d) and d[0] > 0 else 0
    return rank, [names[i] for i in sorted(piv[rank:])]


def ols(X, y, names=None, se_type: str = "classical", tol: float = 1e-10,
        absorbed: int = 0) -> OLSResult:
    """Least squares through a thin QR factorisation.

    ``absorbed`` counts parameters already projected out of X and y (fixed
    effects removed by demeaning); they come off the residual degrees of
    freedom.  Raises RankDeficientError naming the columns that a pivoted QR
    cannot place in the column space.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    names = tuple(names) if names is not None else tuple(f"x{i}" for i in range(k))
    if se_type not in SE_TYPES:
        raise ValueError(f"unknown standard-error type {se_type!r}")
    if n <= k + absorbed:
        raise ValueError(f"need more rows than parameters ({n} <= {k + absorbed})")
    Q, R = np.linalg.qr(X)
    d = np.abs(np.diag(R))
    if d.min() <= tol * max(d.max(), 1e-300):
        rank, bad = _collinear(X, names, tol)
        if rank < k:
            raise RankDeficientError(bad)
    beta = linalg.solve_triangular(R, Q.T @ y)
    resid = y - X @ beta
    Rinv = linalg.solve_triangular(R, np.eye(k))
    bread = Rinv @ Rinv.T
    df = n - k - absorbed
    rss = float(resid @ resid)
    cov_c = bread * (rss / df)
    Xe = X * resid[:, None]
    meat = Xe.T @ Xe
    cov_h = (n / df) * bread @ meat @ bread
    # after demeaning, y is centred already and the within R2 is reported
    tss = float(((y - y.mean()) ** 2).sum()) if not absorbed else float(y @ y)
    r2 = 1.0 - rss / tss if tss > 0 else 0.0
    adj = 1.0 - (rss / df) / (tss / (n - 1)) if tss > 0 else 0.0
    return OLSResult(names, beta, cov_c, cov_h, resid, n, df, r2, adj, se_type)


def _terms(sample: RegressionSample, variant: int, mode: str) -> list[tuple[str, np.ndarray]]:
    T = sample.treated.astype(float)
    if mode == "dose":
        x, suffix = sample.dose * T, "dose"
    else:
        x, suffix = T, "treatment"
    hs = sample.hot_spot.astype(float)
    ch = sample.chronic.astype(float)
    tp = sample.temporary.astype(float)
    adj = [("adjacent", sample.adjacent.astype(float)),
           ("adjacent_x_treatment", sample.adjacent * T),
           ("other_x_treatment", sample.other * T)]
    if variant == 1:
        return [("hot_spot", hs), (f"hot_spot_x_{suffix}", hs * x)]
    if variant == 2:
        return [("hot_spot", hs), (f"hot_spot_x_{suffix}", hs * x)] + adj
    if variant == 3:
        return [("chronic_hot_spot", ch), (f"chronic_x_{suffix}", ch * x),
                ("temporary_hot_spot", tp), (f"temporary_x_{suffix}", tp * x)] + adj
    if mode != "dose":
        raise ValueError("variant 4 splits patrol dose and exists only in dose mode")
    return [("chronic_hot_spot", ch), ("chronic_x_dose_car", ch * sample.car * T),
            ("chronic_x_dose_foot", ch * sample.foot * T),
            ("temporary_hot_spot", tp), ("temporary_x_dose_car", tp * sample.car * T),
            ("temporary_x_dose_foot", tp * sample.foot * T)] + adj


def design(sample: RegressionSample, variant: int = 1, mode: str = "dose"):
    """(X, names, week levels, partition levels); FE reference = first level present."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    terms = _terms(sample, variant, mode)
    weeks = np.unique(sample.week)
    parts = np.unique(sample.partition)
    wd = (sample.week[:, None] == weeks[None, 1:]).astype(float)
    pd = (sample.partition[:, None] == parts[None, 1:]).astype(float)
    X = np.column_stack([np.ones(len(sample))] + [v for _, v in terms] + [wd, pd])
    names = (["const"] + [k for k, _ in terms] + [f"week[{w}]" for w in weeks[1:]]
             + [f"partition[{sample.partition_labels[p]}]" for p in parts[1:]])
    return X, names, weeks, parts


def demean_two_way(A, a, b, tol: float = 1e-12, max_iter: int = 10_000) -> np.ndarray:
    """Project columns of A off the dummies of two factors by alternating means."""
    A = np.array(A, dtype=float, copy=True)
    squeeze = A.ndim == 1
    if squeeze:
        A = A[:, None]
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    na, nb = np.bincount(ia), np.bincount(ib)
    scale = max(np.abs(A).max(), 1.0)
    for _ in range(max_iter):
        ma = np.stack([np.bincount(ia, A[:, j]) for j in range(A.shape[1])], 1) / na[:, None]
        A -= ma[ia]
        mb = np.stack([np.bincount(ib, A[:, j]) for j in range(A.shape[1])], 1) / nb[:, None]
        A -= mb[ib]
        if np.abs(mb).max() <= tol * scale:
            return A[:, 0] if squeeze else A
    raise np.linalg.LinAlgError("two-way demeaning did not converge")


@dataclass(frozen=True, eq=False)
class RegressionResult:
    variant: int
    mode: str
    variable: str
    fit: OLSResult
    n_terms: int                   # const + model terms, before the FE dummies
    week_effects: dict = field(default_factory=dict)
    partition_effects: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.fit.n

    @property
    def adj_r2(self) -> float:
        return self.fit.adj_r2

    @property
    def residuals(self) -> np.ndarray:
        return self.fit.residuals

    @property
    def terms(self) -> tuple:
        return self.fit.names[:self.n_terms]

    def __getitem__(self, name: str) -> Coefficient:
        return self.fit[name]

    @property
    def key_term(self) -> str:
        """The first hot spot x dose (or x treatment) term, beta_1 in variant 1."""
        return self.terms[2] if self.terms[0] == "const" else self.terms[1]

    def to_dict(self) -> dict:
        rows = []
        alt = self.fit.with_se("hc1" if self.fit.se_type == "classical" else "classical")
        for name in self.terms:
            c, r = self.fit[name], alt[name]
            rows.append({"term": name, "label": ROW_NAMES.get(name, name),
                         "estimate": c.estimate, "se": c.se, "ci": [c.ci_low, c.ci_high],
                         "p": c.p, f"se_{alt.se_type}": r.se,
                         f"ci_{alt.se_type}": [r.ci_low, r.ci_high], f"p_{alt.se_type}": r.p})
        return {"model": self.variant, "mode": self.mode, "outcome": self.variable,
                "se_type": self.fit.se_type, "coefficients": rows,
                "week_fe": {str(k): v for k, v in self.week_effects.items()},
                "partition_fe": dict(self.partition_effects),
                "adj_r2": self.adj_r2, "n": self.n}


def ols_fit(sample: RegressionSample, variant: int = 1, mode: str = "dose",
            se_type: str = "classical", absorb: bool = False) -> RegressionResult:
    """Fixed-effects fit; ``absorb`` swaps the dummies for a within transformation.

    Absorbed fits give the same slopes and standard errors but carry no
    constant and no fixed-effect estimates.
    """
    if absorb:
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        terms = _terms(sample, variant, mode)
        X = np.column_stack([v for _, v in terms])
        both = demean_two_way(np.column_stack([X, sample.y]), sample.week, sample.partition)
        n_fe = len(np.unique(sample.week)) + len(np.unique(sample.partition)) - 1
        res = ols(both[:, :-1], both[:, -1], [k for k, _ in terms], se_type, absorbed=n_fe)
        return RegressionResult(variant, mode, sample.variable, res, len(terms))
    X, names, weeks, parts = design(sample, variant, mode)
    res = ols(X, sample.y, names, se_type)
    k = len(_terms(sample, variant, mode)) + 1
    wfx = {int(weeks[0]): 0.0}
    wfx.update({int(w): float(b) for w, b in zip(weeks[1:], res.coef[k:k + len(weeks) - 1])})
    pfx = {sample.partition_labels[parts[0]]: 0.0}
    pfx.update({sample.partition_labels[p]: float(b)
                for p, b in zip(parts[1:], res.coef[k + len(weeks) - 1:])})
    return RegressionResult(variant, mode, sample.variable, res, k, wfx, pfx)


def fit_all(sample: RegressionSample, se_type: str = "classical") -> list[RegressionResult]:
    out = [ols_fit(sample, v, "dose", se_type) for v in VARIANTS]
    out += [ols_fit(sample, v, "indicator", se_type) for v in VARIANTS[:3]]
    return out


# ---------------------------------------------------------------------------
# difference tables


def percent_change(control, treatment):
    """(treatment - control) / control in percent, exact for integer counts; None if control is 0."""
    if control == 0:
        return None
    return float(Fraction(treatment - control) / Fraction(control) * 100)


def format_percent(control, treatment, digits: int = 1) -> str | None:
    """One-decimal, half-away-from-zero rounding of the exact percent change."""
    if control == 0:
        return None
    fr = Fraction(treatment - control) / Fraction(control) * 100
    q = Decimal(1).scaleb(-digits)
    val = (Decimal(fr.numerator) / Decimal(fr.denominator)).quantize(q, rounding=ROUND_HALF_UP)
    return f"{val}%"


@dataclass(frozen=True)
class DiffRow:
    stratum: str
    control_sum: float
    control_sd: float
    control_n: int
    treatment_sum: float
    treatment_sd: float
    treatment_n: int

    @property
    def difference(self) -> float:
        return self.treatment_sum - self.control_sum

    @property
    def pct_change(self) -> float | None:
        return percent_change(_exact(self.control_sum), _exact(self.treatment_sum))

    @property
    def pct_label(self) -> str | None:
        return format_percent(_exact(self.control_sum), _exact(self.treatment_sum))

    def as_dict(self) -> dict:
        return {"stratum": self.stratum, "control_sum": self.control_sum,
                "control_sd": self.control_sd, "control_n": self.control_n,
                "treatment_sum": self.treatment_sum, "treatment_sd": self.treatment_sd,
                "treatment_n": self.treatment_n, "pct_change": self.pct_label,
                "difference": self.difference}


def _exact(x):
    return int(x) if float(x).is_integer() else Fraction(x)


def diff_row(stratum: str, control, treatment) -> DiffRow:
    control = np.asarray(control, dtype=float)
    treatment = np.asarray(treatment, dtype=float)

    def sd(v):
        return float(v.std(ddof=1)) if len(v) > 1 else float("nan")
    return DiffRow(stratum, float(control.sum()), sd(control), len(control),
                   float(treatment.sum()), sd(treatment), len(treatment))


STRATA = ("all_hot_spots", "chronic_hot_spots", "temporary_hot_spots", "adjacent_cells")


def diff_table(sample: RegressionSample) -> list[DiffRow]:
    masks = {"all_hot_spots": sample.hot_spot, "chronic_hot_spots": sample.chronic,
             "temporary_hot_spots": sample.temporary, "adjacent_cells": sample.adjacent}
    rows = []
    for name in STRATA:
        m = masks[name]
        if not m.any():
            raise ValueError(f"stratum {name} is empty")
        rows.append(diff_row(name, sample.y[m & ~sample.treated], sample.y[m & sample.treated]))
    return rows


def write_diff_csv(rows: Sequence[DiffRow], fh) -> None:
    import csv
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["stratum", "control_sum", "control_sd", "control_n", "treatment_sum",
                "treatment_sd", "treatment_n", "pct_change", "difference"])
    for r in rows:
        d = r.as_dict()
        w.writerow([d["stratum"], f"{r.control_sum:.15g}", f"{r.control_sd:.4f}", r.control_n,
                    f"{r.treatment_sum:.15g}", f"{r.treatment_sd:.4f}", r.treatment_n,
                    "" if d["pct_change"] is None else d["pct_change"], f"{r.difference:.15g}"])


# ---------------------------------------------------------------------------
# dose / outcome diagnostics


def pearson(a, b) -> float | None:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.std() == 0 or b.std() == 0:
        warnings.warn("zero variance in a correlation input; r is undefined", RuntimeWarning)
        return None
    return float(np.corrcoef(a, b)[0, 1])


def dose_outcome_correlation(sample: RegressionSample) -> dict:
    """r between mean patrols when a treated hot spot and mean outcome when a control one.

    Only cells that were both at least once qualify.
    """
    hs = sample.hot_spot
    t = hs & sample.treated
    c = hs & ~sample.treated
    n_cells = int(sample.cell.max()) + 1 if len(sample) else 0

    def mean_by_cell(mask, v):
        s = np.bincount(sample.cell[mask], v[mask], n_cells)
        k = np.bincount(sample.cell[mask], minlength=n_cells)
        return s, k
    _, kt = mean_by_cell(t, sample.y)
    yc, kc = mean_by_cell(c, sample.y)
    cells = np.flatnonzero((kt > 0) & (kc > 0))
    if len(cells) < 2:
        raise ValueError(f"need at least 2 cells seen as both treatment and control, got {len(cells)}")
    out = {"n_cells": int(len(cells))}
    y_ctrl = yc[cells] / kc[cells]
    for name, v in (("foot", sample.foot), ("car", sample.car), ("combined", sample.foot + sample.car)):
        s, _ = mean_by_cell(t, v)
        out[name] = pearson(s[cells] / kt[cells], y_ctrl)
    return out
