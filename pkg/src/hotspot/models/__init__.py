"""The forecasting zoo behind one ``fit`` / ``score`` contract.

``fit(spec, panel, week)`` trains on the 104 weeks ``[week-104, week-1]``;
every feature and target it touches lies inside that window.  ``score``
produces one finite value per active cell for a forecast week using only
panel weeks before it.
"""

from __future__ import annotations

import logging
import warnings
import weakref
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from ..features import (BASELINE_WEEKS, DEFAULT_LAGS, MLP_LAGS, InsufficientHistoryError,
                        diff_rows, lag_rows, neighborhood_rows)
from ..ingest import P1P, P1V, PanelTensor
from .gp import GPFit, fit_gp
from .kde import gaussian_kde_at, kde_surface
from .lasso import ConvergenceError, cv_l1_logistic, fit_l1_logistic
from .nn import NumericError, cnn_forward, mlp_forward, train_cnn, train_mlp
from .scan import cluster_features, scan_clusters
from .sepp import fit_sepp

logger = logging.getLogger(__name__)

TRAIN_WEEKS = 104
KINDS = ("MAVG", "KDE", "LASSO-LC", "LASSO-CC", "GP", "SEPP-UNI", "SEPP-MULTI",
         "MLP-LC", "MLP-NH", "CNN", "MLP-DIFF")

_MLP = dict(hidden=10, lags=MLP_LAGS, variables=None, lr=0.05, momentum=0.9, max_epochs=300,
            patience=20, max_rows=4000, val_frac=0.2)
_SEPP = dict(history_weeks=52, bg_bandwidth=500.0, init_sigma=250.0, init_omega=1.0,
             max_lag=8.0, max_dist=2000.0, tol=1e-4, max_iter=2000)

DEFAULTS: dict[str, dict] = {
    "MAVG": dict(window=52),
    "KDE": dict(window=52, bandwidth=500.0),
    "LASSO-LC": dict(penalty=0.002, lags=DEFAULT_LAGS, indicator_lags=(1, 2, 4), max_rows=6000,
                     cv_folds=5),
    "LASSO-CC": dict(penalty=0.002, scan_weeks=4, max_side=3, top_k=5, max_rows=6000,
                     cv_folds=5),
    "GP": dict(space_scale=1000.0, time_scale=4.0, noise_ratio=1.0, max_rows=2000,
               lags=(1, 2, 3, 4)),
    "SEPP-UNI": dict(_SEPP),
    "SEPP-MULTI": dict(_SEPP),
    "MLP-LC": dict(_MLP),
    "MLP-NH": dict(_MLP, nh_lags=None),
    "CNN": dict(lags=DEFAULT_LAGS, channels=8, kernel=3, depth=2, lr=0.05, momentum=0.9,
                max_epochs=200, patience=20, val_frac=0.2),
    "MLP-DIFF": dict(_MLP, baseline_weeks=BASELINE_WEEKS),
}


class ModelMismatchError(ValueError):
    pass


def _positive(params, *names):
    for n in names:
        if n in params and params[n] is not None and not params[n] > 0:
            raise ValueError(f"{n} must be positive, got {params[n]!r}")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0
    target: str = P1V

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        unknown = set(self.params) - set(DEFAULTS[self.kind])
        if unknown:
            raise ValueError(f"{self.kind} does not take parameters {sorted(unknown)}")
        merged = dict(DEFAULTS[self.kind])
        merged.update(self.params)
        p = merged
        _positive(p, "window", "bandwidth", "hidden", "lr", "max_epochs", "max_rows", "channels",
                  "kernel", "depth", "space_scale", "time_scale", "history_weeks",
                  "bg_bandwidth", "init_sigma", "init_omega", "max_lag", "max_dist",
                  "scan_weeks", "max_side", "top_k", "max_iter")
        pen = p.get("penalty")
        if pen is not None and pen != "cv" and not pen >= 0:
            raise ValueError("penalty must be >= 0 or 'cv'")
        if "hidden" in p and int(p["hidden"]) < 1:
            raise ValueError("hidden units must be >= 1")
        if "noise_ratio" in p and p["noise_ratio"] < 0:
            raise ValueError("noise_ratio must be >= 0")
        object.__setattr__(self, "params", merged)

    def __getitem__(self, name):
        return self.params[name]

    def describe(self) -> dict:
        out = {"kind": self.kind, "seed": self.seed, "target": self.target}
        out["params"] = {k: (list(v) if isinstance(v, tuple) else v)
                         for k, v in self.params.items()}
        return out


@dataclass(frozen=True, eq=False)
class FittedModel:
    kind: str
    spec: ModelSpec
    week: int                  # first week the model may score; trained on [week-104, week-1]
    params: dict
    stats: dict = field(default_factory=dict)  # standardisation statistics
    variables: tuple = ()
    n_cells: int = 0

    @property
    def window(self) -> tuple[int, int]:
        return (max(0, self.week - TRAIN_WEEKS), self.week - 1)


@dataclass(frozen=True)
class ScoreGrid:
    week: int
    scores: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float)
        if not np.all(np.isfinite(s)):
            raise NumericError(f"non-finite scores for week {self.week}")
        s = s.copy()
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)

    def __len__(self):
        return len(self.scores)

    def top(self, k: int) -> np.ndarray:
        """Positions of the ``k`` highest scores, ties to the lower index."""
        order = np.lexsort((np.arange(len(self.scores)), -self.scores))
        return order[:k]


# ---------------------------------------------------------------------------
# helpers


def _indicators(panel: PanelTensor, target: str) -> tuple[list, list]:
    """Leading-indicator variables present in the panel, split offense / call."""
    skip = {target, P1V, P1P}
    offense, calls = [], []
    for v in panel.variables:
        if v in skip:
            continue
        (calls if v.startswith("cad_") else offense).append(v)
    return offense, calls


def _group_panel(panel: PanelTensor, target: str) -> PanelTensor:
    """Panel of summed indicator groups ('offense', 'call'), empty groups dropped."""
    offense, calls = _indicators(panel, target)
    names, stack = [], []
    for name, members in (("offense", offense), ("call", calls)):
        if members:
            names.append(name)
            stack.append(sum(panel[v].astype(np.int64) for v in members))
    if not names:
        return PanelTensor((), panel.start, np.zeros((0, panel.n_cells, panel.n_weeks), np.int64),
                           panel.grid)
    return PanelTensor(tuple(names), panel.start, np.stack(stack), panel.grid)


def _train_weeks(week: int, history: int) -> np.ndarray:
    lo = max(week - TRAIN_WEEKS + history, history)
    if lo > week - 1:
        raise InsufficientHistoryError(week, history + 1)
    return np.arange(lo, week)


def _check_week(panel: PanelTensor, week: int, history: int):
    if week - history < 0:
        raise InsufficientHistoryError(week, history)
    if week > panel.n_weeks:
        raise ValueError(f"week {week} beyond panel end {panel.n_weeks}")


def _subsample(n: int, max_rows: int, rng) -> np.ndarray:
    if n <= max_rows:
        return np.arange(n)
    return np.sort(rng.choice(n, size=int(max_rows), replace=False))


def _standardize_fit(X):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    return mu, np.where(sd > 0, sd, 1.0)


def _window_sum(panel, var, week, window):
    lo = max(0, week - window)
    return panel[var][:, lo:week].sum(axis=1).astype(float)


def _pseudo_events(panel: PanelTensor, var: str, lo: int, hi: int, seed: int):
    """Jittered point events (t in weeks, x, y) realising the panel counts of weeks [lo, hi)."""
    grid = panel.grid
    centers = grid.centers()
    half = grid.cell_size / 2.0
    ts, xs, ys = [], [], []
    vidx = panel.index(var)
    for w in range(lo, hi):
        counts = panel[var][:, w]
        n = int(counts.sum())
        if n == 0:
            continue
        rng = np.random.default_rng([seed, vidx, w])
        cells = np.repeat(np.arange(len(counts)), counts)
        ts.append(w + rng.uniform(0.0, 1.0, n))
        xs.append(centers[cells, 0] + rng.uniform(-half, half, n))
        ys.append(centers[cells, 1] + rng.uniform(-half, half, n))
    if not ts:
        return np.zeros(0), np.zeros(0), np.zeros(0)
    return np.concatenate(ts), np.concatenate(xs), np.concatenate(ys)


# ---------------------------------------------------------------------------
# per-kind fitting / scoring


def _fit_mavg(spec, panel, week):
    _check_week(panel, week, 0)
    return {"window": int(spec["window"])}, {}


def _score_mavg(model, panel, week):
    return _window_sum(panel, model.spec.target, week, model.params["window"])


def _fit_kde(spec, panel, week):
    _check_week(panel, week, 0)
    return {"window": int(spec["window"]), "bandwidth": float(spec["bandwidth"])}, {}


def _score_kde(model, panel, week):
    w = _window_sum(panel, model.spec.target, week, model.params["window"])
    keep = w > 0
    if not keep.any():
        return np.zeros(panel.n_cells)
    return kde_surface(panel.grid.centers()[keep], model.params["bandwidth"], panel.grid, w[keep])


def _lasso_lc_design(spec, panel, weeks):
    offense, calls = _indicators(panel, spec.target)
    X = lag_rows(panel, [spec.target], spec["lags"], weeks)
    ind = offense + calls
    if ind:
        X = X.hstack(lag_rows(panel, ind, spec["indicator_lags"], weeks))
    return X


def _history_lasso_lc(spec):
    return max(max(spec["lags"]), max(spec["indicator_lags"]))


_CLUSTER_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _cluster_rows(spec, panel, weeks):
    groups = _group_panel(panel, spec.target)
    cache = _CLUSTER_CACHE.setdefault(panel, {})
    key_base = (spec.target, spec["scan_weeks"], spec["max_side"], spec["top_k"])
    blocks = []
    for w in weeks:
        feats = []
        for g in groups.variables:
            key = key_base + (g, int(w))
            if key not in cache:
                window = (int(w) - spec["scan_weeks"], int(w))
                cl = scan_clusters(groups, g, window, top_k=spec["top_k"],
                                   max_side=spec["max_side"])
                cache[key] = cluster_features(cl, panel.n_cells)
            feats.append(cache[key])
        blocks.append(np.hstack(feats) if feats else np.zeros((panel.n_cells, 0)))
    return np.vstack(blocks)


def _fit_lasso(spec, panel, week, design, history):
    _check_week(panel, week, history)
    weeks = _train_weeks(week, history)
    X = design(spec, panel, weeks)
    y = (panel[spec.target][:, weeks].T.reshape(-1) > 0).astype(float)
    rng = np.random.default_rng(spec.seed)
    rows = _subsample(len(y), spec["max_rows"], rng)
    X, y = X[rows], y[rows]
    lam = spec["penalty"]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if lam == "cv":
            lam = cv_l1_logistic(X, y, folds=spec["cv_folds"], seed=spec.seed)[0]
        fit = fit_l1_logistic(X, y, float(lam))
    return {"intercept": fit.intercept, "coef": fit.coef, "penalty": float(lam)}, {}


def _score_lasso(model, panel, X):
    z = X @ model.params["coef"] + model.params["intercept"]
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _fit_lasso_lc(spec, panel, week):
    return _fit_lasso(spec, panel, week, lambda s, p, w: _lasso_lc_design(s, p, w).values,
                      _history_lasso_lc(spec))


def _score_lasso_lc(model, panel, week):
    _check_week(panel, week, _history_lasso_lc(model.spec))
    return _score_lasso(model, panel, _lasso_lc_design(model.spec, panel, [week]).values)


def _history_cc(spec):
    return int(spec["scan_weeks"]) + 1


def _fit_lasso_cc(spec, panel, week):
    return _fit_lasso(spec, panel, week, _cluster_rows, _history_cc(spec))


def _score_lasso_cc(model, panel, week):
    _check_week(panel, week, _history_cc(model.spec))
    return _score_lasso(model, panel, _cluster_rows(model.spec, panel, [week]))


def _gp_design(spec, panel, weeks):
    """Kernel inputs (t, x, y) and linear-mean covariates for rows of ``weeks``."""
    weeks = np.asarray(weeks)
    n = panel.n_cells
    c = panel.grid.centers()
    Z = np.column_stack([np.repeat(weeks, n).astype(float), np.tile(c[:, 0], len(weeks)),
                         np.tile(c[:, 1], len(weeks))])
    offense, calls = _indicators(panel, spec.target)
    H = lag_rows(panel, [spec.target] + offense + calls, spec["lags"], weeks).values
    return Z, H


def _fit_gp(spec, panel, week):
    hist = max(spec["lags"])
    _check_week(panel, week, hist)
    weeks = _train_weeks(week, hist)
    Z, H = _gp_design(spec, panel, weeks)
    y = panel[spec.target][:, weeks].T.reshape(-1).astype(float)
    mu, sd = _standardize_fit(H)
    Hs = (H - mu) / sd
    # exact GP on the most recent rows (week-major order), cap max_rows
    rng = np.random.default_rng(spec.seed)
    k = min(len(y), int(spec["max_rows"]))
    n = panel.n_cells
    recent_weeks = max(1, k // n)
    start = len(y) - recent_weeks * n
    pool = np.arange(max(0, start), len(y))
    rows = np.sort(rng.choice(pool, size=min(k, len(pool)), replace=False))
    ls = np.array([spec["time_scale"], spec["space_scale"], spec["space_scale"]], float)
    beta = np.linalg.lstsq(np.column_stack([np.ones(len(y)), Hs]), y, rcond=None)[0]
    resid_var = max(float(np.var(y - beta[0] - Hs @ beta[1:])), 1e-6)
    gp = fit_gp(Z[rows], y[rows], Hs[rows], ls, resid_var, spec["noise_ratio"] * resid_var,
                beta=beta)
    return ({"Z": gp.Z, "alpha": gp.alpha, "beta": gp.beta, "lengthscales": gp.lengthscales,
             "signal_var": gp.signal_var, "noise_var": gp.noise_var},
            {"mean": mu, "sd": sd})


def _score_gp(model, panel, week):
    _check_week(panel, week, max(model.spec["lags"]))
    Z, H = _gp_design(model.spec, panel, [week])
    p = model.params
    gp = GPFit(p["Z"], p["alpha"], p["beta"], p["lengthscales"], p["signal_var"],
               p["noise_var"], float("nan"))
    return gp.predict(Z, (H - model.stats["mean"]) / model.stats["sd"])


def _sepp_events(spec, panel, lo, hi, multi):
    t, x, y = _pseudo_events(panel, spec.target, lo, hi, spec.seed)
    types = [np.zeros(t.size, np.int64)]
    ts, xs, ys = [t], [x], [y]
    n_types = 1
    if multi:
        groups = _group_panel(panel, spec.target)
        for g in groups.variables:
            gt, gx, gy = _pseudo_events(groups, g, lo, hi, spec.seed + 7919)
            ts.append(gt)
            xs.append(gx)
            ys.append(gy)
            types.append(np.full(gt.size, n_types, np.int64))
            n_types += 1
    t = np.concatenate(ts)
    order = np.argsort(t, kind="stable")
    return (t[order], np.concatenate(xs)[order], np.concatenate(ys)[order],
            np.concatenate(types)[order], n_types)


def _fit_sepp(spec, panel, week, multi):
    hw = int(spec["history_weeks"])
    _check_week(panel, week, 1)
    lo = max(0, week - min(hw, TRAIN_WEEKS))
    t, x, y, types, n_types = _sepp_events(spec, panel, lo, week, multi)
    if not (types == 0).any():
        return {"empty": True, "lo": lo}, {}
    fit = fit_sepp(t, x, y, t_end=float(week), types=types, t_start=float(lo), n_types=n_types,
                   bg_bandwidth=spec["bg_bandwidth"], init_sigma=spec["init_sigma"],
                   init_omega=spec["init_omega"], max_lag=spec["max_lag"],
                   max_dist=spec["max_dist"], min_sigma=panel.grid.cell_size / 20.0,
                   tol=spec["tol"], max_iter=spec["max_iter"])
    return {"empty": False, "fit": fit, "multi": multi}, {}


def _score_sepp(model, panel, week):
    p = model.params
    if p["empty"]:
        return np.zeros(panel.n_cells)
    spec, fit = model.spec, p["fit"]
    lo = max(0, week - int(np.ceil(spec["max_lag"])) - 1)
    t, x, y, types, _ = _sepp_events(spec, panel, lo, week, p["multi"])
    return fit.expected_counts(panel.grid.centers(), panel.grid.cell_area, float(week),
                               float(week) + 1.0, t, np.column_stack([x, y]), types)


def _mlp_variables(spec, panel):
    if spec["variables"] is not None:
        return list(spec["variables"])
    offense, _ = _indicators(panel, spec.target)
    return [spec.target] + offense


def _mlp_design(spec, panel, weeks):
    vars_ = _mlp_variables(spec, panel)
    X = lag_rows(panel, vars_, spec["lags"], weeks)
    if spec.kind == "MLP-NH":
        nh = spec["nh_lags"] or spec["lags"]
        X = X.hstack(neighborhood_rows(panel, vars_, nh, weeks))
    return X.values


def _history_mlp(spec):
    h = max(spec["lags"])
    if spec.kind == "MLP-NH" and spec["nh_lags"]:
        h = max(h, max(spec["nh_lags"]))
    if spec.kind == "MLP-DIFF":
        h = max(h, int(spec["baseline_weeks"]))
    return h


def _fit_mlp(spec, panel, week):
    hist = _history_mlp(spec)
    _check_week(panel, week, hist)
    weeks = _train_weeks(week, hist)
    X = _mlp_design(spec, panel, weeks)
    if spec.kind == "MLP-DIFF":
        y = diff_rows(panel, spec.target, weeks, int(spec["baseline_weeks"])).values
    else:
        y = panel[spec.target][:, weeks].T.reshape(-1).astype(float)
    row_weeks = np.repeat(weeks, panel.n_cells)
    rng = np.random.default_rng(spec.seed)
    rows = _subsample(len(y), spec["max_rows"], rng)
    X, y, row_weeks = X[rows], y[rows], row_weeks[rows]
    # validation: the most recent weeks of the window
    n_val_weeks = int(np.floor(spec["val_frac"] * len(weeks)))
    is_val = row_weeks >= weeks[len(weeks) - n_val_weeks] if n_val_weeks > 0 else np.zeros(len(y), bool)
    mu, sd = _standardize_fit(X[~is_val])
    ymu, ysd = float(y[~is_val].mean()), float(y[~is_val].std()) or 1.0
    Xs = (X - mu) / sd
    ys = (y - ymu) / ysd
    res = train_mlp(Xs[~is_val], ys[~is_val], n_hidden=int(spec["hidden"]), seed=spec.seed,
                    lr=spec["lr"], momentum=spec["momentum"], max_epochs=int(spec["max_epochs"]),
                    patience=int(spec["patience"]),
                    X_val=Xs[is_val] if is_val.any() else None,
                    y_val=ys[is_val] if is_val.any() else None)
    return ({"weights": res.params, "train_loss": res.train_loss, "epochs": res.epochs},
            {"x_mean": mu, "x_sd": sd, "y_mean": ymu, "y_sd": ysd})


def _score_mlp(model, panel, week):
    _check_week(panel, week, _history_mlp(model.spec))
    X = _mlp_design(model.spec, panel, [week])
    st = model.stats
    out = mlp_forward(model.params["weights"], (X - st["x_mean"]) / st["x_sd"])
    pred = out * st["y_sd"] + st["y_mean"]
    if model.kind == "MLP-DIFF":
        pred = np.maximum(pred, 0.0)
    return pred


def _cnn_tensor(spec, panel, weeks):
    grid = panel.grid
    lags = np.asarray(spec["lags"])
    c = panel[spec.target].astype(float)
    x = np.zeros((len(weeks), grid.n_rows * grid.n_cols, len(lags)))
    for i, w in enumerate(weeks):
        x[i, grid.active] = c[:, w - lags]
    return x.reshape(len(weeks), grid.n_rows, grid.n_cols, len(lags))


def _fit_cnn(spec, panel, week):
    hist = max(spec["lags"])
    _check_week(panel, week, hist)
    weeks = _train_weeks(week, hist)
    grid = panel.grid
    x = _cnn_tensor(spec, panel, weeks)
    y = np.zeros((len(weeks), grid.n_rows * grid.n_cols))
    y[:, grid.active] = panel[spec.target][:, weeks].T
    y = y.reshape(len(weeks), grid.n_rows, grid.n_cols)
    mask = grid.mask
    n_val = int(np.floor(spec["val_frac"] * len(weeks)))
    tr = slice(0, len(weeks) - n_val)
    va = slice(len(weeks) - n_val, len(weeks))
    vals = x[tr][:, mask]  # (S, n_active, C)
    mu = vals.reshape(-1, x.shape[-1]).mean(axis=0)
    sd = vals.reshape(-1, x.shape[-1]).std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    xs = (x - mu) / sd * mask[None, :, :, None]
    ymu = float(y[tr][:, mask].mean())
    ysd = float(y[tr][:, mask].std()) or 1.0
    ys = (y - ymu) / ysd
    res = train_cnn(xs[tr], ys[tr], mask, channels=int(spec["channels"]),
                    kernel=int(spec["kernel"]), depth=int(spec["depth"]), seed=spec.seed,
                    lr=spec["lr"], momentum=spec["momentum"], max_epochs=int(spec["max_epochs"]),
                    patience=int(spec["patience"]),
                    x_val=xs[va] if n_val else None, y_val=ys[va] if n_val else None)
    return ({"weights": res.params, "train_loss": res.train_loss},
            {"x_mean": mu, "x_sd": sd, "y_mean": ymu, "y_sd": ysd})


def _score_cnn(model, panel, week):
    _check_week(panel, week, max(model.spec["lags"]))
    grid = panel.grid
    st = model.stats
    x = _cnn_tensor(model.spec, panel, [week])
    xs = (x - st["x_mean"]) / st["x_sd"] * grid.mask[None, :, :, None]
    out = cnn_forward(model.params["weights"], xs)[0] * st["y_sd"] + st["y_mean"]
    return out[grid.mask]


_FIT = {
    "MAVG": _fit_mavg, "KDE": _fit_kde, "LASSO-LC": _fit_lasso_lc, "LASSO-CC": _fit_lasso_cc,
    "GP": _fit_gp, "SEPP-UNI": lambda s, p, w: _fit_sepp(s, p, w, False),
    "SEPP-MULTI": lambda s, p, w: _fit_sepp(s, p, w, True),
    "MLP-LC": _fit_mlp, "MLP-NH": _fit_mlp, "MLP-DIFF": _fit_mlp, "CNN": _fit_cnn,
}
_SCORE = {
    "MAVG": _score_mavg, "KDE": _score_kde, "LASSO-LC": _score_lasso_lc,
    "LASSO-CC": _score_lasso_cc, "GP": _score_gp, "SEPP-UNI": _score_sepp,
    "SEPP-MULTI": _score_sepp, "MLP-LC": _score_mlp, "MLP-NH": _score_mlp,
    "MLP-DIFF": _score_mlp, "CNN": _score_cnn,
}


def fit(spec: ModelSpec, panel: PanelTensor, week: int) -> FittedModel:
    """Train ``spec`` for forecasting ``week`` from the 104 weeks before it."""
    week = int(week)
    if spec.target not in panel.variables:
        raise ModelMismatchError(f"target {spec.target!r} not in panel")
    params, stats = _FIT[spec.kind](spec, panel, week)
    return FittedModel(spec.kind, spec, week, params, stats, panel.variables, panel.n_cells)


def score(model: FittedModel, panel: PanelTensor, week: int) -> ScoreGrid:
    """One-week-ahead scores for ``week`` (>= the model's fit week)."""
    week = int(week)
    if panel.variables != model.variables or panel.n_cells != model.n_cells:
        raise ModelMismatchError("panel variables or cells differ from the fitted model's")
    if week < model.week:
        raise ValueError(f"cannot score week {week} before the fit week {model.week}")
    return ScoreGrid(week, _SCORE[model.kind](model, panel, week))


__all__ = [
    "KINDS", "DEFAULTS", "TRAIN_WEEKS", "ModelSpec", "FittedModel", "ScoreGrid", "fit", "score",
    "ModelMismatchError", "ConvergenceError", "NumericError", "kde_surface", "gaussian_kde_at",
    "fit_l1_logistic", "scan_clusters", "fit_sepp",
]
