"""Command-line front end: ingest, backtest, select, simulate, analyze, report.

Every command reads one YAML config (input paths inside it are relative to
the config file) and writes into ``<out>/<command>``, where ``out`` comes from
``--out``, else the config, else ``./out``; it is taken relative to the
working directory so the bundled config never writes inside the package.
Each output directory gets a ``manifest.json`` with the config hash, seed,
package versions and a hash of every file written, so two runs with the same
config and seed can be compared byte for byte.

Exit codes: 0 ok, 1 usage or config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from datetime import date
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .backtest import (BacktestConfig, BacktestError, ScoreSeries, composite_curve, evaluate,
                       pauc, rolling_backtest)
from .econ import (INFLATION_2008_2018, BASE_TABLE, ProgramCostInputs, allocate_by_mix,
                   cost_benefit_report, inflate)
from .geogrid import load_grid
from .ingest import IndicatorDictionary, PanelTensor, build_panel, read_events
from .models import KINDS, ConvergenceError, ModelSpec, NumericError, fit, score
from .synth import CityConfig
from .trial import (TrialConfig, prepare_trial, read_bundle, replication_seeds, run_trial,
                    select_zone, write_bundle)

logger = logging.getLogger("hotspot")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
FIXTURE_CONFIG = Path(__file__).parent / "data" / "config.yaml"


class UsageError(Exception):
    pass


class PrerequisiteError(FileNotFoundError):
    def __init__(self, path, command):
        self.command = command
        super().__init__(f"{path} not found; run the '{command}' command first")


# ---------------------------------------------------------------------------
# config


class RunConfig:
    """Parsed YAML config plus per-command overrides."""

    def __init__(self, path, seed=None, out=None, threads=1):
        self.path = Path(path)
        if not self.path.exists():
            raise UsageError(f"config file {self.path} does not exist")
        self.raw_bytes = self.path.read_bytes()
        try:
            data = yaml.safe_load(self.raw_bytes) or {}
        except yaml.YAMLError as exc:
            raise UsageError(f"cannot parse {self.path}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config must be a mapping")
        self.data = data
        self.base = self.path.parent
        self.seed = int(data.get("seed", 0) if seed is None else seed)
        self.root = Path(out if out is not None else data.get("out", "out"))
        self.threads = max(1, int(threads))

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.raw_bytes).hexdigest()

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    def section(self, name: str, required: bool = False) -> dict:
        sec = self.data.get(name)
        if sec is None:
            if required:
                raise UsageError(f"config has no '{name}' section")
            return {}
        return sec

    def out_dir(self, command: str) -> Path:
        d = self.root / command
        d.mkdir(parents=True, exist_ok=True)
        return d

    def grid(self):
        g = self.section("grid", required=True)
        for k in ("n_rows", "n_cols", "zones_csv"):
            if k not in g:
                raise UsageError(f"grid section needs '{k}'")
        return load_grid(g, self.base)

    def dictionary(self) -> IndicatorDictionary:
        d = self.data.get("dictionary")
        if d is None:
            return IndicatorDictionary()
        if isinstance(d, str):
            d = yaml.safe_load(self.resolve(d).read_text())
        return IndicatorDictionary.from_mapping(d)

    def backtest(self) -> BacktestConfig:
        return _build(BacktestConfig, self.section("backtest"), "backtest")

    def model_specs(self) -> list[ModelSpec]:
        entries = self.data.get("models") or [{"kind": k} for k in KINDS]
        return [self.model_spec(e) for e in entries]

    def model_spec(self, entry) -> ModelSpec:
        if isinstance(entry, str):
            entry = {"kind": entry}
        try:
            params = {k: tuple(v) if isinstance(v, list) else v
                      for k, v in (entry.get("params") or {}).items()}
            return ModelSpec(entry["kind"], params, seed=int(entry.get("seed", self.seed)),
                             target=entry.get("target", "p1v"))
        except (KeyError, ValueError) as exc:
            raise UsageError(f"bad model spec {entry!r}: {exc}") from exc


def _build(cls, data: dict, name: str):
    known = {f.name for f in fields(cls)}
    extra = set(data) - known
    if extra:
        raise UsageError(f"{name} section has unknown keys {sorted(extra)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {name} settings: {exc}") from exc


# ---------------------------------------------------------------------------
# output helpers


def _sha_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, cfg: RunConfig, command: str, extra: dict | None = None) -> Path:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "command": command,
        "config": cfg.path.name,
        "config_sha256": cfg.sha256,
        "seed": cfg.seed,
        "versions": {"hotspot": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "outputs": {str(p.relative_to(out)): _sha_file(p) for p in files},
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    _write_json(path, manifest)
    return path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_panel(cfg: RunConfig) -> PanelTensor:
    path = cfg.resolve(cfg.data["panel_file"]) if "panel_file" in cfg.data else \
        cfg.root / "ingest" / "panel.npz"
    if not path.exists():
        raise PrerequisiteError(path, "ingest")
    return PanelTensor.load(path, cfg.grid())


def _pmap(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(cfg: RunConfig, args) -> Path:
    grid = cfg.grid()
    dictionary = cfg.dictionary()
    files = cfg.data.get("events")
    if not files:
        raise UsageError("config lists no event files")
    files = [files] if isinstance(files, str) else files
    paths = [cfg.resolve(f) for f in files]
    for p in paths:
        if not p.exists():
            raise FileNotFoundError(f"event file {p} does not exist")
    events, rejects = read_events(paths, dictionary)
    psec = cfg.section("panel", required=True)
    start = psec["start"] if isinstance(psec["start"], date) else \
        date.fromisoformat(str(psec["start"]))
    panel, report = build_panel(events, grid, dictionary, start, int(psec["weeks"]))
    out = cfg.out_dir("ingest")
    with open(out / "panel.npz", "wb") as fh:
        # np.savez stamps zip entries with fixed dates, so the archive is reproducible
        np.savez_compressed(fh, counts=panel.counts, variables=np.array(panel.variables),
                            start=np.array(panel.start.isoformat()))
    (out / "rejections.jsonl").write_text(rejects.to_jsonl())
    _write_json(out / "build_report.json", {**report.as_dict(), "rejected_rows": len(rejects)})
    write_manifest(out, cfg, "ingest")
    logger.info("ingest: %d events retained, %d rejected rows", report.retained, len(rejects))
    return out


def cmd_backtest(cfg: RunConfig, args) -> Path:
    panel = _load_panel(cfg)
    bt = cfg.backtest()
    bt.validate(panel)
    specs = cfg.model_specs()
    out = cfg.out_dir("backtest")
    (out / "curves").mkdir(exist_ok=True)
    variable = cfg.section("inference").get("variable", "p1v")

    def run(spec):
        return spec, rolling_backtest(spec, panel, bt)
    results = _pmap(run, specs, cfg.threads)
    rows = []
    series_by_kind = {}
    for spec, series in results:
        row, curve = evaluate(series, panel, variable, bt.top_fraction)
        series_by_kind.setdefault(spec.kind, series)
        rows.append(row.as_dict())
        curve.to_csv(out / "curves" / f"{spec.kind}.csv")
    comp = cfg.section("composite")
    if comp:
        ch, tp = comp.get("chronic", "MAVG"), comp.get("temporary", "MLP-DIFF")
        for kind in (ch, tp):
            if kind not in series_by_kind:
                series_by_kind[kind] = rolling_backtest(cfg.model_spec(kind), panel, bt)
        n = panel.n_cells
        curve = composite_curve(series_by_kind[ch], series_by_kind[tp], panel, variable,
                                max_area=max(bt.top_fraction, 1.0 / n))
        curve.to_csv(out / "curves" / "composite.csv")
        _write_json(out / "composite.json", {"chronic": ch, "temporary": tp,
                                             "pauc": pauc(curve, bt.top_fraction)})
    keys = list(dict.fromkeys(k for r in rows for k in r))
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in r.items()})
    _write_json(out / "metrics.json", {"rows": rows,
                                       "models": [s.describe() for s in specs],
                                       "backtest": bt.__dict__})
    write_manifest(out, cfg, "backtest")
    return out


def cmd_select(cfg: RunConfig, args) -> Path:
    panel = _load_panel(cfg)
    sec = cfg.section("select")
    week = panel.n_weeks if args.week is None else int(args.week)
    if not 0 <= week <= panel.n_weeks:
        raise UsageError(f"week must lie in [0, {panel.n_weeks}]")
    ch_spec = cfg.model_spec(sec.get("chronic", {"kind": "MAVG"}))
    tp_spec = cfg.model_spec(sec.get("temporary", {"kind": "MLP-DIFF"}))
    n_ch, n_tp = int(sec.get("n_chronic", 3)), int(sec.get("n_temporary", 3))
    ch = score(fit(ch_spec, panel, week), panel, week).scores
    tp = score(fit(tp_spec, panel, week), panel, week).scores
    grid = panel.grid
    zv = grid.zone_vector()
    centers = grid.centers()
    out = cfg.out_dir("select")
    with open(out / f"hotspots_week{week:04d}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["week", "week_start", "zone", "rank", "type", "row", "col", "cell",
                    "x_center", "y_center", "chronic_score", "temporary_score"])
        for z in grid.zone_ids:
            cand = np.flatnonzero(zv == z)
            picks = select_zone(ch, tp, cand, n_ch, n_tp)
            for kind, cells in zip(("chronic", "temporary"), picks):
                for r, p in enumerate(cells, 1):
                    cell = grid.active_cells()[p]
                    w.writerow([week, panel.week_date(week).isoformat(), z, r, kind, cell.row,
                                cell.col, int(grid.active[p]), f"{centers[p, 0]:.1f}",
                                f"{centers[p, 1]:.1f}", f"{ch[p]:.6g}", f"{tp[p]:.6g}"])
    write_manifest(out, cfg, "select", {"week": week})
    return out


def _trial_settings(cfg: RunConfig):
    sec = dict(cfg.section("trial", required=True))
    city = _build(CityConfig, sec.pop("city", {}) or {}, "trial.city")
    history = int(sec.pop("history_weeks", 104))
    reps = int(sec.pop("replications", 1))
    sec.setdefault("seed", cfg.seed)
    sec["seed"] = cfg.seed
    return city, _build(TrialConfig, sec, "trial"), history, reps


def cmd_simulate(cfg: RunConfig, args) -> Path:
    city, tcfg, history, reps = _trial_settings(cfg)
    if args.replications is not None:
        reps = int(args.replications)
    if reps < 1:
        raise UsageError("replications must be >= 1")
    setup = prepare_trial(city, tcfg, history, seed=cfg.seed)
    seeds = replication_seeds(cfg.seed, reps)
    out = cfg.out_dir("simulate")

    def one(i):
        run = run_trial(setup, tcfg, seed=seeds[i])
        d = out / f"rep_{i:03d}"
        write_bundle(run, d)
        write_manifest(d, cfg, "simulate", {"replication": i, "replication_seed": seeds[i]})
        return d
    _pmap(one, list(range(reps)), cfg.threads)
    write_manifest(out, cfg, "simulate", {"replications": reps, "replication_seeds": seeds})
    return out


def _bundle_path(cfg: RunConfig, args) -> Path:
    if args.bundle is not None:
        return Path(args.bundle)
    if "bundle" in cfg.section("inference"):
        return cfg.resolve(cfg.section("inference")["bundle"])
    path = cfg.root / "simulate" / "rep_000"
    if not path.exists():
        raise PrerequisiteError(path, "simulate")
    return path


def analyze_bundle(path, dictionary: IndicatorDictionary | None = None,
                   se_type: str = "classical") -> dict:
    """Everything the analyze command reports, from a bundle on disk."""
    from .inference import build_sample, diff_table, dose_outcome_correlation, fit_all
    dictionary = dictionary or IndicatorDictionary()
    b = read_bundle(path)
    events, rejects = read_events([b.events_path], dictionary)
    if len(rejects):
        raise ValueError(f"{b.events_path}: {len(rejects)} malformed event rows")
    outcomes, _ = build_panel(events, b.grid, dictionary, b.trial_start, b.weeks)
    out = {"regression": {}, "diff": {}, "components": {}}
    samples = {}
    for var in ("p1v", "p1p"):
        s = build_sample(outcomes, b.selections, b.schedule, b.patrols, b.halves, var)
        samples[var] = s
        out["regression"][var] = [r.to_dict() for r in fit_all(s, se_type)]
        out["diff"][var] = [r.as_dict() for r in diff_table(s)]
    base = samples["p1v"]
    for cat in dictionary.p1v + dictionary.p1p:
        rows = diff_table(base.with_outcome(
            build_sample(outcomes, b.selections, b.schedule, b.patrols, b.halves, cat).y))
        out["components"][cat] = {r.stratum: {"control": r.control_sum,
                                              "treatment": r.treatment_sum} for r in rows}
    out["correlation"] = dose_outcome_correlation(base)
    out["n"] = {"rows": len(base), "dropped": base.n_dropped}
    out["_samples"] = samples
    return out


def cmd_analyze(cfg: RunConfig, args) -> Path:
    from .inference import diff_table, write_diff_csv
    path = _bundle_path(cfg, args)
    se_type = cfg.section("inference").get("se_type", "classical")
    res = analyze_bundle(path, cfg.dictionary(), se_type)
    samples = res.pop("_samples")
    out = cfg.out_dir("analyze")
    for var, s in samples.items():
        with open(out / f"diff_{var}.csv", "w", newline="") as fh:
            write_diff_csv(diff_table(s), fh)
    _write_json(out / "regression.json", res["regression"])
    _write_json(out / "correlation.json", res["correlation"])
    _write_json(out / "analysis.json", res)
    write_manifest(out, cfg, "analyze", {"bundle": path.name})
    return out


def cmd_report(cfg: RunConfig, args) -> Path:
    sec = cfg.section("econ")
    factor = float(sec.get("inflation_factor", INFLATION_2008_2018))
    table = inflate(BASE_TABLE, factor, year=int(sec.get("report_year", 2018)))
    inputs = _build(ProgramCostInputs, sec.get("program", {}) or {}, "econ.program")
    prevented = sec.get("prevented")
    extra = {}
    if prevented is None:
        path = Path(args.analysis) if args.analysis else cfg.root / "analyze" / "analysis.json"
        if not path.exists():
            raise PrerequisiteError(path, "analyze")
        analysis = json.loads(path.read_text())
        stratum = sec.get("stratum", "all_hot_spots")
        row = next(r for r in analysis["diff"]["p1v"] if r["stratum"] == stratum)
        total = row["control_sum"] - row["treatment_sum"]
        comps = analysis["components"]
        mix = {c: comps[c][stratum]["control"] + comps[c][stratum]["treatment"]
               for c in IndicatorDictionary().p1v}
        prevented = allocate_by_mix(total, mix) if sum(mix.values()) > 0 else \
            {c: 0.0 for c in mix}
        extra = {"stratum": stratum, "prevented_total": total, "offense_mix": mix}
    rep = cost_benefit_report(prevented, inputs, table)
    rep.update(extra)
    rep["inflation_factor"] = factor
    out = cfg.out_dir("report")
    _write_json(out / "cost_benefit.json", rep)
    write_manifest(out, cfg, "report")
    return out


COMMANDS = {"ingest": cmd_ingest, "backtest": cmd_backtest, "select": cmd_select,
            "simulate": cmd_simulate, "analyze": cmd_analyze, "report": cmd_report}


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hotspot", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", default=None,
                       help="YAML run config (default: the bundled 20x20 fixture)")
        s.add_argument("--seed", type=int, default=None, help="override the master seed")
        s.add_argument("--threads", type=int, default=1, help="cap on worker threads")
        s.add_argument("--out", default=None, help="output root; results go to <out>/<command>")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "select":
            s.add_argument("--week", type=int, default=None,
                           help="forecast week index (default: the week after the panel)")
        if name == "simulate":
            s.add_argument("--replications", type=int, default=None)
        if name == "analyze":
            s.add_argument("--bundle", default=None, help="trial bundle directory")
        if name == "report":
            s.add_argument("--analysis", default=None, help="analysis.json from analyze")
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, BacktestError):
        exc = exc.cause
    if isinstance(exc, (ConvergenceError, NumericError, np.linalg.LinAlgError,
                        FloatingPointError)):
        return EXIT_NUMERIC
    return EXIT_DATA


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("hotspot: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))
    try:
        cfg = RunConfig(args.config or FIXTURE_CONFIG, args.seed, args.out, args.threads)
        out = COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"hotspot {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, RuntimeError, ArithmeticError,
            np.linalg.LinAlgError) as exc:
        code = _exit_code(exc)
        kind = "numeric failure" if code == EXIT_NUMERIC else "data error"
        print(f"hotspot {args.command}: {kind}: {exc}", file=sys.stderr)
        return code
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
