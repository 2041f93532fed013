"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in the pytest terminal summary (see conftest.py) and
also directly when this file is run as a script.
"""

import filecmp
import time

import numpy as np
import pytest

from hotspot.backtest import (BacktestConfig, TradeoffCurve, evaluate, pauc, rolling_backtest,
                              selection_entropy)
from hotspot.econ import (BASE_TABLE, COSTS_2018, INFLATION_2008_2018, ProgramCostInputs,
                          benefit_cost, inflate, patrol_cost)
from hotspot.geogrid import GridSpec
from hotspot.inference import diff_row, ols, ols_fit, sample_from_run
from hotspot.models import ModelSpec
from hotspot.models.lasso import l1_logistic_path, lambda_grid
from hotspot.models.nn import cnn_backprop, init_cnn, init_mlp, mlp_backprop
from hotspot.models.scan import box_iou, max_score_null, scan_clusters
from hotspot.models.sepp import fit_sepp, simulate_hawkes
from hotspot.synth import CityConfig, make_world, simulate_panel
from hotspot.trial import (TrialConfig, prepare_trial, replication_seeds, run_trial,
                           write_bundle)

from oracles import fd_gradient, grad_rel_error, normal_equations, riemann_pauc

RESULTS = []


def record(n, ok, detail, t0):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}  ({time.time() - t0:.1f}s)"
    RESULTS.append(line)
    print(line)
    return ok


# ---------------------------------------------------------------------------
# 1. difference-table arithmetic


def test_criterion_1_difference_table():
    t0 = time.time()
    cases = [(80, 61, "-23.8%", -19), (15, 10, "-33.3%", -5), (95, 71, "-25.3%", -24)]
    got = []
    for c, t, pct, diff in cases:
        r = diff_row("all", [c], [t])
        got.append((r.pct_label, r.difference))
    ok = got == [(p, d) for _, _, p, d in cases]
    assert record(1, ok, f"rows {got}", t0)


# ---------------------------------------------------------------------------
# 2. economics


def test_criterion_2_econ():
    t0 = time.time()
    table = inflate(BASE_TABLE, INFLATION_2008_2018)
    worst = max(abs(table[k] - v) for k, v in COSTS_2018.items())
    cost = patrol_cost(ProgramCostInputs())
    ratio = benefit_cost(3_411_328, 286_906)
    ok = worst <= 2 and abs(cost / 286_906 - 1) <= 1e-3 and abs(ratio - 11.89) <= 0.01
    assert record(2, ok, f"max row error ${worst:.0f}, patrol cost ${cost:,.0f}, "
                         f"benefit/cost {ratio:.4f}", t0)


# ---------------------------------------------------------------------------
# 3. OLS vs normal equations


def test_criterion_3_ols_oracle():
    t0 = time.time()
    rng = np.random.default_rng(3)
    worst_coef = worst_orth = 0.0
    for _ in range(100):
        k = int(rng.integers(2, 41))
        n = int(rng.integers(k + 10, 5001))
        X = np.column_stack([np.ones(n), rng.normal(size=(n, k - 1)) * rng.uniform(0.1, 10, k - 1)])
        y = X @ rng.normal(size=k) + rng.normal(size=n) * rng.uniform(0.1, 5)
        r = ols(X, y)
        ref = normal_equations(X, y)
        worst_coef = max(worst_coef, np.abs(r.coef - ref).max() / np.abs(ref).max())
        orth = np.abs(X.T @ r.residuals).max() / (np.linalg.norm(X, axis=0).max()
                                                 * np.linalg.norm(y))
        worst_orth = max(worst_orth, orth)
    ok = worst_coef <= 1e-8 and worst_orth <= 1e-12
    assert record(3, ok, f"max rel coef error {worst_coef:.2e}, "
                         f"max scaled X'e {worst_orth:.2e}", t0)


# ---------------------------------------------------------------------------
# 4. treatment-effect recovery


@pytest.fixture(scope="module")
def six_zone_setup():
    city = CityConfig(n_rows=20, n_cols=30, zone_rows=2, zone_cols=3)
    return prepare_trial(city, TrialConfig(), seed=2024)


@pytest.mark.slow
def test_criterion_4_effect_recovery(six_zone_setup):
    t0 = time.time()
    seeds = replication_seeds(7, 200)
    tau = 0.001
    est, gaps, patrol_gaps = [], [], []
    for s in seeds:
        run = run_trial(six_zone_setup, TrialConfig(tau=tau), seed=s, with_events=False)
        sample = sample_from_run(run)
        est.append(ols_fit(sample, 1, "dose")["hot_spot_x_dose"].estimate)
        hs = sample.hot_spot
        on, off = hs & sample.treated, hs & ~sample.treated
        gaps.append(sample.dose[on].mean() - sample.dose[off].mean())
        patrols = sample.foot + sample.car
        patrol_gaps.append(patrols[on].mean() - patrols[off].mean())
    est = np.array(est)
    mcse = est.std(ddof=1) / np.sqrt(len(est))
    z = (est.mean() + tau) / mcse
    covered = []
    for s in seeds:
        run = run_trial(six_zone_setup, TrialConfig(tau=0.0), seed=s, with_events=False)
        c = ols_fit(sample_from_run(run), 1, "dose", se_type="hc1")["hot_spot_x_dose"]
        covered.append(c.ci_low <= 0.0 <= c.ci_high)
    cov = float(np.mean(covered))
    ok = abs(z) <= 2 and 0.90 <= cov <= 0.98
    assert record(4, ok, f"mean b1 {est.mean():.6f} (MC SE {mcse:.6f}, z {z:+.2f}), "
                         f"patrol gap {np.mean(patrol_gaps):.1f} (dose gap {np.mean(gaps):.1f}), "
                         f"HC1 coverage at tau=0 {cov:.3f}", t0)


# ---------------------------------------------------------------------------
# 5. metric exactness


def test_criterion_5_metrics():
    t0 = time.time()
    checks = {}
    checks["uniform"] = all(abs(selection_entropy([[i] for i in range(n)]) - np.log2(n)) < 1e-12
                            for n in (2, 7, 64, 1000))
    checks["degenerate"] = selection_entropy([[3]] * 12) == 0.0
    checks["half_quarter"] = abs(selection_entropy([[0], [0], [1], [2]]) - 1.5) < 1e-12
    step = TradeoffCurve(np.array([0.0, 0.0, 1.0]), np.array([0.0, 1.0, 1.0]))
    diag = TradeoffCurve(np.linspace(0, 1, 101), np.linspace(0, 1, 101))
    checks["step"] = abs(pauc(step, 0.01) - 0.01) < 1e-15
    checks["diagonal"] = abs(pauc(diag, 0.01) - 5e-5) < 1e-15
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(3, 60))
        a = np.r_[0, np.sort(rng.uniform(0, 0.05, k))]
        c = np.r_[0, np.sort(rng.uniform(0, 1, k))]
        A = min(0.01, a[-1])
        worst = max(worst, abs(pauc(TradeoffCurve(a, c), A) - riemann_pauc(a, c, A)))
    checks["riemann"] = worst <= 1e-9
    ok = all(checks.values())
    assert record(5, ok, f"{checks}, max Riemann gap {worst:.1e}", t0)


# ---------------------------------------------------------------------------
# 6. qualitative orderings on a designed city


@pytest.mark.slow
def test_criterion_6_orderings():
    t0 = time.time()
    wins = np.zeros(4, int)
    bt = BacktestConfig(104, 52, refit_every=4)
    for seed in range(20):
        world = make_world(CityConfig(), 156, seed)
        panel = simulate_panel(world, seed=seed)
        rows = {}
        for kind in ("MAVG", "MLP-LC", "MLP-DIFF"):
            series = rolling_backtest(ModelSpec(kind, {}, seed=seed), panel, bt)
            rows[kind] = evaluate(series, panel, "p1v", 0.01)[0].as_dict()
        m, lc, d = rows["MAVG"], rows["MLP-LC"], rows["MLP-DIFF"]
        wins += [m["pauc"] >= d["pauc"],
                 m["entropy_bits"] < lc["entropy_bits"] < d["entropy_bits"],
                 all(m[f"persist_gt_{q}"] >= d[f"persist_gt_{q}"] for q in (25, 50, 75, 100)),
                 d["footprint_fraction"] >= 2 * m["footprint_fraction"]]
    ok = bool((wins >= 18).all())
    names = ("pauc", "entropy", "persistence", "footprint")
    assert record(6, ok, ", ".join(f"{k} {w}/20" for k, w in zip(names, wins)), t0)


# ---------------------------------------------------------------------------
# 7. numerical kernels


def _scott(x, y):
    return float(np.sqrt(0.5 * (x.var() + y.var())) * len(x) ** (-1 / 6))


def _planted_scan(seed):
    rng = np.random.default_rng(seed)
    g = GridSpec.full(12, 12)
    base = 0.5
    counts = rng.poisson(base, (g.n_active, 60))
    r0, c0 = int(rng.integers(0, 9)), int(rng.integers(0, 9))
    block = g.to_raster(np.arange(g.n_active), fill=-1)[r0:r0 + 3, c0:c0 + 3].ravel()
    counts[block, 50:54] = rng.poisson(5 * base, (9, 4))
    from datetime import date
    from hotspot.ingest import PanelTensor
    panel = PanelTensor(("x",), date(2018, 1, 1), counts[None], g)
    top = scan_clusters(panel, "x", (48, 58), top_k=1, max_side=4,
                        expected=np.full(g.n_active, base))[0]
    null = max_score_null(np.full((12, 12, 10), base), 99, seed=seed + 100, max_side=4)
    iou = box_iou((top.row0, top.row1, top.col0, top.col1, top.week0, top.week1),
                  (r0, r0 + 2, c0, c0 + 2, 50, 53))
    return top.score > null.max(), iou


def test_criterion_7_kernels():
    t0 = time.time()
    rng = np.random.default_rng(7)
    mlp_err = cnn_err = 0.0
    for _ in range(20):
        X, y = rng.normal(size=(12, 4)), rng.normal(size=12)
        w = init_mlp(4, 6, rng)
        w = {k: v + 0.3 * rng.normal(size=np.shape(v)) for k, v in w.items()}
        _, g = mlp_backprop(w, X, y)
        mlp_err = max(mlp_err, grad_rel_error(g, fd_gradient(lambda p: mlp_backprop(p, X, y)[0], w)))
    for _ in range(20):
        p = init_cnn(2, 3, 3, 2, rng)
        x, yy = rng.normal(size=(2, 5, 4, 2)), rng.normal(size=(2, 5, 4))
        mask = rng.random((5, 4)) < 0.8
        _, g = cnn_backprop(p, x, yy, mask)
        cnn_err = max(cnn_err, grad_rel_error(
            g, fd_gradient(lambda q: cnn_backprop(q, x, yy, mask)[0], p)))

    theta = 0.5
    sepp = []
    for s in range(3):
        t, x, y = simulate_hawkes(200 * (1 - theta), theta, 1.0, 0.1, 10.0,
                                  region=(0, 10, 0, 10), seed=s)
        f = fit_sepp(t, x, y, t_end=10.0, t_start=0.0, bg_bandwidth=_scott(x, y),
                     init_sigma=0.05, max_dist=0.4)
        sepp.append((len(t), f.branching_ratio))

    mono = True
    for s in range(3):
        r = np.random.default_rng(s)
        X = r.normal(size=(600, 25))
        y = (r.random(600) < 1 / (1 + np.exp(-(X[:, 0] - X[:, 3] + 0.5 * X[:, 9])))).astype(float)
        nnz = [f.n_nonzero for f in l1_logistic_path(X, y, lambda_grid(X, y, n=25))]
        mono &= all(a <= b for a, b in zip(nnz, nnz[1:]))

    scans = [_planted_scan(s) for s in range(3)]
    checks = {"mlp": mlp_err < 1e-4, "cnn": cnn_err < 1e-4,
              "sepp": all(abs(b - theta) <= 0.1 for _, b in sepp),
              "l1_path": mono,
              "scan": all(beat and iou >= 0.5 for beat, iou in scans)}
    ok = all(checks.values())
    assert record(7, ok, f"{checks}; grad err mlp {mlp_err:.1e} cnn {cnn_err:.1e}; "
                         f"sepp (n, ratio) {[(n, round(b, 3)) for n, b in sepp]}; "
                         f"scan IoU {[round(i, 2) for _, i in scans]}", t0)


# ---------------------------------------------------------------------------
# 8. structural trial invariants


def _contaminated(grid, sel, treated):
    """Non-hot-spot cells within one row and column of a hot spot of the other arm."""
    rows, cols = grid.active_rows_cols()
    hs_t = [p for _, p in sel.chronic + sel.temporary]
    hs_c = [p for _, p in sel.control_chronic + sel.control_temporary]
    hs = set(hs_t) | set(hs_c)
    out = set()
    for p in range(grid.n_active):
        if p in hs:
            continue
        others = hs_c if treated[p] else hs_t
        if any(abs(rows[p] - rows[q]) <= 1 and abs(cols[p] - cols[q]) <= 1 for q in others):
            out.add(p)
    return out


def _invariant_failures(run):
    bad = []
    m = run.schedule.matrix()
    if not (m[:, 1:] != m[:, :-1]).all():
        bad.append("alternation")
    sample = sample_from_run(run)
    prev = set()
    for j, sel in enumerate(run.selections):
        treated = run.schedule.treated_cells(run.grid, run.halves, j)
        cells = sel.cells(True)
        if set(cells) & prev:
            bad.append(f"repeat selection in week {j}")
        prev = set(cells)
        if not treated[cells].all():
            bad.append(f"hot spot outside treated half in week {j}")
        drop = _contaminated(run.grid, sel, treated)
        kept = set(sample.cell[sample.week == j].tolist())
        if drop & kept or len(kept) != run.grid.n_active - len(drop):
            bad.append(f"exclusion mismatch in week {j}")
    return bad


def test_criterion_8_structural(six_zone_setup, tmp_path):
    t0 = time.time()
    cfg = TrialConfig(tau=0.001)
    failures = []
    for s in replication_seeds(8, 4):
        run = run_trial(six_zone_setup, cfg, seed=s)
        failures += _invariant_failures(run)
    a = run_trial(six_zone_setup, cfg, seed=123)
    b = run_trial(six_zone_setup, cfg, seed=123)
    failures += _invariant_failures(a)
    write_bundle(a, tmp_path / "a")
    write_bundle(b, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    if mismatch or errors:
        failures.append(f"bundles differ: {mismatch + errors}")
    ok = not failures
    assert record(8, ok, f"5 runs checked, {len(match)} bundle files identical, "
                         f"failures {failures[:5]}", t0)


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-s"]))
