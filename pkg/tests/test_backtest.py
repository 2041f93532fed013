from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hotspot.backtest import (BacktestConfig, BacktestError, ScoreSeries, TradeoffCurve,
                              composite_curve, evaluate, footprint, oracle_curve, pauc,
                              persistence_table, rolling_backtest, selection_entropy,
                              top_selections, tradeoff_curve)
from hotspot.geogrid import GridSpec
from hotspot.ingest import PanelTensor
from hotspot.models import ModelSpec, fit, score

from oracles import brute_entropy, riemann_pauc

START = date(2018, 1, 1)


def _panel(counts, rows=None, cols=None):
    counts = np.asarray(counts)
    n = counts.shape[0]
    g = GridSpec.full(rows or 1, cols or n)
    return PanelTensor(("p1v", "p1p"), START, np.stack([counts, np.zeros_like(counts)]), g)


# ---------------------------------------------------------------- harness

def test_mavg_single_hot_cell_is_argmax(rng):
    counts = rng.poisson(0.05, (30, 120))
    counts[17] += 2
    p = _panel(counts)
    s = rolling_backtest(ModelSpec("MAVG"), p, BacktestConfig(104, 16))
    assert (s.scores.argmax(axis=1) == 17).all()
    assert s.weeks.tolist() == list(range(104, 120))


def test_single_week_span(rng):
    p = _panel(rng.poisson(1, (10, 106)))
    s = rolling_backtest(ModelSpec("MAVG"), p, BacktestConfig(104, 1))
    assert len(s) == 1


def test_spot_check_against_refit(small_city, rng):
    _, panel = small_city
    spec = ModelSpec("KDE", {"bandwidth": 700.0})
    cfg = BacktestConfig(104, 30)
    s = rolling_backtest(spec, panel, cfg)
    for i in rng.choice(30, 5, replace=False):
        w = int(s.weeks[i])
        assert np.array_equal(s.scores[i], score(fit(spec, panel, w), panel, w).scores)


def test_refit_cadence_holds_model(small_city):
    _, panel = small_city
    spec = ModelSpec("LASSO-LC", {"max_rows": 800})
    s = rolling_backtest(spec, panel, BacktestConfig(104, 4, refit_every=4))
    m = fit(spec, panel, 104)
    assert np.array_equal(s.scores[3], score(m, panel, 107).scores)


def test_config_validation(rng):
    with pytest.raises(ValueError):
        BacktestConfig(104, 0)
    with pytest.raises(ValueError):
        BacktestConfig(train_weeks=52)
    with pytest.raises(ValueError):
        rolling_backtest(ModelSpec("MAVG"), _panel(rng.poisson(1, (4, 50))), BacktestConfig(40, 20))


def test_errors_annotated_with_week(rng):
    p = _panel(rng.poisson(1, (4, 120)))
    with pytest.raises(BacktestError) as exc:
        rolling_backtest(ModelSpec("MLP-DIFF"), p, BacktestConfig(104, 2), weeks=[30, 31])
    assert exc.value.week == 30


# ---------------------------------------------------------------- curves

def test_oracle_curve_four_cells():
    actual = _panel(np.array([[3], [1], [0], [4]]))
    s = ScoreSeries([0], actual["p1v"][:, [0]].T.astype(float))
    c = tradeoff_curve(s, actual, "p1v")
    assert np.allclose(c.area, [0, .25, .5, .75, 1])
    assert np.allclose(c.capture, [0, 4 / 8, 7 / 8, 1, 1])


def test_identical_scores_give_diagonal(rng):
    actual = _panel(rng.poisson(2, (20, 5)) + 1)
    s = ScoreSeries(np.arange(5), np.ones((5, 20)))
    c = tradeoff_curve(s, actual, "p1v")
    assert np.allclose(c.capture, c.area)


def test_all_crime_in_top_cell():
    counts = np.zeros((10, 1), int)
    counts[3] = 5
    actual = _panel(counts)
    sc = np.zeros((1, 10))
    sc[0, 3] = 9
    c = tradeoff_curve(ScoreSeries([0], sc), actual, "p1v")
    assert c.capture[1] == 1.0 and c.area[1] == 0.1


def test_zero_crime_errors():
    actual = _panel(np.zeros((5, 2), int))
    with pytest.raises(ValueError):
        tradeoff_curve(ScoreSeries([0, 1], np.ones((2, 5))), actual, "p1v")


def test_curve_bounded_by_oracle(rng):
    actual = _panel(rng.poisson(0.7, (40, 12)))
    s = ScoreSeries(np.arange(12), rng.random((12, 40)))
    c = tradeoff_curve(s, actual, "p1v")
    o = oracle_curve(actual, "p1v", range(12))
    assert (c.capture <= o.capture + 1e-12).all()
    assert (np.diff(c.capture) >= -1e-12).all()


def test_pauc_examples():
    step = TradeoffCurve(np.array([0.0, 0.0, 1.0]), np.array([0.0, 1.0, 1.0]))
    assert pauc(step, 0.01) == pytest.approx(0.01, abs=1e-15)
    diag = TradeoffCurve(np.linspace(0, 1, 101), np.linspace(0, 1, 101))
    assert pauc(diag, 0.01) == pytest.approx(5e-5, abs=1e-15)
    with pytest.raises(ValueError):
        pauc(TradeoffCurve(np.array([0, 0.005]), np.array([0, 0.5])), 0.01)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_pauc_matches_riemann(seed):
    r = np.random.default_rng(seed)
    k = int(r.integers(3, 40))
    a = np.r_[0, np.sort(r.uniform(0, 0.03, k))]
    c = np.r_[0, np.sort(r.uniform(0, 1, k))]
    curve = TradeoffCurve(a, c)
    A = 0.01 if a[-1] >= 0.01 else a[-1]
    val = pauc(curve, A)
    assert 0 <= val <= A
    assert val == pytest.approx(riemann_pauc(a, c, A), abs=1e-9)


def test_composite_identical_equals_chronic(rng):
    actual = _panel(rng.poisson(1, (30, 6)))
    s = ScoreSeries(np.arange(6), rng.random((6, 30)))
    comp = composite_curve(s, s, actual, "p1v")
    assert np.allclose(comp.capture, tradeoff_curve(s, actual, "p1v").capture)


def test_composite_six_cell_toy():
    y = np.array([[5], [0], [1], [3], [0], [2]])
    actual = _panel(y)
    chronic = ScoreSeries([0], np.array([[6.0, 5, 4, 3, 2, 1]]))
    temporary = ScoreSeries([0], np.array([[1.0, 2, 3, 4, 5, 6]]))
    c = composite_curve(chronic, temporary, actual, "p1v")
    # picks: chronic 0, temp 5, chronic 1, temp 4, chronic 2, temp 3
    assert np.allclose(c.capture * 11, [0, 5, 7, 7, 7, 8, 11])
    with pytest.raises(ValueError):
        composite_curve(chronic, ScoreSeries([1], temporary.scores), actual, "p1v")


def test_composite_dominance_bound(rng):
    actual = _panel(rng.poisson(0.8, (25, 8)))
    ch = ScoreSeries(np.arange(8), rng.random((8, 25)))
    tp = ScoreSeries(np.arange(8), rng.random((8, 25)))
    comp = composite_curve(ch, tp, actual, "p1v")
    bound = np.maximum(tradeoff_curve(ch, actual, "p1v").capture,
                       oracle_curve(actual, "p1v", range(8)).capture)
    assert (comp.capture <= bound + 1e-12).all()


# ---------------------------------------------------------------- selection metrics

def test_entropy_examples():
    assert selection_entropy([[i] for i in range(1024)]) == pytest.approx(10.0)
    assert selection_entropy([[4]] * 30) == 0.0
    assert selection_entropy([[0], [0], [1], [2]]) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        selection_entropy([])


def test_entropy_bounds_and_brute_force(rng):
    sel = [rng.choice(50, 3, replace=False) for _ in range(40)]
    h = selection_entropy(sel)
    assert h == pytest.approx(brute_entropy(np.bincount(np.concatenate(sel))))
    assert 0 <= h <= np.log2(50)


def test_persistence_examples(rng):
    same = [[1, 2, 3]] * 10
    assert set(persistence_table(same).values()) == {1.0}
    fresh = [[3 * w, 3 * w + 1, 3 * w + 2] for w in range(10)]
    assert set(persistence_table(fresh).values()) == {0.0}
    sel = [rng.choice(12, 4, replace=False) for _ in range(20)]
    n = np.bincount(np.concatenate(sel), minlength=12)
    tab = persistence_table(sel)
    for t, share in tab.items():
        keep = n >= 20 if t == 1.0 else n > t * 20
        assert share == pytest.approx(n[keep].sum() / n.sum())
    vals = [tab[t] for t in sorted(tab)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_footprint_examples():
    cells, frac = footprint([[i] for i in range(10)], 1000)
    assert len(cells) == 10 and frac == pytest.approx(0.01)
    assert footprint([[7]] * 5, 400)[1] == pytest.approx(1 / 400)


def test_evaluate_row(small_city):
    _, panel = small_city
    s = rolling_backtest(ModelSpec("MAVG"), panel, BacktestConfig(104, 30))
    row, curve = evaluate(s, panel, "p1v", 0.01)
    d = row.as_dict()
    assert 0 <= d["pauc"] <= 0.01
    assert d["pauc_over_A"] == pytest.approx(d["pauc"] / 0.01)
    assert set(d) >= {"entropy_bits", "footprint_fraction", "persist_gt_25", "persist_gt_100"}
    assert len(top_selections(s)[0]) == 1
