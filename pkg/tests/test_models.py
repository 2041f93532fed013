import warnings

import numpy as np
import pytest

from hotspot.geogrid import GridSpec, cell_of
from hotspot.models import (DEFAULTS, KINDS, ModelMismatchError, ModelSpec, ScoreGrid, fit,
                            score)
from hotspot.models.gp import fit_gp
from hotspot.models.kde import gaussian_kde_at, kde_surface
from hotspot.models.lasso import (cv_l1_logistic, fit_l1_logistic, l1_logistic_path,
                                  lambda_grid, lambda_max)
from hotspot.models.nn import (NumericError, cnn_backprop, cnn_forward, conv2d_same, init_cnn,
                               init_mlp, mlp_backprop, mlp_forward, train_mlp)
from hotspot.models.scan import box_iou, max_score_null, poisson_llr, scan_clusters
from hotspot.models.sepp import fit_sepp, simulate_hawkes
from hotspot.synth import CityConfig, make_world, simulate_panel

from oracles import dense_logistic, fd_gradient, grad_rel_error


# ---------------------------------------------------------------- MLP / CNN

def test_mlp_zero_weights_gives_bias(rng):
    w = {"W1": np.zeros((4, 3)), "b1": np.zeros(3), "W2": np.zeros(3), "b2": np.array(0.7)}
    assert np.allclose(mlp_forward(w, rng.normal(size=(5, 4))), 0.7)


def test_mlp_gradient_matches_fd(rng):
    X, y = rng.normal(size=(15, 4)), rng.normal(size=15)
    w = init_mlp(4, 5, rng)
    loss, g = mlp_backprop(w, X, y)
    assert grad_rel_error(g, fd_gradient(lambda p: mlp_backprop(p, X, y)[0], w)) < 1e-6


def test_mlp_mean_invariance(rng):
    X, y = rng.normal(size=(8, 3)), rng.normal(size=8)
    w = init_mlp(3, 4, rng)
    l1, g1 = mlp_backprop(w, X, y)
    l2, g2 = mlp_backprop(w, np.vstack([X, X]), np.r_[y, y])
    assert l1 == pytest.approx(l2)
    for k in g1:
        assert np.allclose(g1[k], g2[k])


def test_mlp_overfits_ten_rows(rng):
    X, y = rng.normal(size=(10, 3)), rng.normal(size=10)
    res = train_mlp(X, y, n_hidden=10, seed=1, lr=0.1, max_epochs=20000, patience=20000)
    assert res.train_loss < 1e-3


def test_mlp_nonfinite_raises():
    w = {"W1": np.full((1, 1), np.nan), "b1": np.zeros(1), "W2": np.ones(1), "b2": np.array(0.0)}
    with pytest.raises(NumericError):
        mlp_forward(w, np.ones((2, 1)))


def test_cnn_identity(rng):
    p = {"conv0_W": np.ones((1, 1, 1, 1)), "conv0_b": np.zeros(1),
         "head_W": np.ones(1), "head_b": np.array(0.0)}
    x = rng.normal(size=(2, 5, 6, 1))
    assert np.allclose(cnn_forward(p, x, activation="identity"), x[..., 0])


def test_conv_translation_covariance(rng):
    W, b = rng.normal(size=(3, 3, 2, 4)), np.zeros(4)
    x = np.zeros((1, 12, 12, 2))
    x[0, 3:6, 3:6] = rng.normal(size=(3, 3, 2))
    shifted = np.roll(x, (2, 3), axis=(1, 2))
    out, out_s = conv2d_same(x, W, b), conv2d_same(shifted, W, b)
    assert np.allclose(np.roll(out, (2, 3), axis=(1, 2)), out_s)


def test_conv_kernel_errors():
    with pytest.raises(ValueError):
        conv2d_same(np.zeros((1, 2, 2, 1)), np.zeros((3, 3, 1, 1)), np.zeros(1))
    with pytest.raises(ValueError):
        conv2d_same(np.zeros((1, 5, 5, 1)), np.zeros((2, 2, 1, 1)), np.zeros(1))


def test_cnn_gradient_matches_fd(rng):
    p = init_cnn(2, 3, 3, 2, rng)
    x, y = rng.normal(size=(2, 5, 4, 2)), rng.normal(size=(2, 5, 4))
    mask = rng.random((5, 4)) < 0.8
    _, g = cnn_backprop(p, x, y, mask)
    assert grad_rel_error(g, fd_gradient(lambda q: cnn_backprop(q, x, y, mask)[0], p)) < 1e-6


# ---------------------------------------------------------------- KDE

def test_kde_single_event_peak_and_symmetry():
    g = GridSpec.full(9, 9)
    pt = np.array([[2250.0, 2250.0]])
    s = kde_surface(pt, 600.0, g)
    assert np.argmax(s) == g.position(cell_of(pt[0], g))
    r = g.to_raster(s)
    assert np.allclose(r, r.T) and np.allclose(r, r[::-1, ::-1])
    assert r[4, 4] > r[4, 5] > r[4, 6]


def test_kde_two_events_and_empty():
    g = GridSpec.full(4, 12)
    s = kde_surface(np.array([[750.0, 750.0], [5250.0, 1250.0]]), 400.0, g)
    a, b = g.position((1, 1)), g.position((2, 10))
    assert s[a] == pytest.approx(s[b])
    assert (kde_surface(np.zeros((0, 2)), 400.0, g) == 0).all()
    with pytest.raises(ValueError):
        kde_surface(np.zeros((1, 2)), 0.0, g)


def test_kde_mass(rng):
    g = GridSpec.full(60, 60, cell_size=100.0)
    pts = rng.uniform(2500, 3500, (50, 2))
    s = kde_surface(pts, 200.0, g)
    assert s.sum() * g.cell_area == pytest.approx(50, rel=0.02)


# ---------------------------------------------------------------- LASSO

def _logit_data(rng, n=2000, p=50, active=(0, 7, 21), beta=1.2):
    X = rng.normal(size=(n, p))
    eta = -0.5 + X[:, list(active)] @ np.full(len(active), beta)
    y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    return X, y


def test_lasso_huge_penalty_zero_slopes(rng):
    X, y = _logit_data(rng, 300, 10, active=(0, 3, 5))
    f = fit_l1_logistic(X, y, 1e6)
    assert f.n_nonzero == 0
    assert f.intercept == pytest.approx(np.log(y.mean() / (1 - y.mean())), abs=1e-6)
    assert fit_l1_logistic(X, y, lambda_max(X, y) * 1.0001).n_nonzero == 0


def test_lasso_unpenalised_matches_dense_oracle(rng):
    x = rng.normal(size=(400, 1))
    y = (rng.random(400) < 1 / (1 + np.exp(-(0.3 + 1.5 * x[:, 0])))).astype(float)
    f = fit_l1_logistic(x, y, 0.0, tol=1e-12)
    b0, b = dense_logistic(x, y)
    assert f.intercept == pytest.approx(b0, abs=1e-4)
    assert f.coef[0] == pytest.approx(b[0], abs=1e-4)


def test_lasso_support_recovery_at_cv(rng):
    X, y = _logit_data(rng)
    lam, dev, lams = cv_l1_logistic(X, y, lambda_grid(X, y, n=15), folds=5, seed=0)
    f = fit_l1_logistic(X, y, lam)
    assert {0, 7, 21} <= set(np.flatnonzero(f.coef))


def test_lasso_path_monotone(rng):
    X, y = _logit_data(rng, 800, 30)
    path = l1_logistic_path(X, y, lambda_grid(X, y, n=25))
    nnz = [f.n_nonzero for f in path]  # decreasing penalty
    assert all(a <= b for a, b in zip(nnz, nnz[1:]))


def test_lasso_constant_labels(rng):
    X = rng.normal(size=(20, 3))
    with pytest.warns(UserWarning):
        f = fit_l1_logistic(X, np.ones(20), 0.1)
    assert f.intercept == 15.0 and f.n_nonzero == 0
    with pytest.raises(ValueError):
        fit_l1_logistic(X, np.full(20, 2.0), 0.1)
    with pytest.raises(ValueError):
        fit_l1_logistic(X, np.r_[np.ones(10), np.zeros(10)], -1.0)


# ---------------------------------------------------------------- scan

def _scan_panel(counts, grid):
    from datetime import date
    from hotspot.ingest import PanelTensor
    return PanelTensor(("x",), date(2018, 1, 1), counts[None], grid)


def test_scan_planted_block(rng):
    g = GridSpec.full(12, 12)
    base = 0.5
    counts = rng.poisson(base, (g.n_active, 60))
    r = g.to_raster(np.arange(g.n_active), fill=-1)
    block = r[4:7, 6:9].ravel()
    counts[block, 50:54] = rng.poisson(5 * base, (9, 4))
    cl = scan_clusters(_scan_panel(counts, g), "x", (48, 58), top_k=3, max_side=4,
                       expected=np.full(g.n_active, base))
    top = cl[0]
    assert box_iou((top.row0, top.row1, top.col0, top.col1, top.week0, top.week1),
                   (4, 6, 6, 8, 50, 53)) >= 0.5


def test_scan_zero_panel_empty():
    g = GridSpec.full(5, 5)
    assert scan_clusters(_scan_panel(np.zeros((25, 10), int), g), "x", (5, 10)) == []


def test_scan_null_noise_below_95th(rng):
    expected = np.full((8, 8, 4), 0.8)
    null = max_score_null(expected, 99, seed=1, max_side=3)
    obs = np.random.default_rng(7).poisson(expected)
    g = GridSpec.full(8, 8)
    counts = np.zeros((64, 8), int)
    counts[:, 4:] = g.from_raster(obs)
    cl = scan_clusters(_scan_panel(counts, g), "x", (4, 8), top_k=1, max_side=3,
                       expected=np.full(64, 0.8))
    assert cl[0].score < np.quantile(null, 0.95)


def test_poisson_llr_values():
    assert poisson_llr(10.0, 5.0) == pytest.approx(10 * np.log(2) - 5)
    assert poisson_llr(3.0, 5.0) == 0.0


def test_box_iou():
    a = (0, 1, 0, 1, 0, 1)
    assert box_iou(a, a) == 1.0
    assert box_iou(a, (2, 3, 0, 1, 0, 1)) == 0.0
    assert box_iou(a, (0, 1, 0, 1, 0, 3)) == pytest.approx(0.5)


# ---------------------------------------------------------------- SEPP

def test_sepp_single_event():
    f = fit_sepp([1.0], [0.0], [0.0], t_end=2.0, t_start=0.0)
    assert f.branching_ratio == 0.0
    assert f.bg_weights.sum() == pytest.approx(1.0)


def scott_bandwidth(x, y):
    return float(np.sqrt(0.5 * (x.var() + y.var())) * len(x) ** (-1 / 6))


def _fit_sim(t, x, y):
    return fit_sepp(t, x, y, t_end=10.0, t_start=0.0, bg_bandwidth=scott_bandwidth(x, y),
                    init_sigma=0.05, max_dist=0.4)


def test_sepp_poisson_has_small_branching():
    t, x, y = simulate_hawkes(200.0, 0.0, 1.0, 0.1, 10.0, region=(0, 10, 0, 10), seed=4)
    assert _fit_sim(t, x, y).branching_ratio < 0.1


def test_sepp_mass_conservation():
    t, x, y = simulate_hawkes(100.0, 0.4, 2.0, 0.1, 10.0, region=(0, 10, 0, 10), seed=8)
    f = _fit_sim(t, x, y)
    assert 0 <= f.branching_ratio < 1
    assert f.integrated_intensity() == pytest.approx(len(t), rel=0.05)


# ---------------------------------------------------------------- GP

def test_gp_noiseless_interpolation(rng):
    Z = rng.uniform(0, 10, (40, 3))
    y = np.sin(Z[:, 0]) + Z[:, 1] * 0.1
    gp = fit_gp(Z, y, lengthscales=[2.0, 3.0, 3.0], signal_var=1.0, noise_var=0.0)
    assert np.allclose(gp.predict(Z[:5]), y[:5], atol=1e-6)


# ---------------------------------------------------------------- zoo contract

FAST = {
    "LASSO-LC": dict(max_rows=1500),
    "LASSO-CC": dict(max_rows=1500),
    "GP": dict(max_rows=300),
    "SEPP-UNI": dict(history_weeks=20),
    "SEPP-MULTI": dict(history_weeks=12),
    "MLP-LC": dict(max_rows=800, max_epochs=30, variables=("p1v",)),
    "MLP-NH": dict(max_rows=800, max_epochs=30, variables=("p1v",)),
    "MLP-DIFF": dict(max_rows=800, max_epochs=30, variables=("p1v",)),
    "CNN": dict(max_epochs=5, channels=3, lags=(1, 2, 52)),
}


@pytest.fixture(scope="module")
def zoo_panel():
    world = make_world(CityConfig(n_rows=10, n_cols=10, n_hot=3), 120, seed=5)
    return simulate_panel(world, seed=5)


@pytest.mark.parametrize("kind", KINDS)
def test_contract_lookahead_and_determinism(kind, zoo_panel):
    spec = ModelSpec(kind, FAST.get(kind, {}), seed=2)
    w = 110
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        s1 = score(fit(spec, zoo_panel, w), zoo_panel, w)
        s2 = score(fit(spec, zoo_panel, w), zoo_panel, w)
        future = zoo_panel.counts.copy()
        future[:, :, w:] = np.random.default_rng(0).poisson(3, future[:, :, w:].shape)
        p2 = zoo_panel.with_counts(future)
        s3 = score(fit(spec, p2, w), p2, w)
    assert len(s1) == zoo_panel.n_cells and np.isfinite(s1.scores).all()
    assert np.array_equal(s1.scores, s2.scores)
    assert np.array_equal(s1.scores, s3.scores)


def test_mavg_window_sum(zoo_panel):
    from hotspot.ingest import PanelTensor
    g = GridSpec.full(2, 2)
    counts = np.zeros((2, 4, 60), int)
    counts[0, 1, 8:60] = 1
    p = PanelTensor(("p1v", "p1p"), zoo_panel.start, counts, g)
    s = score(fit(ModelSpec("MAVG"), p, 60), p, 60)
    assert s.scores[1] == 52 and s.scores[0] == 0


def test_ranking_invariance(zoo_panel):
    scaled = zoo_panel.counts.copy()
    scaled[zoo_panel.index("p1v")] *= 3
    p3 = zoo_panel.with_counts(scaled)
    for kind in ("MAVG", "KDE"):
        a = score(fit(ModelSpec(kind), zoo_panel, 100), zoo_panel, 100).scores
        b = score(fit(ModelSpec(kind), p3, 100), p3, 100).scores
        assert np.array_equal(np.argsort(a, kind="stable"), np.argsort(b, kind="stable"))


def test_kde_model_single_event_argmax(zoo_panel):
    from hotspot.ingest import PanelTensor
    g = GridSpec.full(6, 6)
    counts = np.zeros((2, 36, 10), int)
    counts[0, 14, 5] = 1
    p = PanelTensor(("p1v", "p1p"), zoo_panel.start, counts, g)
    s = score(fit(ModelSpec("KDE"), p, 10), p, 10).scores
    assert np.argmax(s) == 14 and (s < s[14]).sum() == 35


def test_lasso_lc_infinite_penalty(zoo_panel):
    m = fit(ModelSpec("LASSO-LC", {"penalty": 1e9, "max_rows": 1000}), zoo_panel, 110)
    assert np.count_nonzero(m.params["coef"]) == 0


def test_spec_validation_and_mismatch(zoo_panel):
    with pytest.raises(ValueError):
        ModelSpec("RANDOM-FOREST")
    with pytest.raises(ValueError):
        ModelSpec("KDE", {"bandwidth": -1.0})
    with pytest.raises(ValueError):
        ModelSpec("MLP-LC", {"hidden": 0})
    with pytest.raises(ValueError):
        ModelSpec("LASSO-LC", {"penalty": -0.1})
    with pytest.raises(ValueError):
        ModelSpec("MAVG", {"bandwidth": 1.0})
    assert set(DEFAULTS) == set(KINDS)
    m = fit(ModelSpec("MAVG"), zoo_panel, 100)
    from hotspot.ingest import PanelTensor
    other = PanelTensor(zoo_panel.variables[:3], zoo_panel.start, zoo_panel.counts[:3],
                        zoo_panel.grid)
    with pytest.raises(ModelMismatchError):
        score(m, other, 100)
    with pytest.raises(ModelMismatchError):
        fit(ModelSpec("MAVG", target="nope"), zoo_panel, 100)


def test_score_grid_top_ties():
    g = ScoreGrid(0, np.array([1.0, 3.0, 3.0, 0.5]))
    assert g.top(2).tolist() == [1, 2]
    with pytest.raises(NumericError):
        ScoreGrid(0, np.array([np.nan]))
