"""Self-exciting point process fitted by EM with stochastic declustering.

Target events arrive with intensity::

    lambda(x, t) = mu(x) + sum_{j: t_j < t} theta_k(j) * omega_k exp(-omega_k (t - t_j))
                                          * N(x - x_j; 0, sigma_k^2 I)

where ``mu`` is a time-homogeneous background whose spatial profile is a
weighted Gaussian KDE of the events (weights = background probabilities),
and ``k(j)`` is the parent's type.  Type 0 is the target process itself;
types >= 1 are leading-indicator events that may trigger targets but are
not modelled as children.  The E-step assigns each target event a
probability of being background or the offspring of each earlier event; the
M-step re-estimates ``theta``, ``omega`` and ``sigma`` per parent type in
closed form.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .kde import gaussian_kde_at
from .lasso import ConvergenceError

logger = logging.getLogger(__name__)

MAX_BRANCHING = 0.999


@dataclass
class SEPPFit:
    theta: np.ndarray          # branching coefficient per parent type
    omega: np.ndarray          # temporal decay rate per parent type (1/time unit)
    sigma: np.ndarray          # spatial kernel s.d. per parent type
    bg_points: np.ndarray      # (n_target, 2) target event locations
    bg_weights: np.ndarray     # background probability per target event
    bg_bandwidth: float
    t_start: float
    t_end: float
    iterations: int
    last_delta: float
    parents: tuple = field(repr=False, default=())  # (times, xy, types) of all events

    @property
    def branching_ratio(self) -> float:
        return float(self.theta[0])

    @property
    def background_rate(self) -> float:
        """Expected background events per time unit."""
        return float(self.bg_weights.sum() / (self.t_end - self.t_start))

    def background_density(self, xy) -> np.ndarray:
        """Background intensity per unit area per unit time at ``xy``."""
        dens = gaussian_kde_at(xy, self.bg_points, self.bg_bandwidth, self.bg_weights)
        return dens / (self.t_end - self.t_start)

    def integrated_intensity(self) -> float:
        """Expected number of target events over the fitted window."""
        times, _, types = self.parents
        tail = 1.0 - np.exp(-self.omega[types] * (self.t_end - times))
        return float(self.bg_weights.sum() + np.sum(self.theta[types] * tail))

    def expected_counts(self, xy, area: float, t0: float, t1: float,
                        times=None, locs=None, types=None) -> np.ndarray:
        """Expected target events in [t0, t1) in a cell of ``area`` centred at each ``xy``."""
        if times is None:
            times, locs, types = self.parents
        xy = np.atleast_2d(xy)
        out = self.background_density(xy) * (t1 - t0) * area
        keep = times < t1
        times, locs, types = times[keep], locs[keep], types[keep]
        if times.size == 0:
            return out
        om = self.omega[types]
        a = np.clip(t0 - times, 0.0, None)
        b = t1 - times
        temporal = self.theta[types] * (np.exp(-om * a) - np.exp(-om * b))
        sig = self.sigma[types]
        d2 = ((xy[:, None, :] - locs[None, :, :]) ** 2).sum(axis=2)
        spatial = np.exp(-0.5 * d2 / sig ** 2) / (2 * np.pi * sig ** 2)
        return out + area * (spatial @ temporal)


def _pairs(times, xy, is_target, max_lag, max_dist):
    """All (child, parent) pairs: child a target, parent earlier, within cut-offs.

    Candidates come from a Chebyshev-ball search in (x, y, scaled t) so the
    time cut-off prunes as early as the spatial one.
    """
    if not np.isfinite(max_lag):
        max_lag = float(times.max() - times.min()) + 1.0
    scale = max_dist / max_lag
    pts = np.column_stack([xy, times * scale])
    tgt = np.flatnonzero(is_target)
    sdm = cKDTree(pts[tgt]).sparse_distance_matrix(cKDTree(pts), max_dist, p=np.inf,
                                                    output_type="ndarray")
    child = tgt[sdm["i"]]
    parent = sdm["j"].astype(np.int64)
    dt = times[child] - times[parent]
    d2 = ((xy[child] - xy[parent]) ** 2).sum(axis=1)
    ok = (dt > 0) & (dt <= max_lag) & (d2 <= max_dist ** 2)
    order = np.lexsort((parent[ok], child[ok]))
    return child[ok][order], parent[ok][order]


def fit_sepp(times, xs, ys, t_end: float | None = None, types=None, t_start: float | None = None,
             n_types: int | None = None, bg_bandwidth: float = 1.0, init_theta: float = 0.5,
             init_omega: float = 1.0, init_sigma: float = 1.0, max_lag: float = np.inf,
             max_dist: float | None = None, min_sigma: float = 1e-6, tol: float = 1e-4,
             max_iter: int = 1000) -> SEPPFit:
    """EM fit; ``types`` (default all 0) marks target (0) vs indicator (>=1) events."""
    times = np.asarray(times, dtype=float)
    xy = np.column_stack([np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)])
    n = times.size
    types = np.zeros(n, dtype=np.int64) if types is None else np.asarray(types, dtype=np.int64)
    n_types = int(n_types or (types.max() + 1 if n else 1))
    is_target = types == 0
    if not is_target.any():
        raise ValueError("no target events to fit")
    t_start = float(times.min()) if t_start is None else float(t_start)
    t_end = float(times.max()) if t_end is None else float(t_end)
    if t_end <= t_start:
        t_end = t_start + 1.0
    if max_dist is None:
        max_dist = 6.0 * max(init_sigma, min_sigma) * 4.0
    target_idx = np.flatnonzero(is_target)
    tpos = np.full(n, -1)
    tpos[target_idx] = np.arange(target_idx.size)
    bg_xy = xy[target_idx]
    nt = target_idx.size

    child, parent = _pairs(times, xy, is_target, max_lag, max_dist)
    # group pairs by parent type so each type is a contiguous slice
    order = np.argsort(types[parent], kind="stable")
    child, parent = child[order], parent[order]
    ptype = types[parent]
    bounds = np.searchsorted(ptype, np.arange(n_types + 1))
    dt = times[child] - times[parent]
    d2 = ((xy[child] - xy[parent]) ** 2).sum(axis=1)
    crow = tpos[child]

    # background kernel between targets (sparse, includes self)
    kd = cKDTree(bg_xy)
    bgp = kd.query_pairs(5.0 * bg_bandwidth, output_type="ndarray")
    bi = np.concatenate([bgp[:, 0], bgp[:, 1], np.arange(nt)]) if bgp.size else np.arange(nt)
    bj = np.concatenate([bgp[:, 1], bgp[:, 0], np.arange(nt)]) if bgp.size else np.arange(nt)
    bd2 = ((bg_xy[bi] - bg_xy[bj]) ** 2).sum(axis=1)
    kval = np.exp(-0.5 * bd2 / bg_bandwidth ** 2) / (2 * np.pi * bg_bandwidth ** 2)
    K = sp.csr_matrix((kval, (bi, bj)), shape=(nt, nt))
    span = t_end - t_start

    theta = np.full(n_types, float(init_theta))
    omega = np.full(n_types, float(init_omega))
    sigma = np.full(n_types, float(init_sigma))
    p_bg = np.ones(nt)
    p_pair = np.zeros(child.size)
    tail_time = t_end - times

    delta = np.inf
    it = 0
    tails = [tail_time[types == k] for k in range(n_types)]
    for it in range(1, max_iter + 1):
        # E-step
        mu = (K @ p_bg) / span
        s2 = sigma ** 2
        with np.errstate(divide="ignore"):
            logc = np.log(theta * omega / (2 * np.pi * s2))
        trig = np.exp(logc[ptype] - omega[ptype] * dt - 0.5 * d2 / s2[ptype])
        total = mu + np.bincount(crow, weights=trig, minlength=nt)
        new_bg = mu / total
        new_pair = trig / total[crow]
        delta = max(float(np.max(np.abs(new_bg - p_bg), initial=0.0)),
                    float(np.max(np.abs(new_pair - p_pair), initial=0.0)))
        p_bg, p_pair = new_bg, new_pair
        # M-step
        for k in range(n_types):
            sl = slice(bounds[k], bounds[k + 1])
            w = p_pair[sl]
            mass = w.sum()
            if mass <= 1e-12:
                theta[k] = 0.0
                continue
            omega[k] = mass / max(float(w @ dt[sl]), 1e-12)
            sigma[k] = max(np.sqrt(float(w @ d2[sl]) / (2.0 * mass)), min_sigma)
            exposure = np.sum(1.0 - np.exp(-omega[k] * tails[k]))
            theta[k] = min(mass / exposure, MAX_BRANCHING) if exposure > 0 else 0.0
        if delta < tol:
            break
    else:
        raise ConvergenceError(f"SEPP EM hit the iteration cap; last delta {delta:.3g}",
                               None, max_iter)

    logger.debug("SEPP EM converged in %d iterations (theta=%s)", it, theta)
    return SEPPFit(theta.copy(), omega.copy(), sigma.copy(), bg_xy, p_bg, bg_bandwidth,
                   t_start, t_end, it, delta, (times, xy, types))


def simulate_hawkes(mu_rate: float, theta: float, omega: float, sigma: float, t_end: float,
                    region=(0.0, 1.0, 0.0, 1.0), seed: int = 0):
    """Branching-structure simulation of a homogeneous-background spatial Hawkes process.

    Background points are uniform on ``region``; offspring are displaced by
    Gaussian noise (and may fall outside the region).  Returns (t, x, y)
    sorted by time, keeping only events before ``t_end``.
    """
    rng = np.random.default_rng(seed)
    n0 = rng.poisson(mu_rate * t_end)
    t = rng.uniform(0, t_end, n0)
    x = rng.uniform(region[0], region[1], n0)
    y = rng.uniform(region[2], region[3], n0)
    gen_t, gen_x, gen_y = t, x, y
    all_t, all_x, all_y = [t], [x], [y]
    while gen_t.size:
        k = rng.poisson(theta, gen_t.size)
        if k.sum() == 0:
            break
        pt = np.repeat(gen_t, k) + rng.exponential(1.0 / omega, k.sum())
        px = np.repeat(gen_x, k) + rng.normal(0, sigma, k.sum())
        py = np.repeat(gen_y, k) + rng.normal(0, sigma, k.sum())
        keep = pt < t_end
        gen_t, gen_x, gen_y = pt[keep], px[keep], py[keep]
        all_t.append(gen_t)
        all_x.append(gen_x)
        all_y.append(gen_y)
    t = np.concatenate(all_t)
    order = np.argsort(t, kind="stable")
    return t[order], np.concatenate(all_x)[order], np.concatenate(all_y)[order]
