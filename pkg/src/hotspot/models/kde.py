"""Gaussian kernel density surfaces evaluated at cell centres."""

from __future__ import annotations

import numpy as np

from ..geogrid import GridSpec


def gaussian_kde_at(targets: np.ndarray, points: np.ndarray, bandwidth: float,
                    weights: np.ndarray | None = None, chunk: int = 4096) -> np.ndarray:
    """Sum of isotropic 2-D Gaussian kernels (each integrating to its weight)."""
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros(len(targets))
    if points.size == 0:
        return out
    if weights is None:
        weights = np.ones(len(points))
    norm = 1.0 / (2.0 * np.pi * bandwidth ** 2)
    for s in range(0, len(points), chunk):
        p = points[s:s + chunk]
        d2 = ((targets[:, None, :] - p[None, :, :]) ** 2).sum(axis=2)
        out += np.exp(-0.5 * d2 / bandwidth ** 2) @ weights[s:s + chunk]
    return out * norm


def kde_surface(points, bandwidth: float, grid: GridSpec, weights=None) -> np.ndarray:
    """Density of events (per square foot) at every active cell centre.

    Multiplying by the cell area and summing over a grid that covers the
    events' kernels recovers the (weighted) event count.
    """
    return gaussian_kde_at(grid.centers(), points, bandwidth, weights)
