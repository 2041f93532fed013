"""Independent reference computations the package is checked against."""

import numpy as np
from scipy.optimize import minimize

from hotspot.models.nn import flatten, unflatten


def fd_gradient(loss, params, h=1e-5):
    """Central finite-difference gradient of ``loss(params)`` over every entry."""
    vec, layout = flatten(params)
    g = np.zeros_like(vec)
    for i in range(vec.size):
        up, dn = vec.copy(), vec.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (loss(unflatten(up, layout)) - loss(unflatten(dn, layout))) / (2 * h)
    return g


def grad_rel_error(analytic: dict, numeric: np.ndarray) -> float:
    a = flatten(analytic)[0]
    return float(np.linalg.norm(a - numeric) / max(np.linalg.norm(a), np.linalg.norm(numeric), 1e-12))


def normal_equations(X, y):
    """OLS coefficients from (X'X) b = X'y."""
    return np.linalg.solve(X.T @ X, X.T @ y)


def riemann_pauc(area, capture, A, n=1_000_000):
    """Midpoint-rule area under the piecewise-linear curve on [0, A]."""
    x = (np.arange(n) + 0.5) * (A / n)
    return float(np.interp(x, area, capture).sum() * (A / n))


def dense_logistic(X, y):
    """Unpenalised logistic regression by L-BFGS to tight tolerance; (intercept, coef)."""
    Z = np.column_stack([np.ones(len(y)), X])

    def f(b):
        eta = Z @ b
        return np.mean(np.logaddexp(0, eta) - y * eta), Z.T @ (1 / (1 + np.exp(-eta)) - y) / len(y)
    res = minimize(f, np.zeros(Z.shape[1]), jac=True, method="L-BFGS-B",
                   options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 10_000})
    return res.x[0], res.x[1:]


def brute_entropy(counts):
    p = np.asarray(counts, float)
    p = p[p > 0] / p.sum()
    return float(-(p * np.log2(p)).sum())
