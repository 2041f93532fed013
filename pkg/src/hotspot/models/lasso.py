"""L1-regularised logistic regression by cyclic coordinate descent.

Objective (intercept unpenalised)::

    mean_i [log(1 + exp(eta_i)) - y_i * eta_i] + lam * sum_j |w_j|

Each outer step forms the usual IRLS quadratic approximation; the inner loop
runs coordinate descent with soft-thresholding on it.  A step-halving line
search keeps the objective monotone.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

INTERCEPT_CLAMP = 15.0


class ConvergenceError(RuntimeError):
    def __init__(self, message, objective=None, iterations=None):
        self.objective = objective
        self.iterations = iterations
        super().__init__(f"{message} (objective={objective}, iterations={iterations})")


@dataclass(frozen=True)
class LogisticFit:
    intercept: float
    coef: np.ndarray
    lam: float
    iterations: int
    objective: float

    def decision(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.coef + self.intercept

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.decision(X))

    @property
    def n_nonzero(self) -> int:
        return int(np.count_nonzero(self.coef))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _objective(b, w, Xs, y, lam):
    eta = b + Xs @ w
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta) + lam * np.abs(w).sum())


def _standardize(X):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (X - mu) / sd, mu, sd


def soft_threshold(z, t):
    return np.sign(z) * max(abs(z) - t, 0.0)


def _fit_standardized(Xs, y, lam, b, w, tol, max_outer, max_inner):
    n, p = Xs.shape
    obj = _objective(b, w, Xs, y, lam)
    for it in range(1, max_outer + 1):
        eta = b + Xs @ w
        prob = _sigmoid(eta)
        wt = np.clip(prob * (1.0 - prob), 1e-5, None)
        z = eta + (y - prob) / wt
        # coordinate descent on the weighted least-squares surrogate
        nb, nw = b, w.copy()
        resid = z - nb - Xs @ nw
        xw2 = (wt[:, None] * Xs ** 2).sum(axis=0) / n
        sw = wt.sum()
        for _ in range(max_inner):
            max_delta = 0.0
            db = float(wt @ resid) / sw
            nb += db
            resid -= db
            max_delta = abs(db)
            for j in range(p):
                if xw2[j] <= 0:
                    continue
                xj = Xs[:, j]
                old = nw[j]
                rho = float((wt * xj) @ resid) / n + xw2[j] * old
                new = soft_threshold(rho, lam) / xw2[j]
                if new != old:
                    resid -= xj * (new - old)
                    nw[j] = new
                    max_delta = max(max_delta, abs(new - old))
            if max_delta < tol * 0.1:
                break
        # step halving so the true objective never increases
        step, new_obj = 1.0, np.inf
        for _ in range(30):
            cb, cw = b + step * (nb - b), w + step * (nw - w)
            new_obj = _objective(cb, cw, Xs, y, lam)
            if new_obj <= obj + 1e-12:
                break
            step *= 0.5
        else:
            cb, cw, new_obj = b, w, obj
        change = max(abs(cb - b), float(np.max(np.abs(cw - w), initial=0.0)))
        b, w = cb, cw
        done = change < tol or obj - new_obj < tol * 1e-3 * max(1.0, abs(obj))
        obj = new_obj
        if done:
            return b, w, it, obj
    raise ConvergenceError("L1 logistic regression did not converge", obj, max_outer)


def fit_l1_logistic(X, y, lam: float, standardize: bool = True, tol: float = 1e-8,
                    max_outer: int = 200, max_inner: int = 1000,
                    warm_start: LogisticFit | None = None) -> LogisticFit:
    """Minimise mean logistic loss plus ``lam`` times the L1 norm of the slopes.

    With ``standardize`` the penalty applies to coefficients of unit-variance
    columns; returned coefficients are always on the original scale.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if lam < 0:
        raise ValueError("penalty must be nonnegative")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    n, p = X.shape
    ybar = y.mean() if n else 0.0
    if n == 0 or ybar in (0.0, 1.0):
        warnings.warn("labels are all identical; fitting an intercept-only model", stacklevel=2)
        b = INTERCEPT_CLAMP if ybar == 1.0 else -INTERCEPT_CLAMP
        return LogisticFit(b, np.zeros(p), lam, 0, float("nan"))
    if standardize:
        Xs, mu, sd = _standardize(X)
    else:
        Xs, mu, sd = X, np.zeros(p), np.ones(p)
    if warm_start is not None:
        w0 = warm_start.coef * sd
        b0 = warm_start.intercept + float(warm_start.coef @ mu)
    else:
        w0 = np.zeros(p)
        b0 = float(np.log(ybar / (1.0 - ybar)))
    b, w, it, obj = _fit_standardized(Xs, y, lam, b0, w0, tol, max_outer, max_inner)
    coef = w / sd
    intercept = b - float(coef @ mu)
    if abs(intercept) > INTERCEPT_CLAMP:
        intercept = float(np.clip(intercept, -INTERCEPT_CLAMP, INTERCEPT_CLAMP))
    return LogisticFit(float(intercept), coef, lam, it, obj)


def lambda_max(X, y, standardize: bool = True) -> float:
    """Smallest penalty at which every slope is exactly zero."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    Xs = _standardize(X)[0] if standardize else X - X.mean(axis=0)
    return float(np.max(np.abs(Xs.T @ (y - y.mean())) / len(y), initial=0.0))


def lambda_grid(X, y, n: int = 20, ratio: float = 1e-3, standardize: bool = True) -> np.ndarray:
    top = lambda_max(X, y, standardize)
    if top <= 0:
        return np.zeros(1)
    return top * np.logspace(0, np.log10(ratio), n)


def l1_logistic_path(X, y, lams, **kw) -> list[LogisticFit]:
    """Fits along a decreasing penalty sequence, warm-starting each from the last."""
    fits, prev = [], None
    for lam in sorted(lams, reverse=True):
        prev = fit_l1_logistic(X, y, float(lam), warm_start=prev, **kw)
        fits.append(prev)
    return fits


def cv_l1_logistic(X, y, lams=None, folds: int = 5, seed: int = 0, **kw):
    """K-fold cross-validated penalty (minimum mean held-out deviance).

    Returns ``(best_lambda, mean_deviance_per_lambda, lambdas)``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if lams is None:
        lams = lambda_grid(X, y)
    lams = np.sort(np.asarray(lams, dtype=float))[::-1]
    rng = np.random.default_rng(seed)
    fold_of = rng.permutation(len(y)) % folds
    dev = np.zeros((folds, len(lams)))
    for k in range(folds):
        tr, te = fold_of != k, fold_of == k
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            path = l1_logistic_path(X[tr], y[tr], lams, **kw)
        for j, fit in enumerate(path):
            eta = fit.decision(X[te])
            dev[k, j] = float(np.mean(np.logaddexp(0.0, eta) - y[te] * eta))
    mean_dev = dev.mean(axis=0)
    return float(lams[int(np.argmin(mean_dev))]), mean_dev, lams
