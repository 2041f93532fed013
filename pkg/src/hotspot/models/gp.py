"""Exact Gaussian process regression with a product squared-exponential kernel.

The kernel is ``s2 * prod_d exp(-0.5 (z_d - z'_d)^2 / l_d^2)``; the mean is
linear in a separate block of covariates whose coefficients come from least
squares before the GP is conditioned on the residuals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

JITTER = 1e-10


def product_se_kernel(A, B, lengthscales, signal_var: float = 1.0) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float)) / lengthscales
    B = np.atleast_2d(np.asarray(B, dtype=float)) / lengthscales
    d2 = (A ** 2).sum(1)[:, None] + (B ** 2).sum(1)[None, :] - 2.0 * A @ B.T
    return signal_var * np.exp(-0.5 * np.clip(d2, 0.0, None))


@dataclass(frozen=True)
class GPFit:
    Z: np.ndarray              # kernel inputs of conditioning rows
    alpha: np.ndarray          # (K + noise I)^-1 residuals
    beta: np.ndarray           # mean-function coefficients (intercept first)
    lengthscales: np.ndarray
    signal_var: float
    noise_var: float
    log_marginal: float

    def mean(self, H) -> np.ndarray:
        H = np.atleast_2d(np.asarray(H, dtype=float))
        return self.beta[0] + H @ self.beta[1:]

    def predict(self, Z, H=None) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if H is None:
            H = np.zeros((len(Z), len(self.beta) - 1))
        k = product_se_kernel(Z, self.Z, self.lengthscales, self.signal_var)
        return self.mean(H) + k @ self.alpha


def fit_gp(Z, y, H=None, lengthscales=1.0, signal_var: float | None = None,
           noise_var: float = 0.0, H_mean=None, y_mean=None, beta=None) -> GPFit:
    """Condition a GP on (Z, y).

    ``H``/``y`` give the rows used for the conditioning; ``H_mean``/``y_mean``
    (defaulting to the same rows) give the rows for the linear mean fit, so
    the mean can use far more data than the exact GP step; a precomputed
    ``beta`` skips that fit entirely.  With
    ``noise_var=0`` a tiny jitter keeps the Cholesky factor stable and the
    posterior mean interpolates the training targets.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    y = np.asarray(y, dtype=float)
    n = len(y)
    H = np.zeros((n, 0)) if H is None else np.atleast_2d(np.asarray(H, dtype=float))
    if beta is None:
        if H_mean is None:
            H_mean, y_mean = H, y
        Hm = np.column_stack([np.ones(len(y_mean)), H_mean])
        beta = np.linalg.lstsq(Hm, np.asarray(y_mean, dtype=float), rcond=None)[0]
    beta = np.asarray(beta, dtype=float)
    resid = y - (beta[0] + H @ beta[1:])
    ls = np.broadcast_to(np.asarray(lengthscales, dtype=float), (Z.shape[1],)).copy()
    if np.any(ls <= 0):
        raise ValueError("length-scales must be positive")
    if signal_var is None:
        signal_var = max(float(np.var(resid)), 1e-6)
    K = product_se_kernel(Z, Z, ls, signal_var)
    K[np.diag_indices_from(K)] += noise_var + JITTER * signal_var
    cf = cho_factor(K, lower=True)
    alpha = cho_solve(cf, resid)
    logdet = 2.0 * np.log(np.diag(cf[0])).sum()
    lml = -0.5 * float(resid @ alpha) - 0.5 * logdet - 0.5 * n * np.log(2 * np.pi)
    return GPFit(Z, alpha, beta, ls, float(signal_var), float(noise_var), float(lml))
