"""Small numpy networks: a one-hidden-layer MLP and a 'same'-padded CNN.

Both use the loss ``0.5 * mean((prediction - target)**2)`` and are trained by
full-batch gradient descent (heavy-ball momentum) with early stopping on a
held-out validation loss.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__name__)

ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "identity": (lambda z: z, lambda a: np.ones_like(a)),
}


class NumericError(FloatingPointError):
    pass


def _finite(a, what):
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {what}")
    return a


# ---------------------------------------------------------------------------
# MLP


def init_mlp(n_in: int, n_hidden: int, rng: np.random.Generator) -> dict:
    return {
        "W1": rng.normal(0.0, 1.0 / np.sqrt(max(n_in, 1)), size=(n_in, n_hidden)),
        "b1": np.zeros(n_hidden),
        "W2": rng.normal(0.0, 1.0 / np.sqrt(n_hidden), size=n_hidden),
        "b2": np.zeros(()),
    }


def mlp_forward(weights: dict, X: np.ndarray, activation: str = "tanh",
                return_hidden: bool = False):
    act = ACTIVATIONS[activation][0]
    H = _finite(act(X @ weights["W1"] + weights["b1"]), "hidden activations")
    out = H @ weights["W2"] + weights["b2"]
    return (out, H) if return_hidden else out


def mlp_backprop(weights: dict, X: np.ndarray, y: np.ndarray, activation: str = "tanh",
                 ) -> tuple[float, dict]:
    """Loss and exact gradient of ``0.5 * mean((f(X) - y)**2)``."""
    out, H = mlp_forward(weights, X, activation, return_hidden=True)
    n = X.shape[0]
    resid = out - y
    loss = 0.5 * float(np.mean(resid ** 2))
    dout = resid / n
    dH = np.outer(dout, weights["W2"]) * ACTIVATIONS[activation][1](H)
    grads = {
        "W1": X.T @ dH,
        "b1": dH.sum(axis=0),
        "W2": H.T @ dout,
        "b2": np.asarray(dout.sum()),
    }
    return loss, grads


# ---------------------------------------------------------------------------
# CNN


def init_cnn(n_in: int, channels: int, kernel: int, depth: int,
             rng: np.random.Generator) -> dict:
    params, cin = {}, n_in
    for i in range(depth):
        fan_in = kernel * kernel * cin
        params[f"conv{i}_W"] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), (kernel, kernel, cin, channels))
        params[f"conv{i}_b"] = np.zeros(channels)
        cin = channels
    params["head_W"] = rng.normal(0.0, 1.0 / np.sqrt(cin), cin)
    params["head_b"] = np.zeros(())
    return params


def _depth(params) -> int:
    return sum(1 for k in params if k.endswith("_W") and k.startswith("conv"))


def conv2d_same(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """x: (S, H, W, Cin), W: (k, k, Cin, Cout) -> (S, H, W, Cout), zero padded."""
    k = W.shape[0]
    if k % 2 == 0:
        raise ValueError("kernel size must be odd")
    if k > x.shape[1] or k > x.shape[2]:
        raise ValueError(f"kernel {k}x{k} larger than raster {x.shape[1]}x{x.shape[2]}")
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    patches = sliding_window_view(xp, (k, k), axis=(1, 2))  # (S, H, W, Cin, k, k)
    return np.einsum("shwcij,ijco->shwo", patches, W, optimize=True) + b


def _conv_backward(x, W, dz):
    k = W.shape[0]
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    patches = sliding_window_view(xp, (k, k), axis=(1, 2))
    dW = np.einsum("shwcij,shwo->ijco", patches, dz, optimize=True)
    db = dz.sum(axis=(0, 1, 2))
    dxp = np.zeros_like(xp)
    H, Wd = x.shape[1], x.shape[2]
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + H, j:j + Wd, :] += dz @ W[i, j].T
    return dxp[:, p:p + H, p:p + Wd, :], dW, db


def cnn_forward(params: dict, x: np.ndarray, activation: str = "tanh",
                return_cache: bool = False):
    """Per-cell prediction raster (S, H, W) from input rasters (S, H, W, C)."""
    act = ACTIVATIONS[activation][0]
    cache, a = [], x
    for i in range(_depth(params)):
        cache.append(a)
        a = _finite(act(conv2d_same(a, params[f"conv{i}_W"], params[f"conv{i}_b"])),
                    "conv activations")
    cache.append(a)
    out = a @ params["head_W"] + params["head_b"]
    return (out, cache) if return_cache else out


def cnn_backprop(params: dict, x: np.ndarray, y: np.ndarray, mask: np.ndarray | None = None,
                 activation: str = "tanh") -> tuple[float, dict]:
    """Loss ``0.5 * mean over (sample, masked cell)`` of squared error, and its gradient."""
    out, cache = cnn_forward(params, x, activation, return_cache=True)
    if mask is None:
        mask = np.ones(out.shape[1:], dtype=bool)
    m = mask[None, :, :].astype(float)
    denom = out.shape[0] * float(mask.sum())
    resid = (out - y) * m
    loss = 0.5 * float(np.sum(resid ** 2)) / denom
    dout = resid / denom
    grads = {"head_W": np.einsum("shwc,shw->c", cache[-1], dout), "head_b": np.asarray(dout.sum())}
    da = dout[..., None] * params["head_W"]
    deriv = ACTIVATIONS[activation][1]
    for i in reversed(range(_depth(params))):
        dz = da * deriv(cache[i + 1])
        da, grads[f"conv{i}_W"], grads[f"conv{i}_b"] = _conv_backward(cache[i], params[f"conv{i}_W"], dz)
    return loss, grads


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    params: dict
    train_loss: float
    val_loss: float | None
    epochs: int
    best_epoch: int


def gradient_descent(params: dict, loss_grad, val_loss=None, lr: float = 0.05,
                     momentum: float = 0.9, max_epochs: int = 500, patience: int = 20,
                     min_delta: float = 1e-7) -> TrainResult:
    """Full-batch gradient descent with a fixed step.

    With ``val_loss`` given, stops once validation loss has not improved by
    ``min_delta`` for ``patience`` epochs and returns the best parameters.
    """
    params = {k: np.array(v, dtype=float) for k, v in params.items()}
    vel = {k: np.zeros_like(v) for k, v in params.items()}
    best = (np.inf, {k: v.copy() for k, v in params.items()}, 0)
    stale = 0
    loss = np.inf
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        loss, grads = loss_grad(params)
        if not np.isfinite(loss):
            raise NumericError(f"training loss diverged at epoch {epoch}")
        score = val_loss(params) if val_loss is not None else loss
        if score < best[0] - min_delta:
            best = (score, {k: v.copy() for k, v in params.items()}, epoch)
            stale = 0
        else:
            stale += 1
            if val_loss is not None and stale >= patience:
                break
        for k in params:
            vel[k] = momentum * vel[k] - lr * grads[k]
            params[k] += vel[k]
    final = best[1]
    train_loss, _ = loss_grad(final)
    return TrainResult(final, float(train_loss),
                       float(best[0]) if val_loss is not None else None, epoch, best[2])


def train_mlp(X, y, n_hidden=10, seed=0, lr=0.05, momentum=0.9, max_epochs=500,
              patience=20, X_val=None, y_val=None) -> TrainResult:
    rng = np.random.default_rng(seed)
    params = init_mlp(X.shape[1], n_hidden, rng)
    val = None
    if X_val is not None and len(X_val):
        def val(p):
            return 0.5 * float(np.mean((mlp_forward(p, X_val) - y_val) ** 2))
    return gradient_descent(params, lambda p: mlp_backprop(p, X, y), val, lr, momentum,
                            max_epochs, patience)


def train_cnn(x, y, mask, channels=8, kernel=3, depth=2, seed=0, lr=0.05, momentum=0.9,
              max_epochs=300, patience=20, x_val=None, y_val=None) -> TrainResult:
    rng = np.random.default_rng(seed)
    params = init_cnn(x.shape[-1], channels, kernel, depth, rng)
    val = None
    if x_val is not None and len(x_val):
        m = mask[None].astype(float)

        def val(p):
            r = (cnn_forward(p, x_val) - y_val) * m
            return 0.5 * float(np.sum(r ** 2)) / (len(x_val) * float(mask.sum()))
    return gradient_descent(params, lambda p: cnn_backprop(p, x, y, mask), val, lr, momentum,
                            max_epochs, patience)


def flatten(params: dict) -> tuple[np.ndarray, list]:
    keys = sorted(params)
    return np.concatenate([np.ravel(params[k]) for k in keys]), [(k, np.shape(params[k])) for k in keys]


def unflatten(vec: np.ndarray, layout: list) -> dict:
    out, i = {}, 0
    for k, shape in layout:
        size = int(np.prod(shape)) if shape else 1
        out[k] = vec[i:i + size].reshape(shape)
        i += size
    return out
