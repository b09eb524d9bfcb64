"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise |a - n| / max(|a| + |n|, floor)."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)))


def numeric_gradient(loss_fn, param: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """d loss / d param by central differences, perturbing ``param`` in place."""
    grad = np.zeros_like(param)
    it = np.nditer(param, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = param[i]
        param[i] = orig + eps
        up = loss_fn()
        param[i] = orig - eps
        down = loss_fn()
        param[i] = orig
        grad[i] = (up - down) / (2 * eps)
    return grad


def check_network(net, X, weights: np.ndarray, eps: float = 1e-5) -> dict:
    """Compare backprop against finite differences for loss = sum(out * weights).

    Runs in training phase (batch statistics for BatchNorm) with dropout
    disabled by the caller. Returns ``{(layer, name): relative error}``.
    """
    def loss():
        return float((net.forward(X, train=True) * weights).sum())

    out = net.forward(X, train=True)
    net.backward(weights * np.ones_like(out))
    analytic = {k: g.copy() for k, g in net.gradients().items()}
    errors = {}
    for key, p in net.parameters():
        errors[key] = relative_error(analytic[key], numeric_gradient(loss, p, eps))
    return errors
