"""Layers with explicit forward/backward passes (batch-first, float64)."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import NoCachedForward, NonFiniteActivation, ShapeMismatch


def glorot(rng, fan_in, fan_out, shape):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, shape)


def orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))[None, :]


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Layer:
    kind = "Layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, train: bool = False, rng=None):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise NoCachedForward(f"{self.kind}: backward called before forward")
        return self._cache

    def state(self) -> dict:
        return {}


class Dense(Layer):
    kind = "Dense"

    def __init__(self, n_in, n_out, rng):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.params = {"W": glorot(rng, n_in, n_out, (n_in, n_out)), "b": np.zeros(n_out)}

    def forward(self, x, train=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeMismatch(f"Dense expects (N, {self.n_in}), got {x.shape}")
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dy):
        x = self._cached()
        self.grads = {"W": x.T @ dy, "b": dy.sum(axis=0)}
        return dy @ self.params["W"].T


class Conv2D(Layer):
    """Cross-correlation with zero padding and stride."""

    kind = "Conv2D"

    def __init__(self, in_ch, out_ch, kernel, stride, pad, rng):
        super().__init__()
        self.in_ch, self.out_ch, self.k, self.stride, self.pad = in_ch, out_ch, kernel, stride, pad
        fan_in, fan_out = in_ch * kernel * kernel, out_ch * kernel * kernel
        self.params = {
            "W": glorot(rng, fan_in, fan_out, (out_ch, in_ch, kernel, kernel)),
            "b": np.zeros(out_ch),
        }

    def forward(self, x, train=False, rng=None):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeMismatch(f"Conv2D expects (N, {self.in_ch}, H, W), got {x.shape}")
        p, s, k = self.pad, self.stride, self.k
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        if xp.shape[2] < k or xp.shape[3] < k:
            raise ShapeMismatch(f"input {x.shape} too small for kernel {k}")
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        self._cache = (x.shape, xp.shape, win)
        return np.einsum("nchwij,ocij->nohw", win, self.params["W"], optimize=True) + self.params["b"][None, :, None, None]

    def backward(self, dy):
        x_shape, xp_shape, win = self._cached()
        W = self.params["W"]
        s, k, p = self.stride, self.k, self.pad
        self.grads = {
            "W": np.einsum("nchwij,nohw->ocij", win, dy, optimize=True),
            "b": dy.sum(axis=(0, 2, 3)),
        }
        dxp = np.zeros(xp_shape)
        Ho, Wo = dy.shape[2], dy.shape[3]
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * (Ho - 1) + 1:s, j:j + s * (Wo - 1) + 1:s] += np.einsum(
                    "nohw,oc->nchw", dy, W[:, :, i, j], optimize=True)
        return dxp[:, :, p:p + x_shape[2], p:p + x_shape[3]]


class BatchNorm(Layer):
    """Per-feature (2-D input) or per-channel (4-D input) normalisation."""

    kind = "BatchNorm"
    eps = 1e-5

    def __init__(self, dim, momentum: float = 0.9):
        super().__init__()
        self.dim = dim
        self.momentum = momentum
        self.params = {"gamma": np.ones(dim), "beta": np.zeros(dim)}
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def _axes(self, x):
        if x.ndim == 2:
            return (0,), (1, -1)
        return (0, 2, 3), (1, -1, 1, 1)

    def forward(self, x, train=False, rng=None):
        if x.shape[1] != self.dim:
            raise ShapeMismatch(f"BatchNorm expects {self.dim} channels, got {x.shape}")
        axes, bshape = self._axes(x)
        if train:
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mu
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            mu, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu.reshape(bshape)) * inv.reshape(bshape)
        self._cache = (xhat, inv, axes, bshape, train)
        return xhat * self.params["gamma"].reshape(bshape) + self.params["beta"].reshape(bshape)

    def backward(self, dy):
        xhat, inv, axes, bshape, train = self._cached()
        self.grads = {"gamma": (dy * xhat).sum(axis=axes), "beta": dy.sum(axis=axes)}
        dxhat = dy * self.params["gamma"].reshape(bshape)
        if not train:
            return dxhat * inv.reshape(bshape)
        m = dy.size / self.dim
        return (inv.reshape(bshape) / m) * (
            m * dxhat
            - dxhat.sum(axis=axes).reshape(bshape)
            - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape)
        )

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class Dropout(Layer):
    kind = "Dropout"

    def __init__(self, rate):
        super().__init__()
        self.rate = rate

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._cache = np.ones_like(x)
            return x
        keep = rng.random(x.shape) >= self.rate
        mask = keep / (1.0 - self.rate)
        self._cache = mask
        return x * mask

    def backward(self, dy):
        return dy * self._cached()


class Activation(Layer):
    kind = "Activation"

    def __init__(self, fn):
        super().__init__()
        if fn not in ("relu", "tanh", "softmax"):
            raise ValueError(f"unknown activation {fn!r}")
        self.fn = fn

    def forward(self, x, train=False, rng=None):
        if self.fn == "relu":
            y = np.maximum(x, 0.0)
        elif self.fn == "tanh":
            y = np.tanh(x)
        else:
            z = x - x.max(axis=1, keepdims=True)
            e = np.exp(z)
            y = e / e.sum(axis=1, keepdims=True)
        self._cache = (x, y)
        return y

    def backward(self, dy):
        x, y = self._cached()
        if self.fn == "relu":
            return dy * (x > 0)
        if self.fn == "tanh":
            return dy * (1.0 - y * y)
        return y * (dy - (dy * y).sum(axis=1, keepdims=True))


class Flatten(Layer):
    kind = "Flatten"

    def forward(self, x, train=False, rng=None):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._cached())


class RNNStack(Layer):
    """Stacked tanh recurrent layers; emits the top layer's last hidden state."""

    kind = "RNNCellStack"

    def __init__(self, n_layers, hidden, n_in, rng):
        super().__init__()
        self.n_layers, self.hidden, self.n_in = n_layers, hidden, n_in
        for l in range(n_layers):
            d = n_in if l == 0 else hidden
            self.params[f"Wx{l}"] = glorot(rng, d, hidden, (d, hidden))
            self.params[f"Wh{l}"] = orthogonal(rng, hidden)
            self.params[f"b{l}"] = np.zeros(hidden)

    def forward(self, x, train=False, rng=None):
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise ShapeMismatch(f"RNN expects (N, T, {self.n_in}), got {x.shape}")
        N, T, _ = x.shape
        seq = x
        cache = []
        for l in range(self.n_layers):
            Wx, Wh, b = self.params[f"Wx{l}"], self.params[f"Wh{l}"], self.params[f"b{l}"]
            hs = np.zeros((N, T + 1, self.hidden))
            for t in range(T):
                hs[:, t + 1] = np.tanh(seq[:, t] @ Wx + hs[:, t] @ Wh + b)
            cache.append((seq, hs))
            seq = hs[:, 1:]
        self._cache = cache
        return seq[:, -1]

    def backward(self, dy):
        cache = self._cached()
        N, T = cache[0][0].shape[:2]
        d_seq = np.zeros((N, T, self.hidden))
        d_seq[:, -1] = dy
        self.grads = {}
        for l in reversed(range(self.n_layers)):
            seq, hs = cache[l]
            Wx, Wh = self.params[f"Wx{l}"], self.params[f"Wh{l}"]
            dWx, dWh, db = np.zeros_like(Wx), np.zeros_like(Wh), np.zeros(self.hidden)
            dx = np.zeros_like(seq)
            dh_next = np.zeros((N, self.hidden))
            for t in reversed(range(T)):
                dh = d_seq[:, t] + dh_next
                da = dh * (1.0 - hs[:, t + 1] ** 2)
                dWx += seq[:, t].T @ da
                dWh += hs[:, t].T @ da
                db += da.sum(axis=0)
                dx[:, t] = da @ Wx.T
                dh_next = da @ Wh.T
            self.grads.update({f"Wx{l}": dWx, f"Wh{l}": dWh, f"b{l}": db})
            d_seq = dx
        return d_seq


class LSTMStack(Layer):
    """Stacked LSTM layers (gates i, f, o sigmoid; candidate tanh).

    Forget-gate biases start at +1. Emits the top layer's last hidden state.
    """

    kind = "LSTMStack"

    def __init__(self, n_layers, hidden, n_in, rng):
        super().__init__()
        self.n_layers, self.hidden, self.n_in = n_layers, hidden, n_in
        H = hidden
        for l in range(n_layers):
            d = n_in if l == 0 else H
            self.params[f"Wx{l}"] = glorot(rng, d, 4 * H, (d, 4 * H))
            self.params[f"Wh{l}"] = np.hstack([orthogonal(rng, H) for _ in range(4)])
            b = np.zeros(4 * H)
            b[H:2 * H] = 1.0
            self.params[f"b{l}"] = b

    def forward(self, x, train=False, rng=None):
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise ShapeMismatch(f"LSTM expects (N, T, {self.n_in}), got {x.shape}")
        N, T, _ = x.shape
        H = self.hidden
        seq = x
        cache = []
        for l in range(self.n_layers):
            Wx, Wh, b = self.params[f"Wx{l}"], self.params[f"Wh{l}"], self.params[f"b{l}"]
            hs = np.zeros((N, T + 1, H))
            cs = np.zeros((N, T + 1, H))
            gates = np.zeros((N, T, 4 * H))
            for t in range(T):
                a = seq[:, t] @ Wx + hs[:, t] @ Wh + b
                i = sigmoid(a[:, :H])
                f = sigmoid(a[:, H:2 * H])
                o = sigmoid(a[:, 2 * H:3 * H])
                g = np.tanh(a[:, 3 * H:])
                cs[:, t + 1] = f * cs[:, t] + i * g
                hs[:, t + 1] = o * np.tanh(cs[:, t + 1])
                gates[:, t] = np.hstack([i, f, o, g])
            cache.append((seq, hs, cs, gates))
            seq = hs[:, 1:]
        self._cache = cache
        return seq[:, -1]

    def backward(self, dy):
        cache = self._cached()
        N, T = cache[0][0].shape[:2]
        H = self.hidden
        d_seq = np.zeros((N, T, H))
        d_seq[:, -1] = dy
        self.grads = {}
        for l in reversed(range(self.n_layers)):
            seq, hs, cs, gates = cache[l]
            Wx, Wh = self.params[f"Wx{l}"], self.params[f"Wh{l}"]
            dWx, dWh, db = np.zeros_like(Wx), np.zeros_like(Wh), np.zeros(4 * H)
            dx = np.zeros_like(seq)
            dh_next = np.zeros((N, H))
            dc_next = np.zeros((N, H))
            for t in reversed(range(T)):
                i, f, o, g = (gates[:, t, k * H:(k + 1) * H] for k in range(4))
                tc = np.tanh(cs[:, t + 1])
                dh = d_seq[:, t] + dh_next
                dc = dc_next + dh * o * (1.0 - tc * tc)
                da = np.hstack([
                    dc * g * i * (1 - i),
                    dc * cs[:, t] * f * (1 - f),
                    dh * tc * o * (1 - o),
                    dc * i * (1 - g * g),
                ])
                dWx += seq[:, t].T @ da
                dWh += hs[:, t].T @ da
                db += da.sum(axis=0)
                dx[:, t] = da @ Wx.T
                dh_next = da @ Wh.T
                dc_next = dc * f
            self.grads.update({f"Wx{l}": dWx, f"Wh{l}": dWh, f"b{l}": db})
            d_seq = dx
        return d_seq


def check_finite(name: str, y: np.ndarray) -> np.ndarray:
    if not np.isfinite(y).all():
        raise NonFiniteActivation(f"non-finite activation after {name}")
    return y
