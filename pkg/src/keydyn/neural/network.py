"""Sequential networks, the four tabular-input architectures, and training."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import Divergence, InputTooShort, NonFiniteActivation
from .layers import (
    Activation,
    BatchNorm,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    LSTMStack,
    RNNStack,
    check_finite,
)

# ---------------------------------------------------------------------------
# reshaping tricks for tabular vectors


def square_side(n: int, strict: bool = False) -> int:
    s = math.isqrt(n)
    if strict and s * s == n and s > 1:
        s -= 1
    return s


def to_square_image(v, strict: bool = False) -> np.ndarray:
    """First s*s entries of ``v`` as a 1 x s x s image, s = floor(sqrt(len(v)))."""
    v = np.asarray(v, dtype=float)
    s = square_side(len(v), strict)
    return v[: s * s].reshape(1, s, s)


def is_composite(n: int) -> bool:
    if n < 4:
        return False
    return any(n % p == 0 for p in range(2, math.isqrt(n) + 1))


def sequence_shape(n: int, strict: bool = False) -> tuple[int, int]:
    """(A, B) with A*B the largest composite <= n (or < n if strict) and A the
    largest divisor of it not exceeding its square root."""
    c = n - 1 if strict else n
    if c < 4:
        raise InputTooShort(f"need at least {5 if strict else 4} features, got {n}")
    while not is_composite(c):
        c -= 1
    a = max(d for d in range(2, math.isqrt(c) + 1) if c % d == 0)
    return a, c // a


def to_sequence(v, strict: bool = False) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    a, b = sequence_shape(len(v), strict)
    return v[: a * b].reshape(a, b)


# ---------------------------------------------------------------------------
# network description


@dataclass(frozen=True)
class NetworkSpec:
    """Layer descriptors as ``(kind, kwargs)`` pairs plus an optional input reshape."""

    layers: tuple
    seed: int = 0
    input_dim: int = 0
    input_transform: str | None = None      # None | "square" | "sequence"
    strict_reshape: bool = False
    task: str = "classify"

    def to_dict(self) -> dict:
        return {
            "layers": [[k, dict(a)] for k, a in self.layers],
            "seed": self.seed,
            "input_dim": self.input_dim,
            "input_transform": self.input_transform,
            "strict_reshape": self.strict_reshape,
            "task": self.task,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(tuple((k, dict(a)) for k, a in d["layers"]), d["seed"], d["input_dim"],
                   d["input_transform"], d["strict_reshape"], d["task"])


def _make_layer(kind, args, rng):
    if kind == "Dense":
        return Dense(args["in"], args["out"], rng)
    if kind == "Conv2D":
        return Conv2D(args["in_ch"], args["out_ch"], args["kernel"], args.get("stride", 1),
                      args.get("pad", 0), rng)
    if kind == "BatchNorm":
        return BatchNorm(args["dim"])
    if kind == "Dropout":
        return Dropout(args["rate"])
    if kind == "Activation":
        return Activation(args["fn"])
    if kind == "Flatten":
        return Flatten()
    if kind == "RNNCellStack":
        return RNNStack(args["layers"], args["hidden"], args["in"], rng)
    if kind == "LSTMStack":
        return LSTMStack(args["layers"], args["hidden"], args["in"], rng)
    raise ValueError(f"unknown layer kind {kind!r}")


class Network:
    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        self.layers = [_make_layer(k, a, rng) for k, a in spec.layers]

    @property
    def softmax_head(self) -> bool:
        last = self.layers[-1]
        return isinstance(last, Activation) and last.fn == "softmax"

    def reshape_input(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.spec.input_transform == "square":
            return np.stack([to_square_image(r, self.spec.strict_reshape) for r in X])
        if self.spec.input_transform == "sequence":
            return np.stack([to_sequence(r, self.spec.strict_reshape) for r in X])
        return X

    def forward(self, X, train: bool = False, rng=None, upto: int | None = None):
        h = self.reshape_input(X)
        layers = self.layers if upto is None else self.layers[:upto]
        for layer in layers:
            h = check_finite(layer.kind, layer.forward(h, train, rng))
        return h

    def backward(self, grad, start: int | None = None):
        """Backpropagate ``grad`` (w.r.t. the output of layer ``start - 1``)."""
        layers = self.layers if start is None else self.layers[:start]
        for layer in reversed(layers):
            grad = layer.backward(grad)
        return grad

    def parameters(self):
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                yield (i, name), p

    def gradients(self) -> dict:
        return {(i, n): layer.grads[n] for i, layer in enumerate(self.layers) for n in layer.params}

    def n_parameters(self) -> int:
        return sum(p.size for _, p in self.parameters())

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            entry = {k: v.tolist() for k, v in layer.params.items()}
            entry.update({k: v.tolist() for k, v in layer.state().items()})
            layers.append(entry)
        return {"spec": self.spec.to_dict(), "parameters": layers}

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        net = cls(NetworkSpec.from_dict(d["spec"]))
        for layer, entry in zip(net.layers, d["parameters"]):
            for k in layer.params:
                layer.params[k] = np.array(entry[k], dtype=float)
            if isinstance(layer, BatchNorm):
                layer.running_mean = np.array(entry["running_mean"], dtype=float)
                layer.running_var = np.array(entry["running_var"], dtype=float)
        return net


# ---------------------------------------------------------------------------
# architectures

ARCHITECTURES = ("FC", "CNN", "RNN", "LSTM")


def build_architecture(kind: str, input_dim: int, n_out: int, task: str = "classify",
                       seed: int = 0, strict_reshape: bool = False, hidden: int = 64,
                       dropout: float = 0.3) -> NetworkSpec:
    """FC / CNN / RNN / LSTM layouts; ``n_out`` is the class count (1 for regression)."""
    out = n_out if task == "classify" else 1
    head = [("Activation", {"fn": "softmax"})] if task == "classify" else []
    transform = None
    if kind == "FC":
        layers = [
            ("Dense", {"in": input_dim, "out": 256}), ("Activation", {"fn": "relu"}),
            ("Dropout", {"rate": dropout}),
            ("Dense", {"in": 256, "out": 128}), ("Activation", {"fn": "relu"}),
            ("Dropout", {"rate": dropout}),
            ("Dense", {"in": 128, "out": 64}), ("Activation", {"fn": "relu"}),
            ("Dense", {"in": 64, "out": out}),
        ]
    elif kind == "CNN":
        transform = "square"
        s = square_side(input_dim, strict_reshape)
        layers = []
        chans = [1, 8, 16, 32, 32]
        for c_in, c_out in zip(chans, chans[1:]):
            layers += [
                ("Conv2D", {"in_ch": c_in, "out_ch": c_out, "kernel": 3, "stride": 1, "pad": 1}),
                ("BatchNorm", {"dim": c_out}),
                ("Activation", {"fn": "relu"}),
            ]
        layers += [
            ("Flatten", {}),
            ("Dense", {"in": chans[-1] * s * s, "out": 128}), ("Activation", {"fn": "relu"}),
            ("Dropout", {"rate": dropout}),
            ("Dense", {"in": 128, "out": 64}), ("Activation", {"fn": "relu"}),
            ("Dense", {"in": 64, "out": out}),
        ]
    elif kind in ("RNN", "LSTM"):
        transform = "sequence"
        _, b = sequence_shape(input_dim, strict_reshape)
        cell = "RNNCellStack" if kind == "RNN" else "LSTMStack"
        layers = [(cell, {"layers": 3, "hidden": hidden, "in": b}),
                  ("Dense", {"in": hidden, "out": out})]
    else:
        raise ValueError(f"unknown architecture {kind!r}")
    return NetworkSpec(tuple(layers + head), seed, input_dim, transform, strict_reshape, task)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate <= 0 or self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("learning_rate, epochs and batch_size must be positive")


class Adam:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, net: Network):
        self.t += 1
        c = self.cfg
        for key, p in net.parameters():
            g = net.layers[key[0]].grads[key[1]]
            m = self.m.get(key, 0.0) * c.beta1 + (1 - c.beta1) * g
            v = self.v.get(key, 0.0) * c.beta2 + (1 - c.beta2) * g * g
            self.m[key], self.v[key] = m, v
            mhat = m / (1 - c.beta1 ** self.t)
            vhat = v / (1 - c.beta2 ** self.t)
            p -= c.learning_rate * mhat / (np.sqrt(vhat) + c.eps)


class SGD:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg

    def step(self, net: Network):
        for key, p in net.parameters():
            p -= self.cfg.learning_rate * net.layers[key[0]].grads[key[1]]


def loss_and_grad(net: Network, X, targets, train: bool, rng):
    """Mean softmax cross-entropy (integer targets) or MSE, with backprop."""
    if net.softmax_head:
        logits = net.forward(X, train, rng, upto=len(net.layers) - 1)
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        n = len(targets)
        loss = -logp[np.arange(n), targets].mean()
        d = np.exp(logp)
        d[np.arange(n), targets] -= 1.0
        net.backward(d / n, start=len(net.layers) - 1)
    else:
        out = net.forward(X, train, rng)[:, 0]
        r = out - targets
        loss = float((r * r).mean())
        net.backward((2.0 * r / len(r))[:, None])
    return float(loss)


@dataclass
class TrainedNetwork:
    network: Network
    config: TrainConfig
    classes: list | None = None
    y_mean: float = 0.0
    y_std: float = 1.0
    losses: list = field(default_factory=list)

    def decision_function(self, X):
        return self.network.forward(np.asarray(X, dtype=float), train=False)

    def predict(self, X):
        out = self.decision_function(X)
        if self.classes is not None:
            return np.asarray(self.classes, dtype=object)[np.argmax(out, axis=1)]
        return out[:, 0] * self.y_std + self.y_mean

    def loss_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, l in enumerate(self.losses, start=1):
            w.writerow([i, repr(l)])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "network": self.network.to_dict(),
            "config": self.config.__dict__,
            "classes": self.classes,
            "y_mean": self.y_mean,
            "y_std": self.y_std,
        })

    @classmethod
    def from_json(cls, text: str) -> "TrainedNetwork":
        d = json.loads(text)
        return cls(Network.from_dict(d["network"]), TrainConfig(**d["config"]), d["classes"],
                   d["y_mean"], d["y_std"])


def train_network(spec: NetworkSpec, config: TrainConfig, X, y) -> TrainedNetwork:
    """Mini-batch training with seeded shuffling; regression targets are
    standardised internally and mapped back at prediction time."""
    X = np.asarray(X, dtype=float)
    net = Network(spec)
    classes = None
    y_mean, y_std = 0.0, 1.0
    if spec.task == "classify":
        classes = sorted(set(np.asarray(y).tolist()), key=str)
        index = {c: i for i, c in enumerate(classes)}
        targets = np.array([index[v] for v in np.asarray(y).tolist()], dtype=np.int64)
    else:
        yf = np.asarray(y, dtype=float)
        y_mean, y_std = float(yf.mean()), float(yf.std()) or 1.0
        targets = (yf - y_mean) / y_std
    opt = Adam(config) if config.optimizer == "adam" else SGD(config)
    rng = np.random.default_rng(config.seed)
    n = X.shape[0]
    losses = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            try:
                batch_loss = loss_and_grad(net, X[idx], targets[idx], True, rng)
            except NonFiniteActivation:
                raise Divergence(epoch, float("nan")) from None
            if not np.isfinite(batch_loss):
                raise Divergence(epoch, batch_loss)
            opt.step(net)
            total += batch_loss * len(idx)
        losses.append(total / n)
    return TrainedNetwork(net, config, classes, y_mean, y_std, losses)
