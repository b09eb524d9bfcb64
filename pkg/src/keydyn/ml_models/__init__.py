"""Classical learners behind one fit/predict contract."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..errors import BadSpec, DegenerateData, DimensionMismatch
from . import estimators as est
from .tree import BoostTree, DecisionTree

ALGORITHMS = ("NaiveBayes", "KNN", "DecisionTree", "AdaBoost", "LinearSVM", "MLP1", "GBT")
CLASSIFY_ONLY = {"NaiveBayes", "AdaBoost"}

# name -> (default, lower bound, upper bound, integer?)
HYPERPARAMETERS: dict[str, dict[str, tuple]] = {
    "NaiveBayes": {"var_floor": (1e-9, 0.0, 1.0, False)},
    "KNN": {"k": (5, 1, 1000, True)},
    "DecisionTree": {"max_depth": (5, 1, 64, True), "min_samples_leaf": (1, 1, 1000, True)},
    "AdaBoost": {"n_rounds": (50, 1, 5000, True)},
    "LinearSVM": {
        "lam": (1e-3, 1e-8, 10.0, False),
        "epochs": (30, 1, 10000, True),
        "eta0": (0.1, 1e-6, 10.0, False),
        "epsilon": (0.1, 0.0, 10.0, False),
    },
    "MLP1": {"hidden": (64, 1, 4096, True), "lr": (0.1, 1e-6, 10.0, False), "epochs": (300, 1, 100000, True)},
    "GBT": {
        "n_trees": (100, 1, 5000, True),
        "eta": (0.1, 0.0, 1.0, False),
        "depth": (3, 1, 16, True),
        "lambda_reg": (1.0, 0.0, 1e6, False),
        "min_child_weight": (1.0, 0.0, 1e6, False),
    },
}

GRIDS: dict[str, dict[str, list]] = {
    "NaiveBayes": {},
    "KNN": {"k": [3, 5, 7, 9]},
    "DecisionTree": {"max_depth": [3, 5, 10]},
    "AdaBoost": {"n_rounds": [50, 100, 200]},
    "LinearSVM": {"lam": [1e-4, 1e-3, 1e-2, 1e-1]},
    "MLP1": {"hidden": [32, 64, 128], "lr": [0.01, 0.1]},
    "GBT": {"n_trees": [50, 100, 200], "eta": [0.05, 0.1, 0.3], "depth": [3, 5], "lambda_reg": [1.0]},
}


@dataclass(frozen=True)
class ModelSpec:
    algorithm: str
    task: str = "classify"
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise BadSpec(f"unknown algorithm {self.algorithm!r}")
        if self.task not in ("classify", "regress"):
            raise BadSpec(f"unknown task {self.task!r}")
        if self.task == "regress" and self.algorithm in CLASSIFY_ONLY:
            raise BadSpec(f"{self.algorithm} does not support regression")
        allowed = HYPERPARAMETERS[self.algorithm]
        for name, value in self.hyperparameters.items():
            if name not in allowed:
                raise BadSpec(f"{self.algorithm} has no hyperparameter {name!r}")
            _, lo, hi, integer = allowed[name]
            if not lo <= value <= hi:
                raise BadSpec(f"{name}={value} outside [{lo}, {hi}]")
            if integer and int(value) != value:
                raise BadSpec(f"{name} must be an integer")

    def params(self) -> dict:
        out = {k: v[0] for k, v in HYPERPARAMETERS[self.algorithm].items()}
        out.update(self.hyperparameters)
        return out

    def to_dict(self) -> dict:
        return {"algorithm": self.algorithm, "task": self.task,
                "hyperparameters": dict(self.hyperparameters), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["algorithm"], d["task"], dict(d.get("hyperparameters", {})), d.get("seed", 0))


def _build(spec: ModelSpec):
    p = spec.params()
    a, task = spec.algorithm, spec.task
    if a == "NaiveBayes":
        return est.NaiveBayes(p["var_floor"])
    if a == "KNN":
        return est.KNN(task, p["k"])
    if a == "DecisionTree":
        return est.CART(task, p["max_depth"], p["min_samples_leaf"])
    if a == "AdaBoost":
        return est.AdaBoost(p["n_rounds"])
    if a == "LinearSVM":
        return est.LinearSVM(task, p["lam"], p["epochs"], p["eta0"], p["epsilon"], spec.seed)
    if a == "MLP1":
        return est.MLP1(task, p["hidden"], p["lr"], p["epochs"], spec.seed)
    return est.GBT(task, p["n_trees"], p["eta"], p["depth"], p["lambda_reg"], p["min_child_weight"])


def canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row order depending only on row contents, so fits ignore input order."""
    keys = [y] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    return np.lexsort(keys[::-1]) if X.shape[1] else np.argsort(y, kind="stable")


@dataclass
class TrainedModel:
    spec: ModelSpec
    estimator: Any
    classes: list | None
    n_features: int

    def decision_function(self, X) -> np.ndarray:
        return self.estimator.decision_function(self._check(X))

    def predict(self, X) -> np.ndarray:
        X = self._check(X)
        if self.spec.task == "classify":
            codes = np.argmax(self.estimator.decision_function(X), axis=1)
            return np.asarray(self.classes, dtype=object)[codes]
        return self.estimator.predict_value(X)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got {X.shape}")
        return X


def fit(spec: ModelSpec, X, y) -> TrainedModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != len(y) or len(y) < 2:
        raise DimensionMismatch(f"need >= 2 rows with matching labels, got X{X.shape}, y({len(y)})")
    if spec.task == "classify":
        classes = sorted(set(y.tolist()), key=str)
        if len(classes) < 2:
            raise DegenerateData("classifier needs at least two classes")
        index = {c: i for i, c in enumerate(classes)}
        target = np.array([index[v] for v in y.tolist()], dtype=np.int64)
        n_classes = len(classes)
    else:
        classes = None
        target = y.astype(float)
        n_classes = None
    order = canonical_order(X, target)
    estimator = _build(spec).fit(X[order], target[order], n_classes)
    return TrainedModel(spec, estimator, classes, X.shape[1])


def predict(model: TrainedModel, X) -> np.ndarray:
    return model.predict(X)


# ---------------------------------------------------------------------------
# JSON serialisation

_CLASSES = {c.__name__: c for c in (est.NaiveBayes, est.KNN, est.CART, est.AdaBoost, est.LinearSVM,
                                      est.MLP1, est.GBT, DecisionTree, BoostTree)}


def _encode(obj):
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": obj.ravel().tolist(), "dtype": str(obj.dtype), "shape": list(obj.shape)}
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, list):
        return [_encode(v) for v in obj]
    if type(obj).__name__ in _CLASSES:
        return {"__object__": type(obj).__name__, "state": {k: _encode(v) for k, v in vars(obj).items()}}
    return obj


def _decode(obj):
    if isinstance(obj, dict) and "__ndarray__" in obj:
        return np.array(obj["__ndarray__"], dtype=obj["dtype"]).reshape(obj["shape"])
    if isinstance(obj, dict) and "__object__" in obj:
        inst = _CLASSES[obj["__object__"]].__new__(_CLASSES[obj["__object__"]])
        inst.__dict__.update({k: _decode(v) for k, v in obj["state"].items()})
        return inst
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def model_to_json(model: TrainedModel) -> str:
    doc = {
        "spec": model.spec.to_dict(),
        "classes": model.classes,
        "n_features": model.n_features,
        "parameters": _encode(model.estimator),
    }
    return json.dumps(doc, sort_keys=True)


def model_from_json(text: str) -> TrainedModel:
    doc = json.loads(text)
    return TrainedModel(ModelSpec.from_dict(doc["spec"]), _decode(doc["parameters"]),
                        doc["classes"], doc["n_features"])


__all__ = ["ALGORITHMS", "GRIDS", "ModelSpec", "TrainedModel", "fit", "predict",
           "model_to_json", "model_from_json"]
