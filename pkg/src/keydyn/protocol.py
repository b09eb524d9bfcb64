"""Evaluation protocol: user-disjoint split, k-fold grid search on training
users, refit, held-out test, and the task x device x mode x model matrix.

Every fitted component (vocabulary, standardizer, selector, oversampler,
model) is fitted on training-side users only and logs the user ids it saw,
so provenance can be audited for leakage.
"""

from __future__ import annotations

import itertools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from . import ml_models
from .errors import (
    BadSpec,
    KeydynError,
    LengthMismatch,
    StratumTooSmall,
    TooFewUsers,
)
from .features import DeviceConfig, StreamProfile, combine_devices, combined_names, fit_vocabulary, vectorize
from .ingest import Dataset, Mode, SoftLabels
from .neural import ARCHITECTURES, TrainConfig, build_architecture, train_network
from .preprocess import (
    SmoteConfig,
    Standardizer,
    borderline_smote,
    impute_and_standardize,
    mi_scores,
    quartile_classes,
    rank_features,
)
from .synth import stable_seed

log = logging.getLogger(__name__)


class Task(Enum):
    Gender = "gender"
    Major = "major"
    Style = "style"
    Age = "age"
    Height = "height"

    @property
    def kind(self) -> str:
        return "regress" if self in (Task.Age, Task.Height) else "classify"


def task_label(task: Task, labels: SoftLabels):
    if task is Task.Gender:
        return labels.gender.value
    if task is Task.Major:
        return labels.major.value
    if task is Task.Style:
        return labels.typing_style.value
    if task is Task.Age:
        return float(labels.age)
    return float(labels.height)


NEURAL_DEFAULTS = {"lr": 1e-3, "epochs": 60, "batch_size": 32}
NEURAL_GRID = {"lr": [1e-3, 1e-2]}
MODEL_NAMES = ml_models.ALGORITHMS + ARCHITECTURES


@dataclass(frozen=True)
class ModelRecipe:
    """An algorithm with its hyperparameter grid and fixed settings."""

    algorithm: str
    grid: Mapping[str, Sequence] = field(default_factory=dict)
    fixed: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.algorithm not in MODEL_NAMES:
            raise BadSpec(f"unknown algorithm {self.algorithm!r}")

    @classmethod
    def default(cls, algorithm: str) -> "ModelRecipe":
        if algorithm in ARCHITECTURES:
            return cls(algorithm, dict(NEURAL_GRID))
        return cls(algorithm, dict(ml_models.GRIDS[algorithm]))

    def supports(self, kind: str) -> bool:
        return not (kind == "regress" and self.algorithm in ml_models.CLASSIFY_ONLY)

    def points(self) -> list[dict]:
        names = sorted(self.grid)
        return [
            {**self.fixed, **dict(zip(names, values))}
            for values in itertools.product(*(self.grid[n] for n in names))
        ] or [dict(self.fixed)]

    def to_dict(self) -> dict:
        return {"algorithm": self.algorithm, "grid": {k: list(v) for k, v in self.grid.items()},
                "fixed": dict(self.fixed)}


@dataclass(frozen=True)
class ExperimentConfig:
    task: Task
    device_config: DeviceConfig
    mode: Mode
    model: ModelRecipe
    selector_k: tuple[int, ...] = (10, 30, 100)
    seed: int = 0
    n_folds: int = 5
    caps: Mapping[str, int] | None = None
    mi_bins: int = 10
    smote: SmoteConfig = SmoteConfig()

    def __post_init__(self):
        if not self.model.supports(self.task.kind):
            raise BadSpec(f"{self.model.algorithm} cannot be used for {self.task.value} regression")


@dataclass(frozen=True)
class SplitSpec:
    train_users: tuple[str, ...]
    test_users: tuple[str, ...]
    ratio: float = 0.7
    stratify_by: str = ""


# ---------------------------------------------------------------------------
# metrics


def accuracy(pred, truth) -> float:
    if len(pred) != len(truth) or len(pred) == 0:
        raise LengthMismatch(f"{len(pred)} predictions vs {len(truth)} truths")
    return sum(p == t for p, t in zip(pred, truth)) / len(truth)


def mae(pred, truth) -> float:
    if len(pred) != len(truth) or len(pred) == 0:
        raise LengthMismatch(f"{len(pred)} predictions vs {len(truth)} truths")
    return math.fsum(abs(float(p) - float(t)) for p, t in zip(pred, truth)) / len(truth)


# ---------------------------------------------------------------------------
# splitting


def _strata(users, values, kind) -> dict:
    if kind == "regress":
        bins = quartile_classes([values[u] for u in users])
        keys = {u: int(b) for u, b in zip(users, bins)}
    else:
        keys = {u: values[u] for u in users}
    strata: dict = {}
    for u in users:
        strata.setdefault(keys[u], []).append(u)
    return dict(sorted(strata.items(), key=lambda kv: str(kv[0])))


def split_users(users: Sequence[str], labels: Mapping[str, SoftLabels], task: Task, seed: int,
                ratio: float = 0.7) -> SplitSpec:
    """Stratified, seeded user-disjoint split.

    Each stratum sends floor(ratio * n_c) users (at least 1, at most n_c - 1)
    to training; the remaining seats up to floor(ratio * N) go to strata with
    the largest fractional share, ties in class order.
    """
    users = sorted(users)
    if len(users) < 4:
        raise TooFewUsers(f"need at least 4 users, got {len(users)}")
    values = {u: task_label(task, labels[u]) for u in users}
    strata = _strata(users, values, task.kind)
    for key, members in strata.items():
        if len(members) < 2:
            raise StratumTooSmall(key)
    rng = np.random.default_rng(stable_seed("split", seed, task.value))
    shuffled = {k: [m[i] for i in rng.permutation(len(m))] for k, m in strata.items()}
    n_train = {k: min(len(m) - 1, max(1, int(math.floor(ratio * len(m))))) for k, m in strata.items()}
    spare = int(math.floor(ratio * len(users))) - sum(n_train.values())
    order = sorted(strata, key=lambda k: -(ratio * len(strata[k]) - math.floor(ratio * len(strata[k]))))
    for k in order:
        if spare <= 0:
            break
        if n_train[k] < len(strata[k]) - 1:
            n_train[k] += 1
            spare -= 1
    train = sorted(u for k, m in shuffled.items() for u in m[: n_train[k]])
    test = sorted(u for k, m in shuffled.items() for u in m[n_train[k]:])
    return SplitSpec(tuple(train), tuple(test), ratio, task.value)


def kfold(train_users: Sequence[str], k: int = 5, seed: int = 0,
          strata: Mapping[str, object] | None = None) -> list[tuple[tuple[str, ...], tuple[str, ...]]]:
    """Seeded partition into ``k`` near-equal folds.

    With ``strata`` the shuffled users are grouped by stratum before being
    dealt round-robin, which keeps class proportions similar across folds.
    """
    users = sorted(train_users)
    if len(users) < k:
        raise TooFewUsers(f"{len(users)} users cannot fill {k} folds")
    rng = np.random.default_rng(stable_seed("kfold", seed))
    shuffled = [users[i] for i in rng.permutation(len(users))]
    if strata is not None:
        shuffled.sort(key=lambda u: str(strata[u]))
    folds: list[list[str]] = [[] for _ in range(k)]
    for i, u in enumerate(shuffled):
        folds[i % k].append(u)
    out = []
    for i in range(k):
        val = tuple(sorted(folds[i]))
        fit_users = tuple(sorted(u for j, f in enumerate(folds) if j != i for u in f))
        out.append((fit_users, val))
    return out


# ---------------------------------------------------------------------------
# features


class FeatureStore:
    """Per-stream occurrence profiles of a dataset, computed once and shared."""

    def __init__(self, dataset: Dataset, caps: Mapping[str, int] | None = None, k_iqr: float = 1.5):
        self.dataset = dataset
        self.caps = caps
        self.k_iqr = k_iqr
        self._profiles: dict = {}

    def profile(self, user, device, mode) -> StreamProfile:
        key = (user, device, mode)
        if key not in self._profiles:
            self._profiles[key] = StreamProfile(self.dataset.stream(user, device, mode), self.k_iqr)
        return self._profiles[key]

    def matrix(self, device_config: DeviceConfig, mode: Mode, fit_users: Sequence[str],
               users: Sequence[str], caps=None):
        """Vocabulary fitted on ``fit_users``; rows for ``users``.

        Returns (X, mask, names, fit_log).
        """
        caps = caps if caps is not None else self.caps
        vocabs = {}
        fit_log = []
        for device in device_config.devices:
            streams = [self.profile(u, device, mode) for u in fit_users]
            streams = [p for p in streams if p.n_events]
            vocabs[device] = fit_vocabulary(streams, caps)
            fit_log.append({"component": f"vocabulary[{device.value}]",
                            "fitted_on": list(vocabs[device].fitted_on)})
        rows, masks = [], []
        for u in users:
            per_device = {d: vectorize(self.profile(u, d, mode), vocabs[d]) for d in device_config.devices}
            vec = combine_devices(per_device) if device_config is DeviceConfig.Combined else per_device[device_config.devices[0]]
            rows.append(vec.values)
            masks.append(vec.missing_mask)
        if device_config is DeviceConfig.Combined:
            names = combined_names(vocabs)
        else:
            names = vocabs[device_config.devices[0]].names
        return np.array(rows), np.array(masks), names, fit_log


# ---------------------------------------------------------------------------
# models


def fit_model(algorithm: str, task_kind: str, params: dict, seed: int, X, y):
    """Fit a classical or neural model; the result has ``predict(X)``."""
    if algorithm in ARCHITECTURES:
        p = {**NEURAL_DEFAULTS, **params}
        n_out = len(set(np.asarray(y).tolist())) if task_kind == "classify" else 1
        spec = build_architecture(algorithm, X.shape[1], n_out, task_kind, seed=seed)
        cfg = TrainConfig("adam", float(p["lr"]), int(p["epochs"]), int(p["batch_size"]), seed)
        return train_network(spec, cfg, X, y)
    spec = ml_models.ModelSpec(algorithm, task_kind, dict(params), seed)
    return ml_models.fit(spec, X, y)


def _score(kind, pred, truth) -> float:
    return accuracy(list(pred), list(truth)) if kind == "classify" else mae(pred, truth)


@dataclass
class PreparedFold:
    fit_users: tuple
    eval_users: tuple
    Z_fit: np.ndarray
    Z_eval: np.ndarray
    y_fit: np.ndarray
    y_eval: np.ndarray
    ranking: tuple
    names: list
    fit_log: list


def prepare(store: FeatureStore, cfg: ExperimentConfig, fit_users, eval_users, label_of) -> PreparedFold:
    X_all, M_all, names, fit_log = store.matrix(cfg.device_config, cfg.mode, fit_users,
                                                list(fit_users) + list(eval_users), cfg.caps)
    n_fit = len(fit_users)
    std = Standardizer.fit(X_all[:n_fit], M_all[:n_fit], fit_users)
    Z = impute_and_standardize(X_all, M_all, std)
    y_fit = np.array([label_of[u] for u in fit_users])
    y_eval = np.array([label_of[u] for u in eval_users])
    target = quartile_classes(y_fit) if cfg.task.kind == "regress" else y_fit
    ranking = rank_features(mi_scores(Z[:n_fit], target, cfg.mi_bins))
    fit_log = fit_log + [
        {"component": "standardizer", "fitted_on": list(std.fitted_on)},
        {"component": "mi_selector", "fitted_on": list(fit_users)},
    ]
    return PreparedFold(tuple(fit_users), tuple(eval_users), Z[:n_fit], Z[n_fit:], y_fit, y_eval,
                        ranking, names, fit_log)


def train_on(prep: PreparedFold, cfg: ExperimentConfig, k: int, params: dict, seed: int):
    """Select ``k`` features, oversample (classification), fit. Returns
    (model, selected indices, oversampling info)."""
    sel = list(prep.ranking[:min(k, len(prep.ranking))])
    X, y = prep.Z_fit[:, sel], prep.y_fit
    info = {}
    if cfg.task.kind == "classify":
        smote_cfg = SmoteConfig(cfg.smote.k_generate, cfg.smote.m_danger,
                                stable_seed("smote", seed, k))
        res = borderline_smote(X, y, smote_cfg, skip_small=True)
        X, y = res.X, res.y
        info = {"fallback": [str(c) for c in res.fallback], "skipped": [str(c) for c in res.skipped],
                "danger": {str(c): n for c, n in res.danger.items()},
                "synthetic": int(len(y) - len(prep.y_fit)),
                "fitted_on": list(prep.fit_users)}
    model = fit_model(cfg.model.algorithm, cfg.task.kind, params, seed, X, y)
    return model, sel, info


def grid_points(cfg: ExperimentConfig, n_features: int | None = None) -> list[tuple[int, dict]]:
    ks = list(dict.fromkeys(cfg.selector_k))
    if n_features is not None:
        ks = list(dict.fromkeys(min(k, n_features) for k in ks))
    return [(k, p) for k in ks for p in cfg.model.points()]


def grid_search(cfg: ExperimentConfig, folds, store: FeatureStore, label_of) -> dict:
    """Mean validation metric per grid point; the first best point wins."""
    prepared = [prepare(store, cfg, fit, val, label_of) for fit, val in folds]
    n_feat = min(len(p.ranking) for p in prepared)
    points = grid_points(cfg, n_feat)
    scores = []
    fold_logs = []
    for f, prep in enumerate(prepared):
        fold_logs.append({"fold": f, "fit_users": list(prep.fit_users), "val_users": list(prep.eval_users),
                          "fitted": prep.fit_log})
    for k, params in points:
        per_fold = []
        for f, prep in enumerate(prepared):
            model, sel, info = train_on(prep, cfg, k, params, stable_seed(cfg.seed, "fold", f))
            per_fold.append(_score(cfg.task.kind, model.predict(prep.Z_eval[:, sel]), prep.y_eval))
            if info:
                fold_logs[f].setdefault("smote", []).append(info)
        scores.append(float(np.mean(per_fold)))
    better = max if cfg.task.kind == "classify" else min
    best_score = better(scores)
    best = scores.index(best_score)
    return {
        "points": [{"k": k, "params": p, "score": s} for (k, p), s in zip(points, scores)],
        "winner": {"k": points[best][0], "params": points[best][1], "score": best_score},
        "folds": fold_logs,
    }


def run_experiment(cfg: ExperimentConfig, dataset: Dataset, store: FeatureStore | None = None,
                   artifacts: dict | None = None):
    """Split, grid-search on training users, refit, evaluate on test users.

    Returns (metric, provenance); the metric is accuracy or MAE. If
    ``artifacts`` is a dict it receives the final model, the selected
    feature names and the preprocessed test rows.
    """
    store = store or FeatureStore(dataset, cfg.caps)
    users = dataset.users
    split = split_users(users, dataset.labels, cfg.task, cfg.seed)
    label_of = {u: task_label(cfg.task, dataset.labels[u]) for u in users}
    strata = _strata(split.train_users, label_of, cfg.task.kind)
    stratum_of = {u: k for k, members in strata.items() for u in members}
    folds = kfold(split.train_users, cfg.n_folds, stable_seed(cfg.seed, cfg.task.value), stratum_of)
    search = grid_search(cfg, folds, store, label_of)
    k, params = search["winner"]["k"], search["winner"]["params"]
    prep = prepare(store, cfg, split.train_users, split.test_users, label_of)
    model, selected, info = train_on(prep, cfg, k, params, stable_seed(cfg.seed, "final"))
    pred = model.predict(prep.Z_eval[:, selected])
    metric = _score(cfg.task.kind, pred, prep.y_eval)
    if artifacts is not None:
        artifacts.update(model=model, names=[prep.names[i] for i in selected],
                         X_test=prep.Z_eval[:, selected], test_users=list(split.test_users),
                         predictions=list(pred))
    truth = prep.y_eval.tolist()
    if cfg.task.kind == "classify":
        counts = {str(c): truth.count(c) for c in sorted(set(label_of.values()), key=str)}
        baseline = max(counts.values()) / len(truth)
        baseline_name = "majority_class_accuracy"
    else:
        counts = {}
        train_mean = float(np.mean(prep.y_fit))
        baseline = mae([train_mean] * len(truth), truth)
        baseline_name = "training_mean_mae"
    provenance = {
        "task": cfg.task.value,
        "device_config": cfg.device_config.value,
        "mode": cfg.mode.value,
        "model": cfg.model.to_dict(),
        "seed": cfg.seed,
        "train_users": list(split.train_users),
        "test_users": list(split.test_users),
        "grid_search": search,
        "winner": search["winner"],
        "n_descriptors": len(prep.names),
        "selected_features": [prep.names[i] for i in selected],
        "final_fitted": prep.fit_log + [
            {"component": "smote", **info} if info else {"component": "smote", "fitted_on": []},
            {"component": "model", "fitted_on": list(split.train_users)},
        ],
        "smote_fallbacks": info.get("fallback", []),
        "test_class_balance": counts,
        baseline_name: baseline,
        "metric_name": "accuracy" if cfg.task.kind == "classify" else "mae",
        "metric": metric,
    }
    return metric, provenance


# ---------------------------------------------------------------------------
# leakage audit


def _fitted_records(prov: dict):
    for rec in prov.get("final_fitted", []):
        yield "final", rec
    for fold in prov.get("grid_search", {}).get("folds", []):
        for rec in fold.get("fitted", []):
            yield f"fold {fold['fold']}", rec
        for rec in fold.get("smote", []):
            yield f"fold {fold['fold']}", {"component": "smote", **rec}


def audit_leakage(provenance: Sequence[dict] | dict) -> list[str]:
    """Violations: any fitted-component record listing a test user id."""
    cells = [provenance] if isinstance(provenance, dict) else list(provenance)
    problems = []
    for cell in cells:
        if "test_users" not in cell:
            continue
        test = set(cell["test_users"])
        for stage, rec in _fitted_records(cell):
            leaked = test.intersection(rec.get("fitted_on", []))
            if leaked:
                problems.append(
                    f"{cell['task']}/{cell['device_config']}/{cell['mode']}/{cell['model']['algorithm']} "
                    f"{stage} {rec['component']}: {sorted(leaked)}"
                )
    return problems


# ---------------------------------------------------------------------------
# experiment matrix


@dataclass
class ResultTable:
    cells: dict = field(default_factory=dict)        # (task, device, mode, algorithm) -> per-seed metrics
    failures: dict = field(default_factory=dict)     # same key -> error message
    provenance: list = field(default_factory=list)
    seeds: tuple = ()

    def value(self, key) -> tuple[float, float] | None:
        vals = self.cells.get(key)
        if not vals:
            return None
        return float(np.mean(vals)), float(np.std(vals))

    @property
    def complete(self) -> bool:
        return not self.failures


_WORKER_STORE: FeatureStore | None = None


def _init_worker(store):
    global _WORKER_STORE
    _WORKER_STORE = store


def _run_cell(args):
    cfg = args
    store = _WORKER_STORE
    try:
        metric, prov = run_experiment(cfg, store.dataset, store)
        return metric, prov, None
    except KeydynError as exc:
        return None, None, f"{type(exc).__name__}: {exc}"
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return None, None, f"{type(exc).__name__}: {exc}"


def matrix_configs(tasks, device_configs, modes, models, seeds, **kwargs) -> list[ExperimentConfig]:
    out = []
    for task in tasks:
        for dc in device_configs:
            for mode in modes:
                for recipe in models:
                    if not recipe.supports(task.kind):
                        continue
                    for seed in seeds:
                        out.append(ExperimentConfig(task, dc, mode, recipe, seed=seed, **kwargs))
    return out


def full_matrix(dataset: Dataset, tasks: Sequence[Task], models: Sequence[ModelRecipe],
                seeds: Sequence[int] = (0,), device_configs: Sequence[DeviceConfig] = tuple(DeviceConfig),
                modes: Sequence[Mode] = (Mode.Free, Mode.Fixed), jobs: int = 1,
                store: FeatureStore | None = None, **kwargs) -> ResultTable:
    """Run every (task, device config, mode, model, seed) cell.

    Cell failures are recorded and the run continues. Results are assembled
    in configuration order regardless of ``jobs``.
    """
    store = store or FeatureStore(dataset, kwargs.get("caps"))
    configs = matrix_configs(tasks, device_configs, modes, models, seeds, **kwargs)
    if jobs > 1 and len(configs) > 1:
        import multiprocessing as mp
        with ProcessPoolExecutor(jobs, mp_context=mp.get_context("fork"),
                                 initializer=_init_worker, initargs=(store,)) as pool:
            results = list(pool.map(_run_cell, configs))
    else:
        _init_worker(store)
        results = [_run_cell(c) for c in configs]
    table = ResultTable(seeds=tuple(seeds))
    for cfg, (metric, prov, err) in zip(configs, results):
        key = (cfg.task.value, cfg.device_config.value, cfg.mode.value, cfg.model.algorithm)
        if err is not None:
            table.failures.setdefault(key, []).append(f"seed {cfg.seed}: {err}")
            log.error("cell %s seed %d failed: %s", key, cfg.seed, err)
            continue
        table.cells.setdefault(key, []).append(metric)
        table.provenance.append(prov)
    return table


def default_jobs() -> int:
    return os.cpu_count() or 1
