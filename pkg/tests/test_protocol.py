import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from keydyn import ml_models
from keydyn.errors import BadSpec, LengthMismatch, StratumTooSmall, TooFewUsers
from keydyn.features import DeviceConfig
from keydyn.ingest import Gender, Major, Mode, SoftLabels, Style
from keydyn.protocol import (
    ExperimentConfig,
    FeatureStore,
    ModelRecipe,
    Task,
    accuracy,
    audit_leakage,
    full_matrix,
    grid_points,
    grid_search,
    kfold,
    mae,
    prepare,
    run_experiment,
    split_users,
    task_label,
    train_on,
)
from keydyn.synth import GeneratorConfig, sample_population

# metrics


def test_accuracy_examples():
    assert accuracy([1] * 8 + [0] * 2, [1] * 10) == 0.8
    assert accuracy(["a", "b"], ["a", "b"]) == 1.0
    assert accuracy(["m"] * 40, ["m"] * 37 + ["f"] * 3) == 0.925


def test_mae_examples():
    assert mae([20, 30], [22, 27]) == 2.5
    assert mae([1.5, 2.5], [1.5, 2.5]) == 0
    assert mae([24], [28]) == 4


def test_metric_length_mismatch():
    with pytest.raises(LengthMismatch):
        accuracy([1, 2], [1])
    with pytest.raises(LengthMismatch):
        mae([], [])


# splitting


def labels_for(genders):
    return {f"u{i:03d}": SoftLabels(Gender(g), Major.CS, Style.C_NoLook, 24, 67)
            for i, g in enumerate(genders)}


def test_split_117_users():
    labels = dict(sample_population(GeneratorConfig()))
    split = split_users(list(labels), labels, Task.Gender, 0)
    assert (len(split.train_users), len(split.test_users)) == (81, 36)
    train_g = [labels[u].gender for u in split.train_users]
    assert train_g.count(Gender.Male) == 50 and train_g.count(Gender.Female) == 31


def test_split_ten_users():
    labels = labels_for(["male"] * 5 + ["female"] * 5)
    split = split_users(list(labels), labels, Task.Gender, 0)
    assert len(split.train_users) == 7 and len(split.test_users) == 3
    per_class = sorted(sum(labels[u].gender is g for u in split.train_users) for g in Gender)
    assert per_class == [3, 4]
    assert not set(split.train_users) & set(split.test_users)


def test_split_deterministic_and_seed_sensitive():
    labels = dict(sample_population(GeneratorConfig()))
    a = split_users(list(labels), labels, Task.Major, 4)
    assert a == split_users(list(reversed(list(labels))), labels, Task.Major, 4)
    assert a != split_users(list(labels), labels, Task.Major, 5)


def test_split_regression_stratifies_quartiles():
    labels = dict(sample_population(GeneratorConfig()))
    split = split_users(list(labels), labels, Task.Age, 0)
    assert len(split.train_users) == 81


def test_split_errors():
    labels = labels_for(["male"] * 5 + ["female"])
    with pytest.raises(StratumTooSmall):
        split_users(list(labels), labels, Task.Gender, 0)
    labels = labels_for(["male", "female", "male"])
    with pytest.raises(TooFewUsers):
        split_users(list(labels), labels, Task.Gender, 0)


@given(st.integers(2, 40), st.integers(2, 40), st.integers(0, 1000))
@settings(max_examples=60, deadline=None)
def test_split_properties(n_m, n_f, seed):
    labels = labels_for(["male"] * n_m + ["female"] * n_f)
    split = split_users(list(labels), labels, Task.Gender, seed)
    assert set(split.train_users) | set(split.test_users) == set(labels)
    assert not set(split.train_users) & set(split.test_users)
    for g in Gender:
        assert any(labels[u].gender is g for u in split.train_users)
        assert any(labels[u].gender is g for u in split.test_users)
    floor_share = sum(min(c - 1, max(1, int(0.7 * c))) for c in (n_m, n_f))
    assert len(split.train_users) == max(floor_share, int(0.7 * (n_m + n_f)))


def test_kfold_sizes():
    users = [f"u{i}" for i in range(82)]
    folds = kfold(users, 5, seed=0)
    assert sorted(len(v) for _, v in folds) == [16, 16, 16, 17, 17]
    vals = [u for _, v in folds for u in v]
    assert sorted(vals) == sorted(users)
    for fit_users, val in folds:
        assert not set(fit_users) & set(val)
        assert set(fit_users) | set(val) == set(users)
    assert folds == kfold(users, 5, seed=0)


def test_kfold_stratified_balance():
    users = [f"u{i:02d}" for i in range(50)]
    strata = {u: ("a" if i < 10 else "b") for i, u in enumerate(users)}
    for _, val in kfold(users, 5, 3, strata):
        assert sum(strata[u] == "a" for u in val) == 2


def test_kfold_too_few():
    with pytest.raises(TooFewUsers):
        kfold(["a", "b"], 5)


# grid search


class PlantedStore:
    """A stand-in feature store serving fixed rows per user."""

    def __init__(self, rows):
        self.rows = rows

    def matrix(self, device_config, mode, fit_users, users, caps=None):
        X = np.array([self.rows[u] for u in users])
        names = [f"f{j}" for j in range(X.shape[1])]
        return X, np.zeros_like(X, dtype=bool), names, [
            {"component": "vocabulary", "fitted_on": list(fit_users)}]


def conjunction_data(n=400, seed=0):
    # positive iff all five features are positive: a tree needs depth 5
    rng = np.random.default_rng(seed)
    rows, label_of = {}, {}
    for i in range(n):
        u = f"u{i:03d}"
        if i % 2:
            x = np.abs(rng.standard_normal(5))
        else:
            signs = np.ones(5)
            while signs.min() > 0:
                signs = rng.choice([-1.0, 1.0], 5)
            x = signs * np.abs(rng.standard_normal(5))
        rows[u] = x
        label_of[u] = "pos" if i % 2 else "neg"
    return rows, label_of


def tree_config(depths):
    return ExperimentConfig(Task.Gender, DeviceConfig.Desktop, Mode.Free,
                            ModelRecipe("DecisionTree", {"max_depth": depths}), selector_k=(5,))


def test_grid_prefers_deep_tree_on_planted_target():
    rows, label_of = conjunction_data()
    folds = kfold(sorted(rows), 5, 0)
    result = grid_search(tree_config([3, 5]), folds, PlantedStore(rows), label_of)
    assert result["winner"]["params"]["max_depth"] >= 5
    scores = {p["params"]["max_depth"]: p["score"] for p in result["points"]}
    assert scores[5] > scores[3]


def test_grid_single_point_and_tie_rule():
    rows, label_of = conjunction_data(100)
    folds = kfold(sorted(rows), 5, 0)
    single = grid_search(tree_config([4]), folds, PlantedStore(rows), label_of)
    assert single["winner"]["params"] == {"max_depth": 4}
    cfg = ExperimentConfig(Task.Gender, DeviceConfig.Desktop, Mode.Free,
                           ModelRecipe("KNN", {"k": [5, 5]}, {}), selector_k=(5,))
    res = grid_search(cfg, folds, PlantedStore(rows), label_of)
    assert res["points"][0]["score"] == res["points"][1]["score"]
    assert res["winner"]["score"] == res["points"][0]["score"]


def test_grid_point_order():
    cfg = ExperimentConfig(Task.Gender, DeviceConfig.Desktop, Mode.Free,
                           ModelRecipe("GBT", {"n_trees": [50, 100], "eta": [0.1, 0.3]}),
                           selector_k=(10, 30, 10))
    points = grid_points(cfg)
    assert [k for k, _ in points] == [10] * 4 + [30] * 4
    assert points[1][1] == {"eta": 0.1, "n_trees": 100}
    assert [k for k, _ in grid_points(cfg, n_features=20)] == [10] * 4 + [20] * 4


def test_regression_rejects_classify_only_model():
    with pytest.raises(BadSpec):
        ExperimentConfig(Task.Age, DeviceConfig.Desktop, Mode.Free, ModelRecipe("NaiveBayes"))
    with pytest.raises(BadSpec):
        ModelRecipe("XGBoost")


# experiments on synthetic data


def knn_config(task=Task.Gender, dc=DeviceConfig.Desktop, seed=0):
    return ExperimentConfig(task, dc, Mode.Free, ModelRecipe("KNN", {"k": [3, 5]}),
                            selector_k=(10, 30), seed=seed, n_folds=3)


def test_run_experiment_provenance(small_dataset):
    metric, prov = run_experiment(knn_config(), small_dataset)
    assert 0.0 <= metric <= 1.0
    assert prov["metric"] == metric and prov["metric_name"] == "accuracy"
    assert not set(prov["train_users"]) & set(prov["test_users"])
    assert len(prov["grid_search"]["points"]) == 4
    assert len(prov["selected_features"]) == prov["winner"]["k"]
    assert sum(prov["test_class_balance"].values()) == len(prov["test_users"])
    assert audit_leakage(prov) == []
    json.dumps(prov)


def test_regression_experiment_reports_baseline(small_dataset):
    metric, prov = run_experiment(knn_config(Task.Age), small_dataset)
    assert metric >= 0 and prov["metric_name"] == "mae"
    assert prov["training_mean_mae"] >= 0


def test_audit_detects_planted_leak(small_dataset):
    _, prov = run_experiment(knn_config(), small_dataset)
    prov["final_fitted"][0]["fitted_on"].append(prov["test_users"][0])
    problems = audit_leakage([prov])
    assert len(problems) == 1 and prov["test_users"][0] in problems[0]


def prepared(small_dataset, eval_users=None):
    cfg = knn_config()
    split = split_users(small_dataset.users, small_dataset.labels, cfg.task, 0)
    label_of = {u: task_label(cfg.task, small_dataset.labels[u]) for u in small_dataset.users}
    test = list(split.test_users) if eval_users is None else eval_users(list(split.test_users))
    store = FeatureStore(small_dataset)
    return cfg, prepare(store, cfg, split.train_users, test, label_of)


def test_deleting_test_user_leaves_model_unchanged(small_dataset):
    cfg, full = prepared(small_dataset)
    _, fewer = prepared(small_dataset, lambda t: t[1:])
    m_full, sel_full, _ = train_on(full, cfg, 10, {"k": 3}, 0)
    m_fewer, sel_fewer, _ = train_on(fewer, cfg, 10, {"k": 3}, 0)
    assert sel_full == sel_fewer
    assert ml_models.model_to_json(m_full) == ml_models.model_to_json(m_fewer)
    assert list(m_full.predict(full.Z_eval[1:, sel_full])) == list(m_fewer.predict(fewer.Z_eval[:, sel_fewer]))


def test_metric_invariant_to_test_order(small_dataset):
    cfg, fwd = prepared(small_dataset)
    _, rev = prepared(small_dataset, lambda t: t[::-1])
    model, sel, _ = train_on(fwd, cfg, 10, {"k": 3}, 0)
    p_fwd = list(model.predict(fwd.Z_eval[:, sel]))
    p_rev = list(model.predict(rev.Z_eval[:, sel]))
    assert p_fwd == p_rev[::-1]
    assert accuracy(p_fwd, list(fwd.y_eval)) == accuracy(p_rev, list(rev.y_eval))


def test_full_matrix_cells_and_determinism(small_dataset):
    models = [ModelRecipe("KNN", {"k": [3]}), ModelRecipe("LinearSVM", {"lam": [1e-2]})]
    kwargs = dict(selector_k=(10,), n_folds=3)
    a = full_matrix(small_dataset, [Task.Gender, Task.Height], models, **kwargs)
    assert len(a.cells) + len(a.failures) == 32
    assert a.complete
    assert audit_leakage(a.provenance) == []
    b = full_matrix(small_dataset, [Task.Gender, Task.Height], models, jobs=2, **kwargs)
    assert a.cells == b.cells
    assert list(a.cells) == list(b.cells)


def test_full_matrix_records_failures(small_dataset):
    # style class 'a' has a single user here, so its split fails per cell
    table = full_matrix(small_dataset, [Task.Style], [ModelRecipe("KNN", {"k": [3]})],
                        device_configs=[DeviceConfig.Desktop], modes=[Mode.Free], n_folds=3)
    counts = sum(l.typing_style is Style.A_MustLook for l in small_dataset.labels.values())
    if counts < 2:
        assert not table.complete and "StratumTooSmall" in next(iter(table.failures.values()))[0]
    else:
        assert table.complete
