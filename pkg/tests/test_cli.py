import json

import pytest

from keydyn.cli import main


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["synth", "--out", str(out), "--users", "24", "--keystrokes", "150", "--seed", "3"]) == 0
    return out


def test_usage_error_exit_1(capsys):
    assert main(["matrix", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_no_subcommand_exit_1(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_help_exit_0(capsys):
    assert main(["--help"]) == 0


def test_missing_data_exit_2(tmp_path, capsys):
    assert main(["summary", "--data-dir", str(tmp_path)]) == 2
    assert str(tmp_path) in capsys.readouterr().err


def test_summary(data_dir, capsys):
    assert main(["summary", "--data-dir", str(data_dir)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["summary"]["n_users"] == 24
    assert doc["build_report"]["events_dropped"] == 0


def test_data_dir_from_env(data_dir, monkeypatch, capsys):
    monkeypatch.setenv("KEYDYN_DATA_DIR", str(data_dir))
    assert main(["summary"]) == 0


def test_extract(data_dir, tmp_path):
    assert main(["extract", "--data-dir", str(data_dir), "--out", str(tmp_path),
                 "--device-configs", "desktop", "--modes", "free"]) == 0
    header = (tmp_path / "features_desktop_free.csv").read_text().splitlines()[0]
    assert header.startswith("user_id,")
    assert (tmp_path / "mask_desktop_free.csv").exists()


def test_train_then_predict(data_dir, tmp_path, capsys):
    assert main(["train", "--data-dir", str(data_dir), "--out", str(tmp_path), "--task", "gender",
                 "--model", "KNN", "--selector-k", "10"]) == 0
    stem = tmp_path / "gender_desktop_free_KNN_seed0"
    prov = json.loads(stem.with_suffix(".provenance.json").read_text())
    assert prov["metric_name"] == "accuracy"
    capsys.readouterr()
    assert main(["predict", "--model", str(stem.with_suffix(".model.json")),
                 "--features", str(stem.with_suffix(".test_features.csv"))]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "user_id,prediction"
    assert len(lines) - 1 == len(prov["test_users"])
    assert [l.split(",")[1] for l in lines[1:]] == [str(p) for p in _rerun_predictions(data_dir)]


def _rerun_predictions(data_dir):
    from keydyn.features import DeviceConfig
    from keydyn.ingest import Mode, load_dataset
    from keydyn.protocol import ExperimentConfig, ModelRecipe, Task, run_experiment

    artifacts = {}
    cfg = ExperimentConfig(Task.Gender, DeviceConfig.Desktop, Mode.Free, ModelRecipe.default("KNN"), (10,), 0)
    run_experiment(cfg, load_dataset(data_dir), artifacts=artifacts)
    return artifacts["predictions"]


def matrix_args(data_dir, out, *extra):
    return ["matrix", "--data-dir", str(data_dir), "--out", str(out), "--tasks", "gender,height",
            "--device-configs", "desktop,combined", "--modes", "free", "--models", "KNN",
            "--selector-k", "10", "--jobs", "1", *extra]


def test_matrix_outputs_and_determinism(data_dir, tmp_path):
    assert main(matrix_args(data_dir, tmp_path / "a")) == 0
    assert main(matrix_args(data_dir, tmp_path / "b", "--no-figures")) == 0
    for name in ("gender.md", "gender.csv", "gender.png", "height.csv", "provenance.json"):
        assert (tmp_path / "a" / name).exists()
    assert not (tmp_path / "b" / "gender.png").exists()
    for name in ("gender.csv", "height.csv", "gender.md"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_matrix_config_file(data_dir, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"data_dir": str(data_dir), "out_dir": str(tmp_path / "res"),
                               "tasks": ["gender"], "device_configs": ["phone"], "modes": ["fixed"],
                               "models": ["NaiveBayes"], "selector_k": [10], "jobs": 1,
                               "figures": False}))
    assert main(["matrix", "--config", str(cfg)]) == 0
    assert (tmp_path / "res" / "gender.md").exists()


def test_matrix_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"tasks": ["gender"], "learning_rate": 1}))
    assert main(["matrix", "--config", str(cfg)]) == 1
    assert "learning_rate" in capsys.readouterr().err


def test_matrix_failed_cells_exit_3(data_dir, tmp_path):
    # style class 'a' is too small in a 24-user population
    code = main(["matrix", "--data-dir", str(data_dir), "--out", str(tmp_path), "--tasks", "style",
                 "--device-configs", "desktop", "--modes", "free", "--models", "KNN",
                 "--selector-k", "10", "--jobs", "1", "--no-figures"])
    assert code == 3
    assert "failed" in (tmp_path / "style.md").read_text()


def test_report_rerenders_with_overlay(data_dir, tmp_path):
    assert main(matrix_args(data_dir, tmp_path, "--no-figures")) == 0
    assert main(["report", "--results", str(tmp_path), "--overlay", "--no-figures"]) == 0
    # published tables have KNN only for the regression tasks
    assert "(ref " in (tmp_path / "height.md").read_text()
    assert "(ref " not in (tmp_path / "gender.md").read_text()


def test_report_without_results_exit_2(tmp_path):
    assert main(["report", "--results", str(tmp_path)]) == 2


def test_selftest(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 6 and "FAIL" not in out
