"""Command-line entry point: synth, summary, extract, train, matrix, report,
selftest and predict.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure (including incomplete matrices).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ml_models, protocol, report, selftest, synth
from .errors import ConfigError, DataError, KeydynError, NumericError
from .features import DeviceConfig, write_feature_csv
from .ingest import Mode, dataset_summary, load_dataset, resolve_data_dir
from .neural import ARCHITECTURES, TrainedNetwork

log = logging.getLogger("keydyn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@dataclass
class RunConfig:
    data_dir: str | None = None
    out_dir: str = "results"
    tasks: list = field(default_factory=lambda: [t.value for t in protocol.Task])
    device_configs: list = field(default_factory=lambda: [d.value for d in DeviceConfig])
    modes: list = field(default_factory=lambda: [m.value for m in Mode])
    models: list = field(default_factory=lambda: ["KNN", "LinearSVM", "GBT"])
    seeds: list = field(default_factory=lambda: [0])
    caps: dict | None = None
    selector_k: list = field(default_factory=lambda: [10, 30, 100])
    format: str = "both"
    jobs: int = 0
    overlay: bool = False
    figures: bool = True
    grids: dict = field(default_factory=dict)
    n_folds: int = 5

    def __post_init__(self):
        for name in ("tasks", "device_configs", "modes", "models", "seeds", "selector_k"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must be a non-empty list")
        try:
            [protocol.Task(t) for t in self.tasks]
            [DeviceConfig(d) for d in self.device_configs]
            [Mode(m) for m in self.modes]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for m in self.models:
            if m not in protocol.MODEL_NAMES:
                raise ConfigError(f"unknown model {m!r}")
        if self.format not in ("md", "csv", "both"):
            raise ConfigError(f"format must be md, csv or both, not {self.format!r}")
        for m in self.grids:
            if m not in self.models:
                raise ConfigError(f"grid given for unused model {m!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**doc)

    def recipes(self) -> list[protocol.ModelRecipe]:
        out = []
        for m in self.models:
            base = protocol.ModelRecipe.default(m)
            grid = self.grids.get(m, base.grid)
            out.append(protocol.ModelRecipe(m, grid))
        return out


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


def _run_config(args) -> RunConfig:
    doc = _load_config(getattr(args, "config", None))
    overrides = {
        "data_dir": getattr(args, "data_dir", None),
        "out_dir": getattr(args, "out", None),
        "tasks": getattr(args, "tasks", None),
        "device_configs": getattr(args, "device_configs", None),
        "modes": getattr(args, "modes", None),
        "models": getattr(args, "models", None),
        "selector_k": getattr(args, "selector_k", None),
        "format": getattr(args, "format", None),
        "jobs": getattr(args, "jobs", None),
    }
    if getattr(args, "seeds", None) is not None:
        overrides["seeds"] = list(range(args.seed, args.seed + args.seeds))
    if getattr(args, "overlay", False):
        overrides["overlay"] = True
    if getattr(args, "no_figures", False):
        overrides["figures"] = False
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(doc)


def _dataset(flag):
    data_dir = resolve_data_dir(flag)
    if data_dir is None:
        raise ConfigError("no data directory: pass --data-dir or set KEYDYN_DATA_DIR")
    return load_dataset(data_dir)


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    cfg = synth.GeneratorConfig(n_users=args.users, keystrokes_per_stream=args.keystrokes,
                                signal_strength=args.signal, seed=args.seed)
    ev, lab = synth.write(cfg, args.out)
    print(f"wrote {ev} and {lab}")
    return 0


def cmd_summary(args) -> int:
    ds = _dataset(args.data_dir)
    doc = {"summary": dataset_summary(ds), "build_report": dataclasses.asdict(ds.report)}
    print(json.dumps(doc, indent=2, sort_keys=True, default=list))
    return 0


def cmd_extract(args) -> int:
    ds = _dataset(args.data_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    store = protocol.FeatureStore(ds)
    users = ds.users
    for dc in args.device_configs:
        for mode in args.modes:
            X, M, names, _ = store.matrix(DeviceConfig(dc), Mode(mode), users, users)
            feats, mask = write_feature_csv(users, names, X, M)
            (out / f"features_{dc}_{mode}.csv").write_text(feats, encoding="utf-8")
            (out / f"mask_{dc}_{mode}.csv").write_text(mask, encoding="utf-8")
            print(f"{dc}/{mode}: {len(users)} users x {len(names)} descriptors")
    return 0


def cmd_train(args) -> int:
    ds = _dataset(args.data_dir)
    recipe = protocol.ModelRecipe.default(args.model)
    cfg = protocol.ExperimentConfig(protocol.Task(args.task), DeviceConfig(args.device_config),
                                    Mode(args.mode), recipe, tuple(args.selector_k), args.seed)
    artifacts: dict = {}
    metric, prov = protocol.run_experiment(cfg, ds, artifacts=artifacts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{args.task}_{args.device_config}_{args.mode}_{args.model}_seed{args.seed}"
    (out / f"{stem}.provenance.json").write_text(
        json.dumps(prov, indent=1, sort_keys=True, default=report._json_default), encoding="utf-8")
    model = artifacts["model"]
    if args.model in ARCHITECTURES:
        model_json = model.to_json()
        (out / f"{stem}.loss.csv").write_text(model.loss_csv(), encoding="utf-8")
    else:
        model_json = ml_models.model_to_json(model)
    (out / f"{stem}.model.json").write_text(model_json, encoding="utf-8")
    test_csv, _ = write_feature_csv(artifacts["test_users"], artifacts["names"], artifacts["X_test"],
                                    np.zeros_like(artifacts["X_test"], dtype=bool))
    (out / f"{stem}.test_features.csv").write_text(test_csv, encoding="utf-8")
    print(f"{prov['metric_name']} = {metric:.4f} (winner k={prov['winner']['k']}, "
          f"params={prov['winner']['params']}); outputs in {out}")
    return 0


def cmd_predict(args) -> int:
    from .features import read_feature_csv

    text = Path(args.model).read_text(encoding="utf-8")
    doc = json.loads(text)
    model = TrainedNetwork.from_json(text) if "network" in doc else ml_models.model_from_json(text)
    users, _, X = read_feature_csv(Path(args.features).read_text(encoding="utf-8"))
    pred = model.predict(X)
    print("user_id,prediction")
    for u, p in zip(users, pred):
        print(f"{u},{p}")
    return 0


def cmd_matrix(args) -> int:
    rc = _run_config(args)
    ds = _dataset(rc.data_dir)
    jobs = rc.jobs or protocol.default_jobs()
    table = protocol.full_matrix(
        ds, [protocol.Task(t) for t in rc.tasks], rc.recipes(), rc.seeds,
        [DeviceConfig(d) for d in rc.device_configs], [Mode(m) for m in rc.modes], jobs=jobs,
        selector_k=tuple(rc.selector_k), caps=rc.caps, n_folds=rc.n_folds,
    )
    written = report.write_results(table, rc.out_dir, rc.overlay, rc.format, rc.figures)
    for line in report.summary_lines(table):
        print(line)
    leaks = protocol.audit_leakage(table.provenance)
    for leak in leaks:
        print(f"LEAK {leak}", file=sys.stderr)
    print(f"wrote {len(written)} files to {rc.out_dir}")
    if table.failures:
        print(f"{len(table.failures)} cells failed", file=sys.stderr)
        return 3
    return 3 if leaks else 0


def cmd_report(args) -> int:
    src = Path(args.results)
    csvs = sorted(src.glob("*.csv"))
    csvs = [p for p in csvs if p.stem in {t.value for t in protocol.Task}]
    if not csvs:
        raise FileNotFoundError(src / "<task>.csv")
    table = protocol.ResultTable()
    for p in csvs:
        report.read_csv(p.read_text(encoding="utf-8"), table)
    out = Path(args.out or src)
    written = report.write_results(table, out, args.overlay, "md", not args.no_figures, provenance=False)
    for line in report.summary_lines(table):
        print(line)
    print(f"wrote {len(written)} files to {out}")
    return 0


def cmd_selftest(args) -> int:
    results = selftest.run(args.seed)
    for name, ok, detail, secs in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail} ({secs:.2f}s)")
    return 0 if all(r[1] for r in results) else 3


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="keydyn", description="Soft-biometric inference from keystroke dynamics.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic events/labels dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--users", type=int, default=117)
    s.add_argument("--signal", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--keystrokes", type=int, default=400, help="keystrokes per (device, mode) stream")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("summary", help="print dataset statistics")
    s.add_argument("--data-dir")
    s.set_defaults(func=cmd_summary)

    s = sub.add_parser("extract", help="write feature and mask CSVs (vocabulary fit on all users)")
    s.add_argument("--data-dir")
    s.add_argument("--out", required=True)
    s.add_argument("--device-configs", type=_csv_list, default=[d.value for d in DeviceConfig])
    s.add_argument("--modes", type=_csv_list, default=[m.value for m in Mode])
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("train", help="run one experiment and save provenance and model")
    s.add_argument("--data-dir")
    s.add_argument("--out", required=True)
    s.add_argument("--task", required=True, choices=[t.value for t in protocol.Task])
    s.add_argument("--device-config", default="desktop", choices=[d.value for d in DeviceConfig])
    s.add_argument("--mode", default="free", choices=[m.value for m in Mode])
    s.add_argument("--model", default="KNN", choices=list(protocol.MODEL_NAMES))
    s.add_argument("--selector-k", type=_int_list, default=[10, 30, 100])
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="predict from a saved model and a feature CSV")
    s.add_argument("--model", required=True)
    s.add_argument("--features", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("matrix", help="run the task x device x mode x model matrix")
    s.add_argument("--config")
    s.add_argument("--data-dir")
    s.add_argument("--out")
    s.add_argument("--tasks", type=_csv_list)
    s.add_argument("--device-configs", type=_csv_list)
    s.add_argument("--modes", type=_csv_list)
    s.add_argument("--models", type=_csv_list)
    s.add_argument("--selector-k", type=_int_list)
    s.add_argument("--seeds", type=int, help="number of seeded splits, starting at --seed")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jobs", type=int, help="worker processes (default: logical cores)")
    s.add_argument("--format", choices=["md", "csv", "both"])
    s.add_argument("--overlay", action="store_true", help="annotate cells with published values")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_matrix)

    s = sub.add_parser("report", help="re-render Markdown tables and figures from result CSVs")
    s.add_argument("--results", default="results")
    s.add_argument("--out")
    s.add_argument("--overlay", action="store_true")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("selftest", help="gradient checks and oracle comparisons")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except KeydynError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
