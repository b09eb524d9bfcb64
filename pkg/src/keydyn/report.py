"""Rendering of experiment matrices: Markdown and CSV tables, heatmap figures,
and an optional overlay of published reference values."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .protocol import MODEL_NAMES, ResultTable, Task

DEVICE_ORDER = ("desktop", "phone", "tablet", "combined")
MODE_ORDER = ("free", "fixed")

# Published test metrics per (task, device config, mode, model): accuracy in
# percent for classification, MAE in years / inches for regression.
REFERENCE = {}


def _ref(task, rows, models):
    for (device, mode), values in rows.items():
        for model, v in zip(models, values):
            REFERENCE[(task, device, mode, model)] = v


_CLS = ("NaiveBayes", "LinearSVM", "DecisionTree", "AdaBoost", "MLP1", "GBT", "RNN", "LSTM", "FC", "CNN")
_REG = ("LinearSVM", "KNN", "GBT", "RNN", "LSTM", "FC", "CNN")

_ref("gender", {
    ("desktop", "free"): (72.09, 81.39, 76.74, 81.39, 83.72, 83.72, 77.50, 72.50, 72.09, 86.04),
    ("desktop", "fixed"): (72.09, 86.04, 79.06, 81.39, 74.41, 79.06, 77.50, 77.50, 62.50, 82.50),
    ("phone", "free"): (53.48, 83.72, 67.44, 81.39, 76.74, 81.39, 80.00, 75.00, 67.44, 79.07),
    ("phone", "fixed"): (55.81, 76.74, 74.41, 74.41, 72.09, 72.09, 75.00, 85.00, 62.79, 88.37),
    ("tablet", "free"): (60.46, 79.06, 76.74, 76.74, 76.74, 79.06, 83.33, 72.50, 69.76, 79.06),
    ("tablet", "fixed"): (67.44, 72.09, 67.44, 72.09, 67.44, 67.44, 82.50, 75.00, 65.11, 79.07),
    ("combined", "free"): (67.44, 83.72, 79.06, 79.06, 76.74, 81.39, 80.00, 77.50, 74.42, 93.02),
    ("combined", "fixed"): (67.44, 79.06, 74.41, 81.39, 74.41, 72.09, 77.50, 62.50, 67.44, 83.72),
}, _CLS)
_ref("major", {
    ("desktop", "free"): (68.29, 78.04, 73.17, 73.17, 73.17, 73.17, 80.00, 75.00, 70.73, 78.04),
    ("desktop", "fixed"): (75.60, 70.73, 70.73, 75.60, 60.97, 78.04, 67.50, 70.00, 56.09, 85.37),
    ("phone", "free"): (60.97, 51.21, 70.73, 65.85, 53.65, 53.65, 75.00, 77.50, 68.29, 82.92),
    ("phone", "fixed"): (63.41, 60.97, 68.29, 58.53, 58.53, 53.65, 72.50, 77.50, 63.41, 78.04),
    ("tablet", "free"): (63.41, 53.65, 68.29, 73.17, 53.65, 58.53, 83.33, 82.50, 68.29, 82.92),
    ("tablet", "fixed"): (75.60, 56.09, 68.29, 73.17, 56.09, 73.17, 72.50, 85.00, 63.41, 78.04),
    ("combined", "free"): (65.85, 75.60, 73.17, 68.29, 65.85, 68.29, 85.00, 80.00, 73.17, 85.37),
    ("combined", "fixed"): (70.73, 73.17, 63.41, 68.29, 53.65, 60.97, 82.50, 72.50, 65.85, 87.80),
}, _CLS)
_ref("style", {
    ("desktop", "free"): (77.27, 93.18, 76.92, 90.38, 86.53, 81.81, 80.00, 83.33, 82.85, 91.42),
    ("desktop", "fixed"): (76.92, 90.38, 86.53, 90.38, 90.38, 88.46, 50.00, 48.00, 82.14, 66.07),
    ("phone", "free"): (78.84, 88.63, 82.69, 86.36, 86.53, 86.36, 83.33, 83.33, 80.70, 85.71),
    ("phone", "fixed"): (86.53, 96.15, 80.76, 84.61, 96.15, 86.53, 50.00, 42.00, 91.22, 49.12),
    ("tablet", "free"): (65.38, 95.55, 82.22, 82.69, 78.84, 80.00, 86.67, 83.33, 90.47, 82.85),
    ("tablet", "fixed"): (78.84, 90.38, 78.84, 82.69, 88.46, 88.46, 56.00, 44.00, 78.57, 57.14),
    ("combined", "free"): (76.92, 96.15, 82.69, 88.46, 92.30, 94.23, 83.33, 80.00, 84.21, 88.57),
    ("combined", "fixed"): (86.53, 94.23, 82.69, 90.38, 90.38, 90.38, 70.00, 56.00, 89.47, 64.91),
}, _CLS)
_ref("age", {
    ("desktop", "free"): (2.37, 2.38, 2.26, 5.53, 2.24, 2.26, 3.78),
    ("desktop", "fixed"): (2.43, 2.54, 2.27, 5.24, 2.04, 2.92, 4.97),
    ("phone", "free"): (2.46, 2.41, 2.59, 7.11, 2.03, 1.77, 6.10),
    ("phone", "fixed"): (2.38, 2.36, 2.42, 8.41, 2.48, 2.36, 5.44),
    ("tablet", "free"): (2.42, 2.47, 2.38, 6.19, 2.45, 2.39, 5.02),
    ("tablet", "fixed"): (2.43, 2.49, 2.34, 9.41, 2.73, 2.09, 5.20),
    ("combined", "free"): (2.37, 2.40, 2.21, 5.61, 2.23, 2.84, 5.41),
    ("combined", "fixed"): (2.32, 2.34, 2.27, 9.17, 2.11, 3.63, 4.33),
}, _REG)
_ref("height", {
    ("desktop", "free"): (2.97, 3.02, 2.84, 8.67, 10.70, 7.33, 7.21),
    ("desktop", "fixed"): (2.92, 3.20, 2.82, 9.54, 10.66, 8.63, 7.24),
    ("phone", "free"): (2.94, 3.04, 2.70, 10.43, 10.39, 4.75, 7.20),
    ("phone", "fixed"): (2.87, 2.65, 2.92, 10.55, 11.10, 5.72, 7.20),
    ("tablet", "free"): (2.85, 3.18, 3.23, 8.75, 9.57, 4.83, 7.22),
    ("tablet", "fixed"): (2.74, 2.95, 3.02, 8.42, 9.95, 5.74, 7.20),
    ("combined", "free"): (2.93, 2.99, 3.23, 8.52, 9.16, 7.06, 7.20),
    ("combined", "fixed"): (3.09, 3.01, 2.67, 7.79, 10.61, 11.57, 7.20),
}, _REG)


def reference_value(task: str, device: str, mode: str, model: str) -> float | None:
    return REFERENCE.get((task, device, mode, model))


def best_reference(task: str) -> tuple[tuple, float]:
    """Best published cell for a task (max accuracy or min MAE)."""
    cells = {k: v for k, v in REFERENCE.items() if k[0] == task}
    pick = min if Task(task).kind == "regress" else max
    key = pick(cells, key=cells.get)
    return key, cells[key]


def _scale(task: str) -> float:
    return 1.0 if Task(task).kind == "regress" else 100.0


def _models(table: ResultTable, task: str) -> list[str]:
    present = {k[3] for k in list(table.cells) + list(table.failures) if k[0] == task}
    return [m for m in MODEL_NAMES if m in present]


def _rows(table: ResultTable, task: str) -> list[tuple[str, str]]:
    present = {(k[1], k[2]) for k in list(table.cells) + list(table.failures) if k[0] == task}
    return [(d, m) for d in DEVICE_ORDER for m in MODE_ORDER if (d, m) in present]


def tasks_in(table: ResultTable) -> list[str]:
    present = {k[0] for k in list(table.cells) + list(table.failures)}
    return [t.value for t in Task if t.value in present]


def render_markdown(table: ResultTable, task: str, overlay: bool = False) -> str:
    """Device x mode rows, model columns; the best cell of each row in bold."""
    scale = _scale(task)
    regress = Task(task).kind == "regress"
    models = _models(table, task)
    unit = "MAE" if regress else "accuracy (%)"
    out = [f"## {task} ({unit}, {'lower' if regress else 'higher'} is better)", ""]
    out.append("| Device | Mode | " + " | ".join(models) + " |")
    out.append("|---|---|" + "---|" * len(models))
    for device, mode in _rows(table, task):
        stats = {m: table.value((task, device, mode, m)) for m in models}
        means = {m: s[0] for m, s in stats.items() if s is not None}
        best = (min if regress else max)(means.values()) if means else None
        cells = []
        for m in models:
            key = (task, device, mode, m)
            if key in table.failures and stats[m] is None:
                text = "failed"
            elif stats[m] is None:
                text = ""
            else:
                mu, sd = stats[m]
                text = f"{mu * scale:.2f}"
                if len(table.cells[key]) > 1:
                    text += f" ± {sd * scale:.2f}"
                if means[m] == best:
                    text = f"**{text}**"
            ref = reference_value(task, device, mode, m)
            if overlay and ref is not None:
                text += f" (ref {ref:.2f})"
            cells.append(text)
        out.append(f"| {device} | {mode} | " + " | ".join(cells) + " |")
    if table.failures:
        failed = sorted(k for k in table.failures if k[0] == task)
        if failed:
            out += ["", "Failed cells:", ""]
            out += [f"- {'/'.join(k[1:])}: {'; '.join(table.failures[k])}" for k in failed]
    return "\n".join(out) + "\n"


CSV_FIELDS = ("task", "device_config", "mode", "algorithm", "status", "n_seeds", "mean", "std", "per_seed", "reference")


def render_csv(table: ResultTable, task: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for device, mode in _rows(table, task):
        for m in _models(table, task):
            key = (task, device, mode, m)
            if key not in table.cells and key not in table.failures:
                continue
            ref = reference_value(task, device, mode, m)
            vals = table.cells.get(key, [])
            stat = table.value(key)
            w.writerow([
                task, device, mode, m,
                "failed" if key in table.failures else "ok",
                len(vals),
                f"{stat[0]:.6f}" if stat else "",
                f"{stat[1]:.6f}" if stat else "",
                ";".join(f"{v:.6f}" for v in vals),
                "" if ref is None else f"{ref:.2f}",
            ])
    return buf.getvalue()


def read_csv(text: str, table: ResultTable | None = None) -> ResultTable:
    """Rebuild a ResultTable from CSV written by ``render_csv``."""
    table = table or ResultTable()
    for row in csv.DictReader(io.StringIO(text)):
        key = (row["task"], row["device_config"], row["mode"], row["algorithm"])
        if row["per_seed"]:
            table.cells[key] = [float(v) for v in row["per_seed"].split(";")]
        if row["status"] == "failed":
            table.failures[key] = ["failed in original run"]
    return table


def plot_task(table: ResultTable, task: str, path) -> Path:
    """Heatmap of mean metric per (device, mode) x model."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    models = _models(table, task)
    rows = _rows(table, task)
    scale = _scale(task)
    grid = np.full((len(rows), len(models)), np.nan)
    for i, (d, m) in enumerate(rows):
        for j, a in enumerate(models):
            v = table.value((task, d, m, a))
            if v is not None:
                grid[i, j] = v[0] * scale
    fig, ax = plt.subplots(figsize=(1.1 * len(models) + 2.5, 0.55 * len(rows) + 1.8))
    cmap = "viridis_r" if Task(task).kind == "regress" else "viridis"
    im = ax.imshow(grid, cmap=cmap, aspect="auto")
    ax.set_xticks(range(len(models)), models, rotation=45, ha="right")
    ax.set_yticks(range(len(rows)), [f"{d}-{m}" for d, m in rows])
    for i in range(len(rows)):
        for j in range(len(models)):
            if np.isfinite(grid[i, j]):
                ax.text(j, i, f"{grid[i, j]:.1f}", ha="center", va="center", fontsize=7, color="w")
    fig.colorbar(im, ax=ax, label="MAE" if scale == 1.0 else "accuracy (%)")
    ax.set_title(task)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def write_results(table: ResultTable, out_dir, overlay: bool = False, formats: str = "both",
                  figures: bool = True, provenance: bool = True) -> list[Path]:
    """Write results/<task>.md, .csv, .png and provenance.json under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for task in tasks_in(table):
        if formats in ("md", "both"):
            p = out / f"{task}.md"
            p.write_text(render_markdown(table, task, overlay), encoding="utf-8")
            written.append(p)
        if formats in ("csv", "both"):
            p = out / f"{task}.csv"
            p.write_text(render_csv(table, task), encoding="utf-8")
            written.append(p)
        if figures:
            written.append(plot_task(table, task, out / f"{task}.png"))
    if provenance:
        p = out / "provenance.json"
        doc = {"seeds": list(table.seeds), "cells": table.provenance,
               "failures": {"/".join(k): v for k, v in sorted(table.failures.items())}}
        p.write_text(json.dumps(doc, indent=1, sort_keys=True, default=_json_default), encoding="utf-8")
        written.append(p)
    return written


def _json_default(obj):
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def summary_lines(table: ResultTable, tasks: Sequence[str] | None = None) -> list[str]:
    """Best cell per task next to the best published cell."""
    lines = []
    for task in tasks or tasks_in(table):
        regress = Task(task).kind == "regress"
        cells = {k: table.value(k)[0] for k in table.cells if k[0] == task}
        if not cells:
            continue
        key = (min if regress else max)(cells, key=cells.get)
        ref_key, ref = best_reference(task)
        scale = _scale(task)
        lines.append(f"{task}: best {'/'.join(key[1:])} = {cells[key] * scale:.2f}; "
                     f"published best {'/'.join(ref_key[1:])} = {ref:.2f}")
    return lines
