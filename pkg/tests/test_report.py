import csv
import io

from keydyn.protocol import ResultTable
from keydyn.report import (
    REFERENCE,
    best_reference,
    plot_task,
    read_csv,
    reference_value,
    render_csv,
    render_markdown,
    summary_lines,
    write_results,
)


def sample_table():
    t = ResultTable(seeds=(0, 1))
    t.cells[("gender", "combined", "free", "CNN")] = [0.9, 0.8]
    t.cells[("gender", "combined", "free", "KNN")] = [0.7, 0.7]
    t.cells[("gender", "desktop", "fixed", "KNN")] = [0.6, 0.65]
    t.failures[("gender", "desktop", "fixed", "CNN")] = ["seed 0: Divergence: epoch 3"]
    t.cells[("age", "phone", "free", "FC")] = [2.6, 3.0]
    t.cells[("age", "phone", "free", "KNN")] = [2.5, 2.5]
    return t


def test_reference_values():
    assert reference_value("gender", "combined", "free", "CNN") == 93.02
    assert reference_value("age", "phone", "free", "FC") == 1.77
    assert best_reference("gender") == (("gender", "combined", "free", "CNN"), 93.02)
    assert best_reference("major")[1] == 87.80
    assert best_reference("style")[1] == 96.15
    assert best_reference("age")[1] == 1.77
    assert best_reference("height")[1] == 2.65
    assert all(v > 0 for v in REFERENCE.values())


def test_markdown_bold_best_and_overlay():
    md = render_markdown(sample_table(), "gender", overlay=True)
    assert "**85.00 ± 5.00** (ref 93.02)" in md
    assert "| combined | free |" in md
    assert "failed" in md and "Divergence" in md
    plain = render_markdown(sample_table(), "gender")
    assert "(ref" not in plain


def test_markdown_regression_bolds_lowest():
    md = render_markdown(sample_table(), "age")
    assert "**2.50 ± 0.00**" in md and "| 2.80 ± 0.20 |" in md


def test_csv_round_trip_and_fields():
    text = render_csv(sample_table(), "gender")
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == 4
    cnn = next(r for r in rows if r["algorithm"] == "CNN" and r["mode"] == "free")
    assert cnn["mean"] == "0.850000" and cnn["reference"] == "93.02" and cnn["n_seeds"] == "2"
    failed = next(r for r in rows if r["status"] == "failed")
    assert failed["mean"] == ""
    back = read_csv(text)
    assert render_csv(back, "gender") == text


def test_csv_deterministic():
    assert render_csv(sample_table(), "gender") == render_csv(sample_table(), "gender")


def test_write_results(tmp_path):
    written = write_results(sample_table(), tmp_path)
    names = sorted(p.name for p in written)
    assert names == ["age.csv", "age.md", "age.png", "gender.csv", "gender.md", "gender.png", "provenance.json"]
    assert (tmp_path / "gender.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_figures_byte_identical(tmp_path):
    a = plot_task(sample_table(), "gender", tmp_path / "a.png").read_bytes()
    b = plot_task(sample_table(), "gender", tmp_path / "b.png").read_bytes()
    assert a == b


def test_summary_lines():
    lines = summary_lines(sample_table())
    assert lines[0].startswith("gender: best combined/free/CNN = 85.00")
    assert "93.02" in lines[0]
    assert lines[1].startswith("age: best phone/free/KNN = 2.50")
