import pytest

from fedinv import plot
from fedinv.errors import FormatError


def write_summary(path, rows):
    path.mkdir(parents=True, exist_ok=True)
    lines = ["t,global_loss,global_penalty_mean,id_acc,ood_acc"]
    lines += [f"{t},1.0,0.0,{a},{b}" for t, a, b in rows]
    (path / "summary.csv").write_text("\n".join(lines) + "\n")


def test_series_drops_nan(tmp_path):
    write_summary(tmp_path / "a", [(0, 0.5, "nan"), (10, 0.6, 0.7)])
    assert plot.read_series(tmp_path / "a" / "summary.csv", "ood_acc") == ([10.0], [0.7])
    with pytest.raises(FormatError):
        plot.read_series(tmp_path / "a" / "summary.csv", "nope")


def test_chart_is_deterministic_and_ordered(tmp_path):
    write_summary(tmp_path / "b", [(0, 0.1, 0.2), (5, 0.3, 0.4)])
    write_summary(tmp_path / "a", [(0, 0.5, 0.5), (5, 0.5, 0.5)])
    one = plot.plot_runs([tmp_path / "b", tmp_path / "a"])
    two = plot.plot_runs([tmp_path / "a", tmp_path / "b"])
    assert one == two and one.startswith("<svg") and one.count("<polyline") == 2
    assert one.index(">a</text>") < one.index(">b</text>")


def test_empty_chart_rejected():
    with pytest.raises(FormatError):
        plot.line_chart({"x": ([], [])})
