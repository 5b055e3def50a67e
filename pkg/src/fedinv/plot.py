"""Static SVG line charts built from summary logs, with no external assets."""

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

from fedinv.errors import FormatError

WIDTH, HEIGHT = 640, 400
MARGIN = {"left": 64, "right": 160, "top": 32, "bottom": 48}
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f")


def read_series(summary_path, metric):
    """``(t values, metric values)`` from a ``summary.csv``; NaN rows are dropped."""
    path = Path(summary_path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if rows and metric not in rows[0]:
        raise FormatError(f"{path}: no column {metric!r}")
    xs, ys = [], []
    for row in rows:
        y = float(row[metric])
        if math.isfinite(y):
            xs.append(float(row["t"]))
            ys.append(y)
    return xs, ys


def _ticks(lo, hi, count=5):
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * k / (count - 1) for k in range(count)]


def _num(x):
    return f"{x:.4g}"


def line_chart(series, title="", x_label="round", y_label=""):
    """Render ``{label: (xs, ys)}`` as SVG text; labels are drawn in sorted order."""
    labels = sorted(series)
    points = [(x, y) for lab in labels for x, y in zip(*series[lab])]
    if not points:
        raise FormatError("nothing to plot")
    x_lo, x_hi = min(p[0] for p in points), max(p[0] for p in points)
    y_lo, y_hi = min(p[1] for p in points), max(p[1] for p in points)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    left, top = MARGIN["left"], MARGIN["top"]
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(x):
        return left + pw * (x - x_lo) / (x_hi - x_lo)

    def sy(y):
        return top + ph * (1.0 - (y - y_lo) / (y_hi - y_lo))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{left}" y="20" font-size="13">{escape(title)}</text>',
           f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for x in _ticks(x_lo, x_hi):
        out.append(f'<text x="{sx(x):.2f}" y="{top + ph + 16}" text-anchor="middle">{_num(x)}</text>')
    for y in _ticks(y_lo, y_hi):
        out.append(f'<line x1="{left - 4}" y1="{sy(y):.2f}" x2="{left}" y2="{sy(y):.2f}" '
                   f'stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{sy(y) + 4:.2f}" text-anchor="end">{_num(y)}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{HEIGHT - 10}" text-anchor="middle">'
               f'{escape(x_label)}</text>')
    out.append(f'<text x="14" y="{top + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {top + ph / 2:.2f})">{escape(y_label)}</text>')
    for k, lab in enumerate(labels):
        color = PALETTE[k % len(PALETTE)]
        xs, ys = series[lab]
        path = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        ly = top + 14 * k + 6
        out.append(f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 32}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 36}" y="{ly + 4}">{escape(lab)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_runs(run_dirs, metric="ood_acc", title=None):
    """One series per run directory, labelled by the directory name."""
    series = {}
    for d in run_dirs:
        d = Path(d)
        label = d.name or str(d)
        if label in series:
            label = str(d)
        series[label] = read_series(d / "summary.csv", metric)
    return line_chart(series, title or metric, y_label=metric)
