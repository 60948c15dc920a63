"""Learning curves from metrics CSVs, written as standalone SVG.

Each input CSV is one series. Per-seed files (or concatenations of several)
are averaged per epoch; aggregate files use their ``*_mean``/``*_std``
columns directly. The mean is drawn as a ``<polyline>`` and +/- one std as a
translucent ``<polygon>`` band.
"""

from __future__ import annotations

import csv
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=150, top=30, bottom=50)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


class SchemaMismatchError(ValueError):
    pass


def _read(path):
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        return tuple(reader.fieldnames or ()), list(reader)


def load_series(path, metric: str):
    """Return ``(epochs, mean, std)`` arrays for ``metric`` from one CSV."""
    header, rows = _read(path)
    if f"{metric}_mean" in header:
        epochs = np.array([float(r["epoch"]) for r in rows])
        mean = np.array([float(r[f"{metric}_mean"]) for r in rows])
        std = np.array([float(r[f"{metric}_std"]) for r in rows])
        return epochs, mean, std
    if metric not in header:
        raise SchemaMismatchError(f"{path}: no column {metric!r}")
    groups = {}
    for r in rows:
        groups.setdefault(float(r["epoch"]), []).append(float(r[metric]))
    epochs = np.array(sorted(groups))
    mean = np.array([np.mean(groups[e]) for e in epochs])
    std = np.array([np.std(groups[e]) for e in epochs])
    return epochs, mean, std


def emit_curves(csv_paths, output_path, metric: str = "final_distance", labels=None,
                title: str | None = None) -> Path:
    csv_paths = [Path(p) for p in csv_paths]
    if not csv_paths:
        raise ValueError("no CSV files given")
    headers = {_read(p)[0] for p in csv_paths}
    if len(headers) != 1:
        raise SchemaMismatchError("CSV files do not share a header")
    labels = list(labels) if labels else [p.parent.name + "/" + p.stem for p in csv_paths]
    series = [load_series(p, metric) for p in csv_paths]

    xs = np.concatenate([s[0] for s in series])
    lo = np.concatenate([s[1] - s[2] for s in series])
    hi = np.concatenate([s[1] + s[2] for s in series])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(np.nanmin(lo)), float(np.nanmax(hi))
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        pad = abs(y0) * 0.1 or 1.0
        y0, y1 = y0 - pad, y1 + pad

    plot_w = WIDTH - MARGIN["left"] - MARGIN["right"]
    plot_h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return MARGIN["left"] + (x - x0) / (x1 - x0) * plot_w

    def py(y):
        return MARGIN["top"] + (y1 - y) / (y1 - y0) * plot_h

    def pts(x, y):
        return " ".join(f"{px(a):.3f},{py(b):.3f}" for a, b in zip(x, y))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    left, bottom = MARGIN["left"], MARGIN["top"] + plot_h
    parts.append(f'<line class="axis" x1="{left}" y1="{bottom}" x2="{left + plot_w}" y2="{bottom}" stroke="black"/>')
    parts.append(f'<line class="axis" x1="{left}" y1="{MARGIN["top"]}" x2="{left}" y2="{bottom}" stroke="black"/>')
    for frac in np.linspace(0.0, 1.0, 5):
        xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
        parts.append(f'<text x="{px(xv):.1f}" y="{bottom + 16}" font-size="11" text-anchor="middle">{xv:.3g}</text>')
        parts.append(f'<text x="{left - 6}" y="{py(yv) + 4:.1f}" font-size="11" text-anchor="end">{yv:.3g}</text>')
    parts.append(f'<text x="{left + plot_w / 2:.1f}" y="{HEIGHT - 12}" font-size="13" text-anchor="middle">epoch</text>')
    parts.append(f'<text x="16" y="{MARGIN["top"] + plot_h / 2:.1f}" font-size="13" text-anchor="middle" '
                 f'transform="rotate(-90 16 {MARGIN["top"] + plot_h / 2:.1f})">{escape(metric)}</text>')
    if title:
        parts.append(f'<text x="{left + plot_w / 2:.1f}" y="18" font-size="14" text-anchor="middle">{escape(title)}</text>')

    for i, ((ex, mean, std), label) in enumerate(zip(series, labels)):
        color = COLORS[i % len(COLORS)]
        band = pts(ex, mean + std) + " " + pts(ex[::-1], (mean - std)[::-1])
        parts.append(f'<polygon class="band" points="{band}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        parts.append(f'<polyline class="series" data-label="{escape(label)}" points="{pts(ex, mean)}" '
                     f'fill="none" stroke="{color}" stroke-width="2"/>')
        if len(ex) == 1:
            parts.append(f'<circle cx="{px(ex[0]):.3f}" cy="{py(mean[0]):.3f}" r="3" fill="{color}"/>')
        ly = MARGIN["top"] + 14 + 18 * i
        lx = left + plot_w + 12
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 24}" y="{ly}" font-size="11">{escape(label)}</text>')
    parts.append("</svg>")

    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    output_path.write_text("\n".join(parts) + "\n")
    return output_path
