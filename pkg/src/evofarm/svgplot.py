"""Stats CSV schema and self-contained SVG learning curves.

The per-generation stats file is the one output every training run writes
and every other tool reads, so the schema lives here in one place: a
version marker comment followed by a fixed header row.  Plots are emitted
as plain SVG text with no drawing dependency; one elite-mean curve is the
per-generation mean across runs with a min-max band behind it.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

__all__ = [
    "STATS_SCHEMA",
    "STATS_COLUMNS",
    "StatsRow",
    "write_stats_csv",
    "read_stats_csv",
    "render_learning_curves",
    "plot_learning_curves",
]

STATS_SCHEMA = "# stats v1"
STATS_COLUMNS = ("generation", "elite_mean", "topT_mean", "pop_mean",
                 "frames_total", "wall_seconds")


class StatsRow(NamedTuple):
    generation: int
    elite_mean: float
    topT_mean: float
    pop_mean: float
    frames_total: int
    wall_seconds: float


def write_stats_csv(path: str | Path, rows: Iterable) -> Path:
    """Write per-generation stats.

    ``rows`` may be StatsRow tuples or any objects with ``generation``,
    ``elite_mean``, ``top_mean``, ``pop_mean``, ``frames`` and
    ``wall_seconds`` attributes (the trainer's own stats records).
    Formatting is fixed so identical runs produce identical bytes.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(STATS_SCHEMA + "\n")
        writer = csv.writer(fh)
        writer.writerow(STATS_COLUMNS)
        for row in rows:
            if isinstance(row, StatsRow):
                gen, elite, top, pop, frames, wall = row
            else:
                gen = row.generation
                elite, top, pop = row.elite_mean, row.top_mean, row.pop_mean
                frames, wall = row.frames, row.wall_seconds
            writer.writerow([
                int(gen),
                "%.6f" % float(elite),
                "%.6f" % float(top),
                "%.6f" % float(pop),
                int(frames),
                "%.3f" % float(wall),
            ])
    return path


def read_stats_csv(path: str | Path) -> list[StatsRow]:
    path = Path(path)
    with path.open("r", newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != STATS_SCHEMA:
            raise ValueError(f"{path}: not a stats file (want '{STATS_SCHEMA}')")
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != STATS_COLUMNS:
            raise ValueError(f"{path}: unexpected column header {header}")
        rows = []
        for rec in reader:
            if not rec:
                continue
            if len(rec) != len(STATS_COLUMNS):
                raise ValueError(f"{path}: malformed row {rec}")
            rows.append(StatsRow(int(rec[0]), float(rec[1]), float(rec[2]),
                                 float(rec[3]), int(rec[4]), float(rec[5])))
    return rows


# -- SVG rendering ----------------------------------------------------------

_WIDTH, _HEIGHT = 960, 540
_ML, _MR, _MT, _MB = 72, 24, 48, 56  # margins around the plot area


def _nice_ticks(lo: float, hi: float, want: int = 5) -> list[float]:
    span = hi - lo
    if span <= 0:
        return [lo]
    raw = span / max(want, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = math.ceil(lo / step) * step
    ticks = []
    v = first
    while v <= hi + 1e-9 * span:
        ticks.append(round(v, 10))
        v += step
    return ticks


def _fmt(v: float) -> str:
    return ("%g" % round(v, 6))


def render_learning_curves(tables: Sequence[Sequence[StatsRow]],
                           title: str = "") -> str:
    """Render elite-mean learning curves to an SVG document string.

    Runs of different lengths are truncated to the shortest; the band is
    the per-generation min-max across runs and collapses for a single run.
    """
    if not tables:
        raise ValueError("no stats tables to plot")
    length = min(len(t) for t in tables)
    if length == 0:
        raise ValueError("stats table has no generations")
    gens = [row.generation for row in tables[0][:length]]
    for t in tables[1:]:
        if [row.generation for row in t[:length]] != gens:
            raise ValueError("generation columns differ between runs")
    series = [[row.elite_mean for row in t[:length]] for t in tables]
    mean = [sum(col) / len(col) for col in zip(*series)]
    lo_band = [min(col) for col in zip(*series)]
    hi_band = [max(col) for col in zip(*series)]

    x0, x1 = gens[0], gens[-1]
    y0, y1 = min(lo_band), max(hi_band)
    if y1 - y0 <= 0:
        y0, y1 = y0 - 1.0, y1 + 1.0
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw = _WIDTH - _ML - _MR
    ph = _HEIGHT - _MT - _MB

    def sx(g: float) -> float:
        if x1 == x0:
            return _ML + pw / 2.0
        return _ML + (g - x0) / (x1 - x0) * pw

    def sy(v: float) -> float:
        return _MT + (y1 - v) / (y1 - y0) * ph

    out = []
    out.append('<?xml version="1.0" encoding="UTF-8"?>')
    out.append(f'<svg xmlns="http://www.w3.org/2000/svg" '
               f'viewBox="0 0 {_WIDTH} {_HEIGHT}" '
               f'font-family="sans-serif" font-size="13">')
    out.append(f'<rect x="0" y="0" width="{_WIDTH}" height="{_HEIGHT}" '
               f'fill="white"/>')
    out.append(f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" '
               f'fill="none" stroke="#444" stroke-width="1"/>')

    for tv in _nice_ticks(y0, y1):
        y = sy(tv)
        out.append(f'<line x1="{_ML}" y1="{y:.2f}" x2="{_ML + pw}" '
                   f'y2="{y:.2f}" stroke="#ddd" stroke-width="1"/>')
        out.append(f'<text x="{_ML - 8}" y="{y + 4:.2f}" '
                   f'text-anchor="end">{_fmt(tv)}</text>')
    for tv in _nice_ticks(x0, x1):
        if tv != int(tv):
            continue  # generations are integers
        x = sx(tv)
        out.append(f'<line x1="{x:.2f}" y1="{_MT + ph}" x2="{x:.2f}" '
                   f'y2="{_MT + ph + 5}" stroke="#444" stroke-width="1"/>')
        out.append(f'<text x="{x:.2f}" y="{_MT + ph + 20}" '
                   f'text-anchor="middle">{_fmt(tv)}</text>')

    band = " ".join(f"{sx(g):.2f},{sy(v):.2f}" for g, v in zip(gens, hi_band))
    band += " " + " ".join(f"{sx(g):.2f},{sy(v):.2f}"
                           for g, v in zip(reversed(gens), reversed(lo_band)))
    out.append(f'<polygon points="{band}" fill="#a8c6e8" '
               f'fill-opacity="0.5" stroke="none"/>')
    line = " ".join(f"{sx(g):.2f},{sy(v):.2f}" for g, v in zip(gens, mean))
    out.append(f'<polyline points="{line}" fill="none" stroke="#1f5fa8" '
               f'stroke-width="2"/>')

    out.append(f'<text x="{_ML + pw / 2:.0f}" y="{_HEIGHT - 14}" '
               f'text-anchor="middle">generation</text>')
    out.append(f'<text x="18" y="{_MT + ph / 2:.0f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {_MT + ph / 2:.0f})">'
               f'elite mean score</text>')
    if title:
        out.append(f'<text x="{_WIDTH / 2:.0f}" y="28" text-anchor="middle" '
                   f'font-size="16">{title}</text>')
    out.append(f'<text x="{_ML + pw - 8}" y="{_MT + 18}" text-anchor="end" '
               f'fill="#666">{len(tables)} run(s), {length} generation(s)'
               f'</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_learning_curves(csv_paths: Sequence[str | Path],
                         out_path: str | Path, title: str = "") -> Path:
    tables = [read_stats_csv(p) for p in csv_paths]
    svg = render_learning_curves(tables, title=title)
    out_path = Path(out_path)
    out_path.write_text(svg)
    return out_path
