"""Plain CSV readers and writers for signals, events and derived series.

Floats are written with ``repr`` so that files round-trip exactly and
reruns are byte-identical.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .detectors import EventList
from .errors import ValidationError
from .msm import ComponentSeries, WeightTrack
from .nvm import AlphaTrack


class ParseError(ValidationError):
    """Malformed CSV content; the message names the offending line."""


def _fmt(v) -> str:
    return repr(float(v))


def _write(path, header, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_rows(path, expected_header):
    """Return data rows (lists of strings) with their 1-based line numbers.

    The header line is optional when it is the only difference.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        lines = list(csv.reader(fh))
    out = []
    for lineno, row in enumerate(lines, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if lineno == 1 and [c.strip() for c in row] == list(expected_header):
            continue
        out.append((lineno, [c.strip() for c in row]))
    return out


def _floats(path, rows, ncols):
    vals = []
    for lineno, row in rows:
        if len(row) != ncols:
            raise ParseError(f"{path}: line {lineno}: expected {ncols} column(s), got {len(row)}")
        try:
            vals.append([float(c) for c in row])
        except ValueError:
            raise ParseError(f"{path}: line {lineno}: not a number: {','.join(row)!r}") from None
    return np.array(vals, dtype=float).reshape(-1, ncols)


def write_signal(path, samples) -> None:
    _write(path, ["value"], ([_fmt(v)] for v in np.asarray(samples).ravel()))


def read_signal(path) -> np.ndarray:
    """Single-column numeric CSV with an optional ``value`` header."""
    x = _floats(path, _read_rows(path, ["value"]), 1)[:, 0]
    if not np.all(np.isfinite(x)):
        raise ParseError(f"{path}: non-finite values")
    return x


def write_truth(path, onsets_ms) -> None:
    _write(path, ["onset_ms"], ([_fmt(v)] for v in np.asarray(onsets_ms).ravel()))


def read_truth(path) -> EventList:
    t = _floats(path, _read_rows(path, ["onset_ms"]), 1)[:, 0]
    return EventList.from_times(t, "truth")


def write_events(path, events: EventList) -> None:
    _write(path, ["time_ms", "detector"], ([_fmt(t), events.detector] for t in events.times_ms))


def read_events(path) -> EventList:
    """Events CSV (``time_ms,detector``); a bare single column is accepted too."""
    rows = _read_rows(path, ["time_ms", "detector"])
    if rows and rows[0][0] == 1 and rows[0][1] == ["onset_ms"]:
        rows = rows[1:]
    times, label = [], ""
    for lineno, row in rows:
        if len(row) not in (1, 2):
            raise ParseError(f"{path}: line {lineno}: expected time_ms[,detector]")
        try:
            times.append(float(row[0]))
        except ValueError:
            raise ParseError(f"{path}: line {lineno}: not a number: {row[0]!r}") from None
        if len(row) == 2:
            label = row[1]
    return EventList.from_times(times, label)


def write_components(path, comp: ComponentSeries) -> None:
    rows = (
        [str(int(t)), _fmt(d), _fmt(f), str(int(g))]
        for t, d, f, g in zip(comp.times, comp.dynamic, comp.diffusive, comp.degenerate)
    )
    _write(path, ["index", "dynamic", "diffusive", "degenerate"], rows)


def write_weights(path, track: WeightTrack) -> None:
    header = ["index"] + [f"w{i + 1}" for i in range(track.grid.K)]
    rows = ([str(int(s))] + [_fmt(v) for v in w] for s, w in zip(track.starts, track.weights))
    _write(path, header, rows)


def write_alpha_track(path, track: AlphaTrack) -> None:
    rows = (
        [str(i), _fmt(a), _fmt(ll), str(int(c))]
        for i, (a, ll, c) in enumerate(zip(track.alpha, track.log_likelihood, track.converged))
    )
    _write(path, ["window_index", "alpha", "loglik", "converged"], rows)


def write_table(path, header, rows) -> None:
    _write(path, header, ([v if isinstance(v, str) else _fmt(v) for v in row] for row in rows))


def svg_lineplot(path, x, ys: dict, width: int = 800, height: int = 300, marks=()) -> None:
    """Minimal SVG line plot; ``ys`` maps labels to series, ``marks`` are
    x positions drawn as vertical lines."""
    x = np.asarray(x, dtype=float)
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    allv = np.concatenate([np.asarray(v, dtype=float) for v in ys.values()]) if ys else np.zeros(1)
    x0, x1 = (float(x.min()), float(x.max())) if x.size else (0.0, 1.0)
    y0, y1 = float(np.min(allv)), float(np.max(allv))
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def px(v):
        return 40 + (v - x0) / (x1 - x0) * (width - 50)

    def py(v):
        return height - 20 - (v - y0) / (y1 - y0) * (height - 30)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">']
    for m in marks:
        parts.append(f'<line x1="{px(m):.2f}" y1="10" x2="{px(m):.2f}" y2="{height - 20}" stroke="#999"/>')
    for (label, v), colour in zip(ys.items(), palette * (1 + len(ys) // len(palette))):
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, np.asarray(v, dtype=float)))
        parts.append(f'<polyline fill="none" stroke="{colour}" points="{pts}"><title>{label}</title></polyline>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
