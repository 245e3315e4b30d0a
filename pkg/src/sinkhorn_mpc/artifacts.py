"""Run artifacts: trajectory CSV, diagnostic summary JSON, trajectory SVG.

CSV rows carry full double precision (17 significant digits) so
re-ingesting a file reproduces every statistic exactly.  The SVG writer
emits plain polyline markup (one panel per state dimension against time,
initial states as filled circles, targets as open circles) without any
plotting dependency.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError
from .sim import Trajectory

__all__ = [
    "write_trajectory_csv",
    "read_trajectory_csv",
    "write_summary_json",
    "write_trajectory_svg",
]


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_trajectory_csv(trajectory: Trajectory, path) -> None:
    """One row per (step, agent); the final step has no input columns."""
    K, N, n = trajectory.inputs.shape[0], trajectory.states.shape[1], trajectory.states.shape[2]
    m = trajectory.inputs.shape[2]
    header = (
        ["step", "time", "agent"]
        + [f"x{d}" for d in range(n)]
        + [f"u{d}" for d in range(m)]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(K + 1):
            for i in range(N):
                row = [str(k), _fmt(trajectory.times[k]), str(i)]
                row += [_fmt(v) for v in trajectory.states[k, i]]
                row += [_fmt(v) for v in trajectory.inputs[k, i]] if k < K else [""] * m
                writer.writerow(row)


def read_trajectory_csv(path):
    """Re-ingest a trajectory CSV; returns (times, states, inputs)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n = sum(1 for c in header if c.startswith("x"))
        m = sum(1 for c in header if c.startswith("u"))
        rows = list(reader)
    if not rows:
        raise InvalidArgumentError(f"{path} carries no data rows")
    steps = np.array([int(r[0]) for r in rows])
    agents = np.array([int(r[2]) for r in rows])
    K, N = steps.max(), agents.max() + 1
    times = np.zeros(K + 1)
    states = np.zeros((K + 1, N, n))
    inputs = np.zeros((K, N, m))
    for r in rows:
        k, i = int(r[0]), int(r[2])
        times[k] = float(r[1])
        states[k, i] = [float(v) for v in r[3 : 3 + n]]
        if k < K:
            inputs[k, i] = [float(v) for v in r[3 + n : 3 + n + m]]
    return times, states, inputs


def write_summary_json(summary: dict, path) -> None:
    """Flat key/value diagnostic summary."""
    def default(o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(f"not JSON-serializable: {type(o)}")

    Path(path).write_text(json.dumps(summary, indent=2, default=default) + "\n")


# --- SVG -------------------------------------------------------------

_PANEL_W, _PANEL_H, _MARGIN = 760, 240, 50


def _color(i: int, n: int) -> str:
    return f"hsl({(360 * i) // max(n, 1)},65%,42%)"


def _scale(lo: float, hi: float):
    if hi - lo < 1e-12:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def write_trajectory_svg(trajectory: Trajectory, targets, path) -> None:
    """Per-dimension time series of all agents with start/target markers."""
    targets = np.asarray(targets, dtype=float)
    times, states = trajectory.times, trajectory.states
    K1, N, n = states.shape
    width = _PANEL_W + 2 * _MARGIN
    height = n * (_PANEL_H + _MARGIN) + _MARGIN
    t_lo, t_hi = float(times[0]), float(times[-1])

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for d in range(n):
        top = _MARGIN + d * (_PANEL_H + _MARGIN)
        vals = np.concatenate([states[:, :, d].ravel(), targets[:, d].ravel()])
        v_lo, v_hi = _scale(float(vals.min()), float(vals.max()))

        def px(t):
            return _MARGIN + (t - t_lo) / (t_hi - t_lo) * _PANEL_W

        def py(v, top=top, v_lo=v_lo, v_hi=v_hi):
            return top + _PANEL_H - (v - v_lo) / (v_hi - v_lo) * _PANEL_H

        parts.append(
            f'<rect x="{_MARGIN}" y="{top}" width="{_PANEL_W}" height="{_PANEL_H}" '
            f'fill="none" stroke="#888"/>'
        )
        parts.append(
            f'<text x="{_MARGIN}" y="{top - 8}">state[{d}] vs time</text>'
        )
        parts.append(
            f'<text x="{_MARGIN}" y="{top + _PANEL_H + 16}">t={t_lo:g}</text>'
            f'<text x="{_MARGIN + _PANEL_W - 40}" y="{top + _PANEL_H + 16}">t={t_hi:g}</text>'
            f'<text x="{4}" y="{top + 12}">{v_hi:.3g}</text>'
            f'<text x="{4}" y="{top + _PANEL_H}">{v_lo:.3g}</text>'
        )
        for i in range(N):
            pts = " ".join(
                f"{px(t):.2f},{py(v):.2f}" for t, v in zip(times, states[:, i, d])
            )
            parts.append(
                f'<polyline points="{pts}" fill="none" stroke="{_color(i, N)}" '
                f'stroke-width="1" opacity="0.8"/>'
            )
        for i in range(N):
            parts.append(
                f'<circle cx="{px(t_lo):.2f}" cy="{py(states[0, i, d]):.2f}" r="3" '
                f'fill="{_color(i, N)}"/>'
            )
        for j in range(targets.shape[0]):
            parts.append(
                f'<circle cx="{px(t_hi):.2f}" cy="{py(targets[j, d]):.2f}" r="3" '
                f'fill="none" stroke="black"/>'
            )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
