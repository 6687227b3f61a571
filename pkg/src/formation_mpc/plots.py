"""Deterministic SVG plots of a trajectory log.

Text-based output with fixed float formatting: identical logs render to
byte-identical files, so plot regeneration from a CSV can be compared
directly against the files the simulation run wrote. No timestamps, no
randomized ids.
"""

from __future__ import annotations

import numpy as np

from .sim_harness import TrajectoryLog

_WIDTH, _HEIGHT = 720.0, 540.0
_MARGIN = 60.0
_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
            "#8c564b", "#e377c2", "#7f7f7f")


def _num(x: float) -> str:
    return f"{x:.6g}"


class _Axes:
    """Linear map from data coordinates to the SVG canvas (y up)."""

    def __init__(self, x_lo, x_hi, y_lo, y_hi):
        def pad(lo, hi):
            span = hi - lo
            if span <= 0:
                span = max(abs(lo), 1.0)
                lo, hi = lo - 0.5 * span, hi + 0.5 * span
            return lo - 0.05 * span, hi + 0.05 * span

        self.x_lo, self.x_hi = pad(x_lo, x_hi)
        self.y_lo, self.y_hi = pad(y_lo, y_hi)

    def x(self, v: float) -> float:
        frac = (v - self.x_lo) / (self.x_hi - self.x_lo)
        return _MARGIN + frac * (_WIDTH - 2 * _MARGIN)

    def y(self, v: float) -> float:
        frac = (v - self.y_lo) / (self.y_hi - self.y_lo)
        return _HEIGHT - _MARGIN - frac * (_HEIGHT - 2 * _MARGIN)

    def scale(self, length: float) -> float:
        return length / (self.x_hi - self.x_lo) * (_WIDTH - 2 * _MARGIN)


def _open_svg(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_num(_WIDTH)}" '
        f'height="{_num(_HEIGHT)}" viewBox="0 0 {_num(_WIDTH)} {_num(_HEIGHT)}">',
        f'<rect width="{_num(_WIDTH)}" height="{_num(_HEIGHT)}" fill="white"/>',
        f'<text x="{_num(_WIDTH / 2)}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="16">{title}</text>',
    ]


def _frame(ax: _Axes, x_label: str, y_label: str) -> list[str]:
    parts = [
        f'<rect x="{_num(_MARGIN)}" y="{_num(_MARGIN)}" '
        f'width="{_num(_WIDTH - 2 * _MARGIN)}" height="{_num(_HEIGHT - 2 * _MARGIN)}" '
        f'fill="none" stroke="black"/>',
        f'<text x="{_num(_WIDTH / 2)}" y="{_num(_HEIGHT - 16)}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{x_label}</text>',
        f'<text x="18" y="{_num(_HEIGHT / 2)}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 18 {_num(_HEIGHT / 2)})">{y_label}</text>',
    ]
    for i in range(5):
        fx = ax.x_lo + i / 4 * (ax.x_hi - ax.x_lo)
        fy = ax.y_lo + i / 4 * (ax.y_hi - ax.y_lo)
        px, py = ax.x(fx), ax.y(fy)
        parts.append(f'<line x1="{_num(px)}" y1="{_num(_HEIGHT - _MARGIN)}" '
                     f'x2="{_num(px)}" y2="{_num(_HEIGHT - _MARGIN + 6)}" stroke="black"/>')
        parts.append(f'<text x="{_num(px)}" y="{_num(_HEIGHT - _MARGIN + 20)}" '
                     f'text-anchor="middle" font-family="sans-serif" font-size="10">'
                     f'{_num(fx)}</text>')
        parts.append(f'<line x1="{_num(_MARGIN - 6)}" y1="{_num(py)}" '
                     f'x2="{_num(_MARGIN)}" y2="{_num(py)}" stroke="black"/>')
        parts.append(f'<text x="{_num(_MARGIN - 10)}" y="{_num(py + 3)}" '
                     f'text-anchor="end" font-family="sans-serif" font-size="10">'
                     f'{_num(fy)}</text>')
    return parts


def _polyline(ax: _Axes, xs, ys, color: str, dash: str | None = None) -> str:
    pts = " ".join(f"{_num(ax.x(x))},{_num(ax.y(y))}" for x, y in zip(xs, ys))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return (f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="1.5"{extra}/>')


def render_xy(log: TrajectoryLog) -> str:
    """Top-down view: vehicle paths, keep-out circles, start markers."""
    xs = log.states[:, :, 0]
    ys = log.states[:, :, 1]
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    for cx, cy, r in log.obstacle_circles:
        x_lo, x_hi = min(x_lo, cx - r), max(x_hi, cx + r)
        y_lo, y_hi = min(y_lo, cy - r), max(y_hi, cy + r)
    ax = _Axes(x_lo, x_hi, y_lo, y_hi)

    parts = _open_svg("Horizontal trajectories")
    parts += _frame(ax, "x [m]", "y [m]")
    for cx, cy, r in log.obstacle_circles:
        parts.append(f'<circle cx="{_num(ax.x(cx))}" cy="{_num(ax.y(cy))}" '
                     f'r="{_num(ax.scale(r))}" fill="#f4cccc" stroke="#a61c00"/>')
    for v in range(log.vehicles):
        color = _PALETTE[v % len(_PALETTE)]
        parts.append(_polyline(ax, xs[:, v], ys[:, v], color))
        parts.append(f'<circle cx="{_num(ax.x(xs[0, v]))}" cy="{_num(ax.y(ys[0, v]))}" '
                     f'r="4" fill="{color}"/>')
        parts.append(f'<text x="{_num(_WIDTH - _MARGIN + 6)}" '
                     f'y="{_num(_MARGIN + 14 + 16 * v)}" font-family="sans-serif" '
                     f'font-size="11" fill="{color}">v{v}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_formation_error(log: TrajectoryLog) -> str:
    """Per-vehicle formation error against time, with the per-step RMS."""
    t = log.times
    errs = log.formation_errors
    rms = np.sqrt(np.mean(errs ** 2, axis=1))
    hi = max(float(errs.max()), float(rms.max()), 1e-9)
    ax = _Axes(float(t[0]), float(t[-1]) if t[-1] > t[0] else float(t[0]) + 1.0,
               0.0, hi)

    parts = _open_svg("Formation error")
    parts += _frame(ax, "time [s]", "error [m]")
    for v in range(log.vehicles):
        color = _PALETTE[v % len(_PALETTE)]
        parts.append(_polyline(ax, t, errs[:, v], color))
        parts.append(f'<text x="{_num(_WIDTH - _MARGIN + 6)}" '
                     f'y="{_num(_MARGIN + 14 + 16 * v)}" font-family="sans-serif" '
                     f'font-size="11" fill="{color}">v{v}</text>')
    parts.append(_polyline(ax, t, rms, "black", dash="4 3"))
    parts.append(f'<text x="{_num(_WIDTH - _MARGIN + 6)}" '
                 f'y="{_num(_MARGIN + 14 + 16 * log.vehicles)}" '
                 f'font-family="sans-serif" font-size="11">rms</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_plots(log: TrajectoryLog, out_dir) -> list:
    """Write both SVG files into out_dir; returns the paths written."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    targets = [(out / "xy_trajectories.svg", render_xy(log)),
               (out / "formation_error.svg", render_formation_error(log))]
    for path, text in targets:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return [p for p, _ in targets]
