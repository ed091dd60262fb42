"""Deterministic SVG rendering of composition trajectories.

The renderer is a pure function from parsed log rows to SVG text: no
timestamps, no library styling, every coordinate printed with repr. The
same log therefore always produces byte-identical files. Shown are the
gripper path (one polyline vertex per executed step), the box path for push
logs, waypoint markers, and a dot wherever a new latent took over.
"""

from __future__ import annotations

import numpy as np

_SIZE = 640
_MARGIN = 40


def _extent(rows, waypoints) -> float:
    """Half-width of the square world viewport covering all content."""
    pts = [r["gripper"] for r in rows]
    pts += [r["box"] for r in rows if r.get("box") is not None]
    if waypoints is not None:
        pts += [tuple(w) for w in np.asarray(waypoints, dtype=np.float64)]
    span = max(abs(float(c)) for p in pts for c in p) if pts else 0.0
    return max(0.3, span + 0.1)


class _Frame:
    """World -> pixel mapping for a square, y-up viewport."""

    def __init__(self, half: float):
        self.half = half
        self.scale = (_SIZE - 2 * _MARGIN) / (2 * half)

    def x(self, wx: float) -> float:
        return _MARGIN + (wx + self.half) * self.scale

    def y(self, wy: float) -> float:
        return _SIZE - _MARGIN - (wy + self.half) * self.scale

    def point(self, p) -> str:
        return f"{self.x(float(p[0]))!r},{self.y(float(p[1]))!r}"


def _polyline(frame: _Frame, points, css_class: str, color: str) -> str:
    coords = " ".join(frame.point(p) for p in points)
    return (f'<polyline class="{css_class}" points="{coords}" '
            f'fill="none" stroke="{color}" stroke-width="1.5"/>')


def render_trajectory_svg(rows, waypoints=None) -> str:
    """Render parsed trajectory rows (and optional waypoints) to SVG text.

    rows: dicts with keys round, step, gripper, optionally box. Rows must be
    in execution order.
    """
    if not rows:
        raise ValueError("empty composition log")
    frame = _Frame(_extent(rows, waypoints))
    body = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SIZE}" height="{_SIZE}" '
        f'viewBox="0 0 {_SIZE} {_SIZE}">',
        f'<rect width="{_SIZE}" height="{_SIZE}" fill="white"/>',
        f'<rect x="{_MARGIN}" y="{_MARGIN}" width="{_SIZE - 2 * _MARGIN}" '
        f'height="{_SIZE - 2 * _MARGIN}" fill="none" stroke="#cccccc"/>',
    ]
    if waypoints is not None:
        for i, w in enumerate(np.asarray(waypoints, dtype=np.float64)):
            cx, cy = frame.x(float(w[0])), frame.y(float(w[1]))
            body.append(f'<circle class="waypoint" cx="{cx!r}" cy="{cy!r}" r="7" '
                        f'fill="none" stroke="#d62728" stroke-width="1.5"/>')
            body.append(f'<text x="{cx + 9!r}" y="{cy - 9!r}" font-size="12" '
                        f'fill="#d62728">w{i + 1}</text>')

    body.append(_polyline(frame, [r["gripper"] for r in rows], "gripper", "#1f77b4"))
    if rows[0].get("box") is not None:
        body.append(_polyline(frame, [r["box"] for r in rows], "box", "#2ca02c"))

    previous_round = None
    for r in rows:
        if r["round"] != previous_round:
            previous_round = r["round"]
            gx, gy = r["gripper"]
            body.append(f'<circle class="switch" cx="{frame.x(float(gx))!r}" '
                        f'cy="{frame.y(float(gy))!r}" r="3" fill="#1f77b4"/>')
    body.append("</svg>")
    return "\n".join(body) + "\n"
