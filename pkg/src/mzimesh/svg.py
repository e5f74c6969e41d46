"""Minimal SVG writer for heatmaps and line charts."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np


class Svg:
    def __init__(self, width: float, height: float):
        self.width = width
        self.height = height
        self.items: list[str] = []

    def rect(self, x, y, w, h, fill="none", stroke="none", stroke_width=1.0):
        self.items.append(
            f'<rect x="{x:.3f}" y="{y:.3f}" width="{w:.3f}" height="{h:.3f}" '
            f'fill="{fill}" stroke="{stroke}" stroke-width="{stroke_width:g}"/>'
        )

    def line(self, x1, y1, x2, y2, stroke="black", stroke_width=1.0):
        self.items.append(
            f'<line x1="{x1:.3f}" y1="{y1:.3f}" x2="{x2:.3f}" y2="{y2:.3f}" '
            f'stroke="{stroke}" stroke-width="{stroke_width:g}"/>'
        )

    def polyline(self, points, stroke="black", stroke_width=1.0):
        pts = " ".join(f"{x:.3f},{y:.3f}" for x, y in points)
        self.items.append(
            f'<polyline points="{pts}" fill="none" stroke="{stroke}" stroke-width="{stroke_width:g}"/>'
        )

    def text(self, x, y, s, size=12, anchor="start", rotate=None):
        tr = f' transform="rotate({rotate:g} {x:.3f} {y:.3f})"' if rotate is not None else ""
        self.items.append(
            f'<text x="{x:.3f}" y="{y:.3f}" font-size="{size:g}" font-family="sans-serif" '
            f'text-anchor="{anchor}"{tr}>{escape(str(s))}</text>'
        )

    def to_string(self) -> str:
        body = "\n  ".join(self.items)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width:g}" height="{self.height:g}" '
            f'viewBox="0 0 {self.width:g} {self.height:g}">\n  {body}\n</svg>\n'
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_string())


def _color(v: float) -> str:
    """White (0) to dark blue (1)."""
    v = float(np.clip(v, 0.0, 1.0))
    r = int(round(255 * (1 - 0.85 * v)))
    g = int(round(255 * (1 - 0.65 * v)))
    b = int(round(255 * (1 - 0.25 * v)))
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap(grid, x_values, y_values, x_label="", y_label="", title="",
            threshold: float | None = None, cell: float = 16.0) -> Svg:
    """Heatmap of ``grid[i, j]`` at (x_values[i], y_values[j]) with values in [0, 1].

    With ``threshold`` set, the boundary of the cells at or above it is outlined.
    """
    grid = np.asarray(grid, dtype=float)
    nx, ny = grid.shape
    left, top, pad = 60.0, 30.0, 40.0
    svg = Svg(left + nx * cell + pad, top + ny * cell + pad + 10)
    if title:
        svg.text(left + nx * cell / 2, 18, title, size=13, anchor="middle")

    def xy(i, j):
        # y increases upwards
        return left + i * cell, top + (ny - 1 - j) * cell

    for i in range(nx):
        for j in range(ny):
            x, y = xy(i, j)
            svg.rect(x, y, cell, cell, fill=_color(grid[i, j]))
    if threshold is not None:
        ok = grid >= threshold
        for i in range(nx):
            for j in range(ny):
                if not ok[i, j]:
                    continue
                x, y = xy(i, j)
                if i == 0 or not ok[i - 1, j]:
                    svg.line(x, y, x, y + cell, stroke="red", stroke_width=2)
                if i == nx - 1 or not ok[i + 1, j]:
                    svg.line(x + cell, y, x + cell, y + cell, stroke="red", stroke_width=2)
                if j == 0 or not ok[i, j - 1]:
                    svg.line(x, y + cell, x + cell, y + cell, stroke="red", stroke_width=2)
                if j == ny - 1 or not ok[i, j + 1]:
                    svg.line(x, y, x + cell, y, stroke="red", stroke_width=2)
    svg.rect(left, top, nx * cell, ny * cell, stroke="black")
    bottom = top + ny * cell
    svg.text(left, bottom + 14, f"{x_values[0]:g}", size=10, anchor="middle")
    svg.text(left + nx * cell, bottom + 14, f"{x_values[-1]:g}", size=10, anchor="middle")
    svg.text(left - 4, bottom, f"{y_values[0]:g}", size=10, anchor="end")
    svg.text(left - 4, top + 8, f"{y_values[-1]:g}", size=10, anchor="end")
    svg.text(left + nx * cell / 2, bottom + 30, x_label, size=12, anchor="middle")
    svg.text(18, top + ny * cell / 2, y_label, size=12, anchor="middle", rotate=-90)
    return svg
