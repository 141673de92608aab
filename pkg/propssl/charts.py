"""Standalone SVG charts built as plain strings.

Output only depends on the input numbers, so rerunning a report gives
byte-identical files.
"""

import math
from typing import List, Sequence, Tuple
from xml.sax.saxutils import escape

OVER_COLOR = "#d62728"
UNDER_COLOR = "#1f77b4"
SERIES_COLORS = (
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#ff7f0e",
    "#9467bd",
    "#8c564b",
    "#e377c2",
    "#7f7f7f",
)
FONT = 'font-family="sans-serif"'


def _num(value: float) -> str:
    return f"{value:.2f}"


class SVG:
    def __init__(self, width: int, height: int) -> None:
        self.width = width
        self.height = height
        self.parts: List[str] = []

    def rect(self, x: float, y: float, width: float, height: float, fill: str) -> None:
        self.parts.append(
            f'<rect x="{_num(x)}" y="{_num(y)}" width="{_num(width)}" '
            f'height="{_num(height)}" fill="{fill}"/>'
        )

    def line(
        self, x1: float, y1: float, x2: float, y2: float, stroke="black", extra=""
    ) -> None:
        self.parts.append(
            f'<line x1="{_num(x1)}" y1="{_num(y1)}" x2="{_num(x2)}" y2="{_num(y2)}" '
            f'stroke="{stroke}"{extra}/>'
        )

    def polyline(self, points: Sequence[Tuple[float, float]], stroke: str) -> None:
        coords = " ".join(f"{_num(x)},{_num(y)}" for x, y in points)
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
            'stroke-width="2"/>'
        )

    def circle(self, x: float, y: float, radius: float, fill: str) -> None:
        self.parts.append(
            f'<circle cx="{_num(x)}" cy="{_num(y)}" r="{_num(radius)}" fill="{fill}"/>'
        )

    def trace(self, points: Sequence[Tuple[float, float]], color: str) -> None:
        """A polyline, or a dot when there is a single point to draw."""
        if len(points) == 1:
            self.circle(*points[0], 3, color)
        elif points:
            self.polyline(points, color)

    def text(self, x: float, y: float, string: str, size=12, anchor="start") -> None:
        self.parts.append(
            f'<text x="{_num(x)}" y="{_num(y)}" {FONT} font-size="{size}" '
            f'text-anchor="{anchor}">{escape(str(string))}</text>'
        )

    def title(self, string: str) -> None:
        self.text(self.width / 2, 24, string, size=15, anchor="middle")

    def legend(self, labels: Sequence[str], colors: Sequence[str]) -> None:
        x = self.width - 170
        for i, (label, color) in enumerate(zip(labels, colors)):
            y = 40 + 18 * i
            self.rect(x, y, 12, 12, color)
            self.text(x + 18, y + 11, label, size=11)

    def get_svg(self) -> str:
        head = (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
            f'width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}">\n'
            f'<rect width="100%" height="100%" fill="white"/>\n'
        )
        return head + "\n".join(self.parts) + "\n</svg>\n"


def _ticks(low: float, high: float, count: int = 5) -> List[float]:
    if high <= low:
        return [low]
    return [low + (high - low) * i / (count - 1) for i in range(count)]


def deviation_bar_chart(
    values: Sequence[float], labels: Sequence[str], title: str
) -> str:
    """Signed bars around zero, overestimation red, underestimation blue."""
    width, height, pad = 640, 400, 60
    svg = SVG(width, height)
    svg.title(title)
    finite = [abs(v) for v in values if math.isfinite(v)]
    limit = max(finite + [0.0]) or 1.0
    zero_y = height / 2
    scale = (height / 2 - pad) / limit
    slot = (width - 2 * pad) / max(len(values), 1)

    for tick in _ticks(-limit, limit):
        y = zero_y - tick * scale
        svg.line(pad, y, width - pad, y, stroke="#dddddd")
        svg.text(pad - 6, y + 4, f"{tick:+.3f}", size=10, anchor="end")
    for i, (value, label) in enumerate(zip(values, labels)):
        x = pad + i * slot + slot * 0.15
        if math.isfinite(value) and value != 0:
            bar = abs(value) * scale
            top = zero_y - bar if value > 0 else zero_y
            svg.rect(x, top, slot * 0.7, bar, OVER_COLOR if value > 0 else UNDER_COLOR)
        svg.text(x + slot * 0.35, height - pad + 20, label, size=11, anchor="middle")
    svg.line(pad, zero_y, width - pad, zero_y)
    svg.legend(["overestimated", "underestimated"], [OVER_COLOR, UNDER_COLOR])
    return svg.get_svg()


def line_chart(
    x: Sequence[float],
    series: Sequence[Tuple[str, Sequence[float]]],
    title: str,
    y_range: Tuple[float, float] = (0.0, 1.0),
    x_label: str = "epoch",
) -> str:
    """One polyline per ``(label, values)``, NaN values leave gaps."""
    width, height, pad = 640, 400, 60
    svg = SVG(width, height)
    svg.title(title)
    low, high = y_range
    x_max = max(list(x) + [1])
    x_min = min(list(x) + [0])

    def to_xy(xv, yv):
        px = pad + (xv - x_min) / ((x_max - x_min) or 1) * (width - 2 * pad)
        py = height - pad - (yv - low) / ((high - low) or 1) * (height - 2 * pad)
        return px, py

    for tick in _ticks(low, high):
        _px, py = to_xy(x_min, tick)
        dashed = ' stroke-dasharray="4"'
        svg.line(pad, py, width - pad, py, stroke="#dddddd", extra=dashed)
        svg.text(pad - 6, py + 4, f"{tick:.2f}", size=10, anchor="end")
    svg.line(pad, height - pad, width - pad, height - pad)
    svg.line(pad, pad, pad, height - pad)
    svg.text(width / 2, height - pad + 36, x_label, size=11, anchor="middle")
    svg.text(pad, height - pad + 16, f"{x_min:g}", size=10, anchor="middle")
    svg.text(width - pad, height - pad + 16, f"{x_max:g}", size=10, anchor="middle")

    colors = [SERIES_COLORS[i % len(SERIES_COLORS)] for i in range(len(series))]
    for (_label, values), color in zip(series, colors):
        segment = []
        for xv, yv in zip(x, values):
            if math.isfinite(yv):
                segment.append(to_xy(xv, yv))
                continue
            svg.trace(segment, color)
            segment = []
        svg.trace(segment, color)
    svg.legend([label for label, _values in series], colors)
    return svg.get_svg()


def table_svg(header: Sequence[str], rows: Sequence[Sequence[str]], title: str) -> str:
    """A text table, first column left aligned."""
    cell_w, cell_h, pad = 150, 24, 20
    n_cols = max([len(header)] + [len(r) for r in rows])
    width = 2 * pad + n_cols * cell_w
    height = 2 * pad + 30 + (len(rows) + 1) * cell_h
    svg = SVG(width, height)
    svg.title(title)
    top = pad + 30
    for r, row in enumerate([list(header)] + [list(r) for r in rows]):
        y = top + r * cell_h
        if r == 0:
            svg.rect(pad, y, n_cols * cell_w, cell_h, "#eeeeee")
        for c, cell in enumerate(row):
            x = pad + c * cell_w + (6 if c == 0 else cell_w - 6)
            svg.text(x, y + 16, cell, size=12, anchor="start" if c == 0 else "end")
        svg.line(pad, y + cell_h, pad + n_cols * cell_w, y + cell_h, stroke="#cccccc")
    return svg.get_svg()
