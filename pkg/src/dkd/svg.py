"""Minimal deterministic SVG emission for report plots.

Text-only output with fixed float formatting, so identical inputs produce
identical bytes.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

_FONT = "font-family='monospace' font-size='11'"
PALETTE = ["#1b6ca8", "#c23b22", "#2e8540", "#8e44ad", "#e67e22", "#16a085",
           "#7f8c8d", "#d4ac0d", "#34495e", "#c0392b", "#27ae60", "#2980b9",
           "#9b59b6", "#f39c12"]


def _f(x: float) -> str:
    return f"{x:.2f}"


class SvgCanvas:
    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self.parts: List[str] = [
            f"<svg xmlns='http://www.w3.org/2000/svg' width='{width}' height='{height}' "
            f"viewBox='0 0 {width} {height}'>",
            f"<rect x='0' y='0' width='{width}' height='{height}' fill='white'/>"]

    def line(self, x1, y1, x2, y2, color="#444444", width=1.0):
        self.parts.append(f"<line x1='{_f(x1)}' y1='{_f(y1)}' x2='{_f(x2)}' y2='{_f(y2)}' "
                          f"stroke='{color}' stroke-width='{_f(width)}'/>")

    def polyline(self, pts: Sequence[Tuple[float, float]], color: str, width=1.5):
        coords = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
        self.parts.append(f"<polyline points='{coords}' fill='none' stroke='{color}' "
                          f"stroke-width='{_f(width)}'/>")

    def circle(self, x, y, r, color):
        self.parts.append(f"<circle cx='{_f(x)}' cy='{_f(y)}' r='{_f(r)}' fill='{color}'/>")

    def rect(self, x, y, w, h, color, stroke: Optional[str] = None):
        s = f" stroke='{stroke}' stroke-width='0.5'" if stroke else ""
        self.parts.append(f"<rect x='{_f(x)}' y='{_f(y)}' width='{_f(w)}' height='{_f(h)}' "
                          f"fill='{color}'{s}/>")

    def text(self, x, y, s, anchor="start", color="#222222", rotate: Optional[float] = None):
        tr = f" transform='rotate({_f(rotate)} {_f(x)} {_f(y)})'" if rotate is not None else ""
        self.parts.append(f"<text x='{_f(x)}' y='{_f(y)}' {_FONT} fill='{color}' "
                          f"text-anchor='{anchor}'{tr}>{_escape(s)}</text>")

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _ticks(lo: float, hi: float, n: int = 5) -> List[float]:
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    return [lo + span * i / (n - 1) for i in range(n)]


def line_chart(series: Sequence[Tuple[str, Sequence[float], Sequence[float]]],
               title: str, x_label: str, y_label: str,
               width: int = 640, height: int = 400, log_y: bool = False) -> str:
    """Multi-series line chart; series are (name, xs, ys)."""
    import math

    m_l, m_r, m_t, m_b = 64, 16, 28, 44
    cw, ch = width - m_l - m_r, height - m_t - m_b
    xs_all = [x for _n, xs, _ys in series for x in xs]
    ys_all = [y for _n, _xs, ys in series for y in ys]
    if log_y:
        ys_all = [math.log10(max(y, 1e-12)) for y in ys_all]
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1
    if y_hi == y_lo:
        y_hi = y_lo + 1

    def px(x):
        return m_l + (x - x_lo) / (x_hi - x_lo) * cw

    def py(y):
        if log_y:
            y = math.log10(max(y, 1e-12))
        return m_t + ch - (y - y_lo) / (y_hi - y_lo) * ch

    c = SvgCanvas(width, height)
    c.text(width / 2, 16, title, anchor="middle")
    c.line(m_l, m_t, m_l, m_t + ch)
    c.line(m_l, m_t + ch, m_l + cw, m_t + ch)
    for tx in _ticks(x_lo, x_hi):
        c.line(px(tx), m_t + ch, px(tx), m_t + ch + 4)
        c.text(px(tx), m_t + ch + 16, f"{tx:g}", anchor="middle")
    for ty in _ticks(y_lo, y_hi):
        val = 10 ** ty if log_y else ty
        yy = m_t + ch - (ty - y_lo) / (y_hi - y_lo) * ch
        c.line(m_l - 4, yy, m_l, yy)
        c.text(m_l - 6, yy + 4, f"{val:.3g}", anchor="end")
    c.text(m_l + cw / 2, height - 8, x_label, anchor="middle")
    c.text(14, m_t + ch / 2, y_label, anchor="middle", rotate=-90.0)
    for i, (name, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        c.polyline([(px(x), py(y)) for x, y in zip(xs, ys)], color)
        c.text(m_l + cw - 4, m_t + 14 + 14 * i, name, anchor="end", color=color)
    return c.render()


def scatter_chart(points: Sequence[Tuple[str, float, float]], title: str,
                  x_label: str, y_label: str, width: int = 640, height: int = 400) -> str:
    """Labelled scatter, e.g. model size vs accuracy."""
    m_l, m_r, m_t, m_b = 64, 16, 28, 44
    cw, ch = width - m_l - m_r, height - m_t - m_b
    xs = [x for _n, x, _y in points]
    ys = [y for _n, _x, y in points]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    x_pad = (x_hi - x_lo) * 0.08 or 1.0
    y_pad = (y_hi - y_lo) * 0.08 or 0.05
    x_lo, x_hi = x_lo - x_pad, x_hi + x_pad
    y_lo, y_hi = y_lo - y_pad, y_hi + y_pad

    def px(x):
        return m_l + (x - x_lo) / (x_hi - x_lo) * cw

    def py(y):
        return m_t + ch - (y - y_lo) / (y_hi - y_lo) * ch

    c = SvgCanvas(width, height)
    c.text(width / 2, 16, title, anchor="middle")
    c.line(m_l, m_t, m_l, m_t + ch)
    c.line(m_l, m_t + ch, m_l + cw, m_t + ch)
    for tx in _ticks(x_lo, x_hi):
        c.line(px(tx), m_t + ch, px(tx), m_t + ch + 4)
        c.text(px(tx), m_t + ch + 16, f"{tx:.3g}", anchor="middle")
    for ty in _ticks(y_lo, y_hi):
        c.line(m_l - 4, py(ty), m_l, py(ty))
        c.text(m_l - 6, py(ty) + 4, f"{ty:.3g}", anchor="end")
    c.text(m_l + cw / 2, height - 8, x_label, anchor="middle")
    c.text(14, m_t + ch / 2, y_label, anchor="middle", rotate=-90.0)
    for i, (name, x, y) in enumerate(points):
        color = PALETTE[i % len(PALETTE)]
        c.circle(px(x), py(y), 4, color)
        c.text(px(x) + 6, py(y) - 6, name, color=color)
    return c.render()


def heatmap(matrix: Sequence[Sequence[float]], row_labels: Sequence[str],
            col_labels: Sequence[str], title: str, width: int = 720,
            height: Optional[int] = None) -> str:
    """Row-major heatmap with per-cell values, dark = large."""
    rows, cols = len(matrix), len(matrix[0])
    cell_w = max(36, (width - 140) // max(cols, 1))
    cell_h = 26
    m_l, m_t = 120, 48
    width = m_l + cell_w * cols + 20
    height = height or (m_t + cell_h * rows + 40)
    lo = min(min(r) for r in matrix)
    hi = max(max(r) for r in matrix)
    span = (hi - lo) or 1.0

    c = SvgCanvas(width, height)
    c.text(width / 2, 16, title, anchor="middle")
    for j, cl in enumerate(col_labels):
        c.text(m_l + j * cell_w + cell_w / 2, m_t - 8, cl, anchor="middle")
    for i, rl in enumerate(row_labels):
        c.text(m_l - 8, m_t + i * cell_h + cell_h / 2 + 4, rl, anchor="end")
        for j in range(cols):
            v = matrix[i][j]
            z = (v - lo) / span
            shade = int(round(245 - z * 175))
            color = f"#{shade:02x}{shade:02x}ff"
            c.rect(m_l + j * cell_w, m_t + i * cell_h, cell_w, cell_h, color, stroke="#999999")
            c.text(m_l + j * cell_w + cell_w / 2, m_t + i * cell_h + cell_h / 2 + 4,
                   f"{v:.3f}", anchor="middle")
    return c.render()
