"""Small standalone SVG line plots.

Enough for trajectory panels (a few series over time with axes, ticks and a
legend) without pulling in a plotting stack.  Output is a self-contained
SVG document string.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#1f6fb2", "#d9541e", "#2d8659", "#8a4fbf",
           "#b0293d", "#6b6b6b", "#c78a00", "#17899c"]


def _nice_ticks(lo: float, hi: float, target: int = 5):
    if not np.isfinite(lo) or not np.isfinite(hi):
        return [0.0, 1.0]
    if hi <= lo:
        pad = max(abs(lo), 1.0) * 0.1
        lo, hi = lo - pad, hi + pad
    raw = (hi - lo) / max(target, 1)
    mag = 10.0 ** np.floor(np.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        step = mult * mag
        if raw <= step:
            break
    first = np.ceil(lo / step) * step
    ticks = np.arange(first, hi + 0.5 * step, step)
    return [float(t) for t in ticks]


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.1e}"
    return f"{v:.6g}"


class LinePlot:
    """One chart, several (x, y) series."""

    def __init__(self, title: str = "", xlabel: str = "", ylabel: str = "",
                 width: int = 660, height: int = 400):
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel
        self.width = width
        self.height = height
        self.series = []

    def add_series(self, x, y, label: str = "", color: str = None):
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        if x.size != y.size:
            raise ValueError("series lengths differ")
        if color is None:
            color = PALETTE[len(self.series) % len(PALETTE)]
        self.series.append((x, y, label, color))

    def _data_range(self):
        xs, ys = [], []
        for x, y, _, _ in self.series:
            ok = np.isfinite(x) & np.isfinite(y)
            if np.any(ok):
                xs.append((x[ok].min(), x[ok].max()))
                ys.append((y[ok].min(), y[ok].max()))
        if not xs:
            return 0.0, 1.0, 0.0, 1.0
        x_lo = min(a for a, _ in xs)
        x_hi = max(b for _, b in xs)
        y_lo = min(a for a, _ in ys)
        y_hi = max(b for _, b in ys)
        if y_hi <= y_lo:
            pad = max(abs(y_lo), 1.0) * 0.1
            y_lo, y_hi = y_lo - pad, y_hi + pad
        else:
            pad = 0.05 * (y_hi - y_lo)
            y_lo, y_hi = y_lo - pad, y_hi + pad
        if x_hi <= x_lo:
            x_hi = x_lo + 1.0
        return x_lo, x_hi, y_lo, y_hi

    def render(self) -> str:
        W, H = self.width, self.height
        ml, mr, mt, mb = 64, 14, 30, 42
        pw, ph = W - ml - mr, H - mt - mb
        x_lo, x_hi, y_lo, y_hi = self._data_range()

        def px(v):
            return ml + (v - x_lo) / (x_hi - x_lo) * pw

        def py(v):
            return mt + (1.0 - (v - y_lo) / (y_hi - y_lo)) * ph

        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" '
            f'height="{H}" viewBox="0 0 {W} {H}">',
            f'<rect width="{W}" height="{H}" fill="#ffffff"/>',
            f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" '
            f'fill="none" stroke="#444444" stroke-width="1"/>',
        ]
        font = 'font-family="Helvetica,Arial,sans-serif"'

        for t in _nice_ticks(x_lo, x_hi):
            if not x_lo <= t <= x_hi:
                continue
            xp = px(t)
            parts.append(f'<line x1="{xp:.2f}" y1="{mt}" x2="{xp:.2f}" '
                         f'y2="{mt + ph}" stroke="#dddddd" stroke-width="1"/>')
            parts.append(f'<text x="{xp:.2f}" y="{mt + ph + 16}" {font} '
                         f'font-size="11" text-anchor="middle" '
                         f'fill="#333333">{_fmt(t)}</text>')
        for t in _nice_ticks(y_lo, y_hi):
            if not y_lo <= t <= y_hi:
                continue
            yp = py(t)
            parts.append(f'<line x1="{ml}" y1="{yp:.2f}" x2="{ml + pw}" '
                         f'y2="{yp:.2f}" stroke="#dddddd" stroke-width="1"/>')
            parts.append(f'<text x="{ml - 6}" y="{yp + 4:.2f}" {font} '
                         f'font-size="11" text-anchor="end" '
                         f'fill="#333333">{_fmt(t)}</text>')

        for x, y, _, color in self.series:
            ok = np.isfinite(x) & np.isfinite(y)
            start = 0
            for stop in list(np.flatnonzero(~ok)) + [x.size]:
                seg = slice(start, stop)
                if stop - start >= 2:
                    pts = " ".join(f"{px(a):.2f},{py(b):.2f}"
                                   for a, b in zip(x[seg], y[seg]))
                    parts.append(f'<polyline points="{pts}" fill="none" '
                                 f'stroke="{color}" stroke-width="1.6"/>')
                start = stop + 1

        if self.title:
            parts.append(f'<text x="{W / 2:.0f}" y="19" {font} font-size="14" '
                         f'text-anchor="middle" fill="#111111">'
                         f'{escape(self.title)}</text>')
        if self.xlabel:
            parts.append(f'<text x="{ml + pw / 2:.0f}" y="{H - 8}" {font} '
                         f'font-size="12" text-anchor="middle" '
                         f'fill="#111111">{escape(self.xlabel)}</text>')
        if self.ylabel:
            yc = mt + ph / 2
            parts.append(f'<text x="14" y="{yc:.0f}" {font} font-size="12" '
                         f'text-anchor="middle" fill="#111111" '
                         f'transform="rotate(-90 14 {yc:.0f})">'
                         f'{escape(self.ylabel)}</text>')

        labeled = [(lbl, col) for _, _, lbl, col in self.series if lbl]
        for i, (lbl, col) in enumerate(labeled):
            ly = mt + 14 + 16 * i
            lx = ml + pw - 120
            parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" '
                         f'y2="{ly - 4}" stroke="{col}" stroke-width="2"/>')
            parts.append(f'<text x="{lx + 28}" y="{ly}" {font} font-size="11" '
                         f'fill="#222222">{escape(lbl)}</text>')

        parts.append("</svg>")
        return "\n".join(parts)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.render())
