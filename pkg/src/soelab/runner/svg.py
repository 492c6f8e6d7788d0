"""Minimal standalone SVG charts (no plotting dependency)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
W, H = 640, 400
ML, MR, MT, MB = 60, 150, 40, 50


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _doc(body: list[str], title: str, width: int = W, height: int = H) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">')
    t = f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>'
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', t, *body, "</svg>"]) + "\n"


def _range(values) -> tuple[float, float]:
    vals = [v for v in values if v is not None and math.isfinite(v)]
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _axes(lo: float, hi: float, xlabel: str, ylabel: str) -> list[str]:
    x0, x1, y0, y1 = ML, W - MR, H - MB, MT
    out = [f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
           f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
           f'<text x="{(x0 + x1) / 2:.1f}" y="{H - 12}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="14" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" '
           f'transform="rotate(-90 14 {(y0 + y1) / 2:.1f})">{escape(ylabel)}</text>']
    for k in range(5):
        v = lo + (hi - lo) * k / 4
        y = y0 - (y0 - y1) * k / 4
        out.append(f'<line x1="{x0 - 4}" y1="{y:.1f}" x2="{x0}" y2="{y:.1f}" stroke="black"/>')
        out.append(f'<text x="{x0 - 6}" y="{y + 4:.1f}" text-anchor="end">{v:.3g}</text>')
    return out


def _legend(names) -> list[str]:
    out = []
    for k, name in enumerate(names):
        y = MT + 14 * k
        c = PALETTE[k % len(PALETTE)]
        out.append(f'<rect x="{W - MR + 10}" y="{y}" width="10" height="10" fill="{c}"/>')
        out.append(f'<text x="{W - MR + 24}" y="{y + 9}">{escape(str(name))}</text>')
    return out


def line_chart(series: dict[str, list[float]], title: str, xlabel: str = "epoch", ylabel: str = "score",
               marks: dict[str, int] | None = None) -> str:
    """One polyline per series over x = 1..len; ``marks`` circles a chosen x per series."""
    lo, hi = _range([v for s in series.values() for v in s])
    n = max((len(s) for s in series.values()), default=1)
    x0, x1, y0, y1 = ML, W - MR, H - MB, MT

    def px(i):
        return x0 + (x1 - x0) * (i / max(n - 1, 1))

    def py(v):
        return y0 - (y0 - y1) * (v - lo) / (hi - lo)

    body = _axes(lo, hi, xlabel, ylabel)
    for k, (name, s) in enumerate(series.items()):
        c = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{px(i):.1f},{py(v):.1f}" for i, v in enumerate(s))
        body.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        if marks and name in marks and 0 <= marks[name] < len(s):
            i = marks[name]
            body.append(f'<circle cx="{px(i):.1f}" cy="{py(s[i]):.1f}" r="4" fill="none" stroke="{c}"/>')
    body.append(f'<text x="{x0}" y="{y0 + 14}" text-anchor="middle">1</text>')
    body.append(f'<text x="{x1}" y="{y0 + 14}" text-anchor="middle">{n}</text>')
    return _doc(body + _legend(series), title)


def grouped_bars(groups: list[str], series: dict[str, list[float]], title: str, ylabel: str = "score") -> str:
    """Bars for each group (x) and series (colour)."""
    lo, hi = _range([0.0, *[v for s in series.values() for v in s]])
    lo = min(lo, 0.0)
    x0, x1, y0, y1 = ML, W - MR, H - MB, MT
    body = _axes(lo, hi, "", ylabel)
    ng, ns = max(len(groups), 1), max(len(series), 1)
    gw = (x1 - x0) / ng
    bw = 0.8 * gw / ns

    def py(v):
        return y0 - (y0 - y1) * (v - lo) / (hi - lo)

    for g, name in enumerate(groups):
        gx = x0 + g * gw + 0.1 * gw
        for k, (_, s) in enumerate(series.items()):
            v = s[g]
            if v is None or not math.isfinite(v):
                continue
            top = py(max(v, 0.0))
            h = abs(py(v) - py(0.0))
            body.append(f'<rect x="{gx + k * bw:.1f}" y="{top:.1f}" width="{bw:.1f}" height="{h:.1f}" '
                        f'fill="{PALETTE[k % len(PALETTE)]}"/>')
        label = escape(name.replace("_", " "))
        body.append(f'<text x="{gx + 0.4 * gw:.1f}" y="{y0 + 14}" text-anchor="middle" font-size="9">{label}</text>')
    return _doc(body + _legend(series), title)


def matrix_heatmap(scores, labels: list[str], title: str) -> str:
    """Score matrix (rows = first expert) with cell values; diagonal cells outlined."""
    m = len(labels)
    cell = 70
    left, top = 90, 60
    width, height = left + m * cell + 20, top + m * cell + 30
    flat = [float(v) for row in scores for v in row]
    lo, hi = _range(flat)
    body = []
    for i in range(m):
        body.append(f'<text x="{left - 6}" y="{top + i * cell + cell / 2 + 4:.1f}" text-anchor="end">'
                    f'{escape(labels[i])}</text>')
        body.append(f'<text x="{left + i * cell + cell / 2:.1f}" y="{top - 8}" text-anchor="middle">'
                    f'{escape(labels[i])}</text>')
        for j in range(m):
            v = float(scores[i][j])
            t = (v - lo) / (hi - lo)
            shade = int(255 - 155 * t)
            stroke = ' stroke="black" stroke-width="3"' if i == j else ' stroke="#999"'
            body.append(f'<rect x="{left + j * cell}" y="{top + i * cell}" width="{cell}" height="{cell}" '
                        f'fill="rgb({shade},{shade},255)"{stroke}/>')
            body.append(f'<text x="{left + j * cell + cell / 2:.1f}" y="{top + i * cell + cell / 2 + 4:.1f}" '
                        f'text-anchor="middle">{_fmt(100 * v)}</text>')
    return _doc(body, title, width, height)
