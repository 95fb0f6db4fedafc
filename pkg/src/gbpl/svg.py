"""Minimal SVG figures with a fixed 1000x700 viewport."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 1000, 700
MARGIN = 60


def _doc(body: list[str], title: str = "") -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">')
    parts = [head, f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        parts.append(f'<text x="{WIDTH / 2}" y="30" text-anchor="middle" font-family="sans-serif" '
                     f'font-size="18">{escape(title)}</text>')
    parts.extend(body)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


class _Frame:
    """Equal-aspect mapping from local metres to the drawing area (y up)."""

    def __init__(self, xy: np.ndarray):
        lo, hi = xy.min(axis=0), xy.max(axis=0)
        span = np.maximum(hi - lo, 1.0)
        self.scale = min((WIDTH - 2 * MARGIN) / span[0], (HEIGHT - 2 * MARGIN) / span[1])
        self.lo = lo
        self.off = np.array([(WIDTH - self.scale * span[0]) / 2, (HEIGHT - self.scale * span[1]) / 2])

    def __call__(self, xy: np.ndarray) -> np.ndarray:
        p = (np.asarray(xy, dtype=float) - self.lo) * self.scale + self.off
        p[..., 1] = HEIGHT - p[..., 1]
        return p


def _polyline(pts: np.ndarray, color: str, width: float, opacity: float = 1.0) -> str:
    coords = " ".join(f"{x:.1f},{y:.1f}" for x, y in pts)
    return (f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="{width}" '
            f'stroke-opacity="{opacity}" stroke-linejoin="round"/>')


def track_svg(map_lines, raw=None, aligned=None, fixes=None, title: str = "") -> str:
    """Map polylines in gray, raw dead reckoning in black, aligned track in red.

    The view is fitted to the tracks when given, otherwise to the map.
    """
    tracks = [np.asarray(t, dtype=float) for t in (raw, aligned) if t is not None and len(t)]
    focus = np.vstack(tracks) if tracks else np.vstack([np.asarray(m, dtype=float) for m in map_lines])
    frame = _Frame(focus)
    body = [_polyline(frame(np.asarray(m, dtype=float)), "#999999", 3, 0.8) for m in map_lines]
    if raw is not None and len(raw):
        body.append(_polyline(frame(np.asarray(raw, dtype=float)), "black", 1.5))
    if aligned is not None and len(aligned):
        body.append(_polyline(frame(np.asarray(aligned, dtype=float)), "red", 1.5))
    for f in fixes or []:
        x, y = frame(np.array([f[0], f[1]]))
        body.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="6" fill="none" stroke="blue" stroke-width="2"/>')
    return _doc([f'<clipPath id="c"><rect width="{WIDTH}" height="{HEIGHT}"/></clipPath>',
                 '<g clip-path="url(#c)">'] + body + ["</g>"], title)


def _color(v: float) -> str:
    """White (0) to dark blue (1)."""
    v = min(max(v, 0.0), 1.0)
    r = int(round(255 * (1 - 0.9 * v)))
    g = int(round(255 * (1 - 0.7 * v)))
    b = int(round(255 * (1 - 0.3 * v)))
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(entropies, ns, values, title: str = "") -> str:
    """Grid of log10(mean #solutions): rows are map entropies, columns query lengths n."""
    entropies = list(entropies)
    ns = list(ns)
    vals = np.asarray(values, dtype=float)
    logv = np.log10(np.maximum(vals, 1.0))
    top = max(float(logv.max()) if logv.size else 1.0, 1e-9)
    cw = (WIDTH - 2 * MARGIN - 40) / max(len(ns), 1)
    ch = (HEIGHT - 2 * MARGIN - 20) / max(len(entropies), 1)
    body = []
    for i, h in enumerate(entropies):
        y = MARGIN + 20 + i * ch
        body.append(f'<text x="{MARGIN + 30}" y="{y + ch / 2 + 4:.1f}" text-anchor="end" font-family="sans-serif" '
                    f'font-size="{min(12, ch):.0f}">{h:.2f}</text>')
        for j in range(len(ns)):
            x = MARGIN + 40 + j * cw
            v = vals[i, j]
            body.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{cw:.1f}" height="{ch:.1f}" '
                        f'fill="{_color(logv[i, j] / top)}"><title>H={h:.3f} n={ns[j]} '
                        f'mean={v:.3g}</title></rect>')
    for j, n in enumerate(ns):
        x = MARGIN + 40 + (j + 0.5) * cw
        body.append(f'<text x="{x:.1f}" y="{HEIGHT - MARGIN + 20}" text-anchor="middle" font-family="sans-serif" '
                    f'font-size="12">{n}</text>')
    body.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 15}" text-anchor="middle" font-family="sans-serif" '
                f'font-size="14">n (query segments)</text>')
    body.append(f'<text x="20" y="{HEIGHT / 2}" transform="rotate(-90 20 {HEIGHT / 2})" text-anchor="middle" '
                f'font-family="sans-serif" font-size="14">joint entropy H</text>')
    scale = f"log10 mean #solutions, max {10 ** top:.3g}" if math.isfinite(top) else ""
    body.append(f'<text x="{WIDTH - MARGIN}" y="50" text-anchor="end" font-family="sans-serif" '
                f'font-size="12">{escape(scale)}</text>')
    return _doc(body, title)
