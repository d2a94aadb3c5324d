"""Minimal SVG line and scatter plots."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#d62728", "#2ca02c", "#8c564b", "#9467bd", "#ff7f0e", "#1f77b4", "#17becf", "#7f7f7f")
SIZE = 400
PAD = 50


def _header(title: str, extra_width: int = 0) -> list:
    h = SIZE + 2 * PAD + 40
    w = SIZE + 2 * PAD + extra_width
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
            f'<rect width="{w}" height="{h}" fill="white"/>',
            f'<text x="{(SIZE + 2 * PAD) / 2}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>']


def _map(x, y, lo=(0.0, 0.0), hi=(1.0, 1.0)):
    sx = PAD + (x - lo[0]) / max(hi[0] - lo[0], 1e-12) * SIZE
    sy = PAD + 40 + SIZE - (y - lo[1]) / max(hi[1] - lo[1], 1e-12) * SIZE
    return sx, sy


def _axes(xlabel: str, ylabel: str) -> list:
    x0, y0 = _map(0, 0)
    x1, y1 = _map(1, 1)
    out = [f'<rect x="{x0}" y="{y1}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>']
    for t in np.linspace(0, 1, 6):
        tx, _ = _map(t, 0)
        _, ty = _map(0, t)
        out.append(f'<text x="{tx:.1f}" y="{y0 + 16:.1f}" text-anchor="middle" font-size="11">{t:.1f}</text>')
        out.append(f'<text x="{x0 - 6:.1f}" y="{ty + 4:.1f}" text-anchor="end" font-size="11">{t:.1f}</text>')
    out.append(f'<text x="{(x0 + x1) / 2}" y="{y0 + 34}" text-anchor="middle" font-size="13">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{(y0 + y1) / 2}" text-anchor="middle" font-size="13" '
               f'transform="rotate(-90 14 {(y0 + y1) / 2})">{escape(ylabel)}</text>')
    return out


def roc_svg(curves, title: str = "ROC") -> str:
    """``curves`` is a list of ``(label, [(fpr, tpr, ...), ...], auc)``; one polyline each."""
    out = _header(title) + _axes("false positive rate", "true positive rate")
    (dx0, dy0), (dx1, dy1) = _map(0, 0), _map(1, 1)
    out.append(f'<line class="diagonal" x1="{dx0}" y1="{dy0}" x2="{dx1}" y2="{dy1}" stroke="#999" '
               f'stroke-dasharray="4 4"/>')
    for i, (label, pts, auc) in enumerate(curves):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join("%.2f,%.2f" % _map(p[0], p[1]) for p in pts)
        out.append(f'<polyline class="roc" points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        lx, ly = _map(0.45, 0.05 + 0.07 * (len(curves) - 1 - i))
        auc_text = "n/a" if auc is None else f"{auc:.4f}"
        out.append(f'<text x="{lx:.1f}" y="{ly:.1f}" font-size="12" fill="{color}">'
                   f'{escape(str(label))} AUC={auc_text}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def scatter_svg(points, categories, title: str = "t-SNE") -> str:
    """Scatter of 2-D points coloured by category, with a legend."""
    pts = np.asarray(points, dtype=np.float64)
    cats = [str(c) for c in categories]
    names = sorted(set(cats))
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    lo, hi = lo - 0.05 * span, hi + 0.05 * span
    out = _header(title, extra_width=140)
    x0, y1 = _map(0, 1)
    out.append(f'<rect x="{x0}" y="{y1}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>')
    for (x, y), c in zip(pts, cats):
        sx, sy = _map(x, y, lo, hi)
        out.append(f'<circle cx="{sx:.2f}" cy="{sy:.2f}" r="2.5" fill="{PALETTE[names.index(c) % len(PALETTE)]}"/>')
    for i, name in enumerate(names):
        ly = 50 + 16 * i
        out.append(f'<g class="legend"><circle cx="{PAD + SIZE + 8}" cy="{ly}" r="4" '
                   f'fill="{PALETTE[i % len(PALETTE)]}"/><text x="{PAD + SIZE + 16}" y="{ly + 4}" '
                   f'font-size="10">{escape(name)}</text></g>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
