"""Static SVG figures written by hand: log-log curves and mesh wireframes."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

__all__ = ["loglog_svg", "mesh_svg"]

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_W, _H = 560, 420
_M = dict(left=70, right=150, top=40, bottom=55)


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def loglog_svg(
    path: str,
    series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    title: str = "",
    xlabel: str = "K",
    ylabel: str = "error",
    ref_slope: float | None = None,
    ref_label: str | None = None,
) -> None:
    """Log-log plot of ``(label, x, y)`` series with an optional reference slope line."""
    xs = np.concatenate([np.asarray(s[1], float) for s in series])
    ys = np.concatenate([np.asarray(s[2], float) for s in series])
    ok = (xs > 0) & (ys > 0) & np.isfinite(xs) & np.isfinite(ys)
    if not np.any(ok):
        raise ValueError("nothing positive to plot")
    lx0, lx1 = math.log10(xs[ok].min()), math.log10(xs[ok].max())
    ly0, ly1 = math.log10(ys[ok].min()), math.log10(ys[ok].max())
    if lx1 - lx0 < 1e-9:
        lx0, lx1 = lx0 - 0.5, lx1 + 0.5
    if ly1 - ly0 < 1e-9:
        ly0, ly1 = ly0 - 0.5, ly1 + 0.5
    lx0, lx1 = math.floor(lx0 * 10) / 10, math.ceil(lx1 * 10) / 10
    ly0, ly1 = math.floor(ly0 * 10) / 10 - 0.1, math.ceil(ly1 * 10) / 10 + 0.1
    pw = _W - _M["left"] - _M["right"]
    ph = _H - _M["top"] - _M["bottom"]

    def X(v):
        return _M["left"] + (math.log10(v) - lx0) / (lx1 - lx0) * pw

    def Y(v):
        return _M["top"] + (ly1 - math.log10(v)) / (ly1 - ly0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<rect x="{_M["left"]}" y="{_M["top"]}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    if title:
        out.append(f'<text x="{_W / 2:.1f}" y="22" text-anchor="middle" font-size="14">{_esc(title)}</text>')
    # decade ticks
    for d in range(math.ceil(lx0), math.floor(lx1) + 1):
        x = X(10.0**d)
        out.append(f'<line x1="{_fmt(x)}" y1="{_M["top"] + ph}" x2="{_fmt(x)}" y2="{_M["top"] + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{_fmt(x)}" y="{_M["top"] + ph + 18}" text-anchor="middle">1e{d}</text>')
    for d in range(math.ceil(ly0), math.floor(ly1) + 1):
        y = Y(10.0**d)
        out.append(f'<line x1="{_M["left"] - 5}" y1="{_fmt(y)}" x2="{_M["left"]}" y2="{_fmt(y)}" stroke="black"/>')
        out.append(f'<text x="{_M["left"] - 8}" y="{_fmt(y + 4)}" text-anchor="end">1e{d}</text>')
    out.append(
        f'<text x="{_M["left"] + pw / 2:.1f}" y="{_H - 15}" text-anchor="middle">{_esc(xlabel)}</text>'
    )
    out.append(
        f'<text x="18" y="{_M["top"] + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {_M["top"] + ph / 2:.1f})">{_esc(ylabel)}</text>'
    )
    legend = []
    for i, (label, x, y) in enumerate(series):
        c = _COLORS[i % len(_COLORS)]
        pts = [(X(a), Y(b)) for a, b in zip(x, y) if a > 0 and b > 0 and math.isfinite(a) and math.isfinite(b)]
        if not pts:
            continue
        poly = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in pts)
        out.append(f'<polyline points="{poly}" fill="none" stroke="{c}" stroke-width="1.5"/>')
        for a, b in pts:
            out.append(f'<circle cx="{_fmt(a)}" cy="{_fmt(b)}" r="2.5" fill="{c}"/>')
        legend.append((label, c, ""))
    if ref_slope is not None:
        # anchor the reference line at the first point of the first series
        x0, y0 = float(series[0][1][0]), float(series[0][2][0])
        x1 = 10.0**lx1
        y1 = y0 * (x1 / x0) ** ref_slope
        out.append(
            f'<line x1="{_fmt(X(x0))}" y1="{_fmt(Y(y0))}" x2="{_fmt(X(x1))}" y2="{_fmt(Y(y1))}" '
            f'stroke="gray" stroke-dasharray="6,4"/>'
        )
        legend.append((ref_label or f"slope {ref_slope:g}", "gray", ' stroke-dasharray="6,4"'))
    for i, (label, c, dash) in enumerate(legend):
        y = _M["top"] + 15 + 18 * i
        x = _M["left"] + pw + 10
        out.append(f'<line x1="{x}" y1="{y}" x2="{x + 20}" y2="{y}" stroke="{c}" stroke-width="1.5"{dash}/>')
        out.append(f'<text x="{x + 26}" y="{y + 4}">{_esc(label)}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def mesh_svg(path: str, mesh, title: str = "", size: int = 480) -> None:
    """Wireframe of a triangle mesh (1D meshes are drawn as ticks on a line)."""
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    pad = 30
    span = float(np.max(hi - lo)) or 1.0
    s = (size - 2 * pad) / span
    height = size if mesh.dim == 2 else 120
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{height + 20}" '
        f'viewBox="0 0 {size} {height + 20}" font-family="sans-serif" font-size="12">',
        f'<rect width="{size}" height="{height + 20}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{size / 2}" y="16" text-anchor="middle">{_esc(title)}</text>')
    if mesh.dim == 1:
        y = height / 2 + 10
        x0 = pad + (mesh.vertices[:, 0].min() - lo[0]) * s
        x1 = pad + (mesh.vertices[:, 0].max() - lo[0]) * s
        out.append(f'<line x1="{_fmt(x0)}" y1="{y}" x2="{_fmt(x1)}" y2="{y}" stroke="black"/>')
        for v in np.unique(mesh.vertices[:, 0]):
            x = pad + (v - lo[0]) * s
            out.append(f'<line x1="{_fmt(x)}" y1="{y - 8}" x2="{_fmt(x)}" y2="{y + 8}" stroke="black"/>')
    else:
        for el in mesh.elements:
            P = mesh.vertices[el]
            pts = " ".join(
                f"{_fmt(pad + (p[0] - lo[0]) * s)},{_fmt(20 + pad + (hi[1] - p[1]) * s)}" for p in P
            )
            out.append(f'<polygon points="{pts}" fill="none" stroke="black" stroke-width="0.5"/>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
