"""Minimal SVG output: log-log residual plots and heatmaps."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

W, H, PAD = 480, 360, 60


def _header(title: str) -> list[str]:
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
            f'<rect width="{W}" height="{H}" fill="white"/>',
            f'<text x="{W / 2:.1f}" y="20" font-size="14" text-anchor="middle">{_esc(title)}</text>']


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def loglog_svg(points: Sequence[tuple[float, float]], title: str, fit: dict | None = None) -> str:
    """Markers at ``(eps, residual)`` on log axes; ``fit`` (slope, intercept) adds the fitted line."""
    pts = np.array([(math.log10(e), math.log10(r)) for e, r in points])
    x0, x1 = pts[:, 0].min(), pts[:, 0].max()
    y0, y1 = pts[:, 1].min(), pts[:, 1].max()
    if x1 - x0 < 1e-9:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 - y0 < 1e-9:
        y0, y1 = y0 - 0.5, y1 + 0.5
    mx, my = 0.05 * (x1 - x0), 0.05 * (y1 - y0)
    x0, x1, y0, y1 = x0 - mx, x1 + mx, y0 - my, y1 + my

    def sx(x):
        return PAD + (x - x0) / (x1 - x0) * (W - 2 * PAD)

    def sy(y):
        return H - PAD - (y - y0) / (y1 - y0) * (H - 2 * PAD)

    out = _header(title)
    out.append(f'<polyline fill="none" stroke="black" points="{PAD},{PAD} {PAD},{H - PAD} {W - PAD},{H - PAD}"/>')
    for x, y in pts:
        out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="steelblue"/>')
    line = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
    out.append(f'<polyline fill="none" stroke="steelblue" points="{line}"/>')
    if fit is not None:
        # the fit is in natural logs; convert to the decimal axes
        a, b = fit["slope"], fit["intercept"]

        def fy(xd):
            y = a * xd * math.log(10) + b
            if fit.get("log_corrected"):
                y += math.log(abs(xd * math.log(10)))
            return y / math.log(10)

        xs = np.linspace(x0 + mx, x1 - mx, 20)
        seg = " ".join(f"{sx(x):.2f},{sy(fy(x)):.2f}" for x in xs)
        out.append(f'<polyline fill="none" stroke="firebrick" stroke-dasharray="5,3" points="{seg}"/>')
        out.append(f'<text x="{W - PAD}" y="{PAD - 8}" font-size="12" text-anchor="end">'
                   f'slope {a:.3f}</text>')
    out.append(f'<text x="{W / 2:.1f}" y="{H - 15}" font-size="12" text-anchor="middle">log10 eps</text>')
    out.append(f'<text x="15" y="{H / 2:.1f}" font-size="12" transform="rotate(-90 15 {H / 2:.1f})" '
               f'text-anchor="middle">log10 residual</text>')
    for x in (x0 + mx, x1 - mx):
        out.append(f'<text x="{sx(x):.2f}" y="{H - PAD + 16}" font-size="10" text-anchor="middle">{x:.2f}</text>')
    for y in (y0 + my, y1 - my):
        out.append(f'<text x="{PAD - 6}" y="{sy(y):.2f}" font-size="10" text-anchor="end">{y:.2f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap_svg(xs: np.ndarray, ys: np.ndarray, values: np.ndarray, title: str) -> str:
    """Cells coloured from blue (low) to red (high); NaN cells are left grey."""
    xs, ys, values = np.asarray(xs), np.asarray(ys), np.asarray(values, dtype=float)
    finite = values[np.isfinite(values)]
    lo, hi = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    cw = (W - 2 * PAD) / len(xs)
    ch = (H - 2 * PAD) / len(ys)
    out = _header(title)
    for j in range(len(ys)):
        for i in range(len(xs)):
            v = values[j, i]
            if np.isfinite(v):
                t = (v - lo) / span
                color = f"rgb({int(255 * t)},{int(80 + 60 * (1 - abs(2 * t - 1)))},{int(255 * (1 - t))})"
            else:
                color = "rgb(200,200,200)"
            x = PAD + i * cw
            y = H - PAD - (j + 1) * ch
            out.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{cw + 0.3:.2f}" height="{ch + 0.3:.2f}" fill="{color}"/>')
    out.append(f'<text x="{PAD}" y="{H - PAD + 16}" font-size="10">{xs[0]:.3g}</text>')
    out.append(f'<text x="{W - PAD}" y="{H - PAD + 16}" font-size="10" text-anchor="end">{xs[-1]:.3g}</text>')
    out.append(f'<text x="{PAD - 6}" y="{H - PAD}" font-size="10" text-anchor="end">{ys[0]:.3g}</text>')
    out.append(f'<text x="{PAD - 6}" y="{PAD + 10}" font-size="10" text-anchor="end">{ys[-1]:.3g}</text>')
    out.append(f'<text x="{W / 2:.1f}" y="{H - 15}" font-size="11" text-anchor="middle">'
               f'min {lo:.4g}  max {hi:.4g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
