"""Minimal deterministic SVG plots (scatter, line panels) written as plain text."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 480, 360
MARGIN = 48
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf")


def _num(v: float) -> str:
    return f"{v:.2f}"


class _Axes:
    def __init__(self, xlim, ylim):
        lo, hi = ylim
        if hi <= lo:
            hi = lo + 1.0
        self.xlim = xlim
        self.ylim = (lo, hi)

    def px(self, x):
        a, b = self.xlim
        return MARGIN + (np.asarray(x, dtype=float) - a) / (b - a) * (WIDTH - 2 * MARGIN)

    def py(self, y):
        a, b = self.ylim
        return HEIGHT - MARGIN - (np.asarray(y, dtype=float) - a) / (b - a) * (HEIGHT - 2 * MARGIN)


def _frame(ax, title, xlabel, ylabel):
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{WIDTH - 2 * MARGIN}" height="{HEIGHT - 2 * MARGIN}" '
        f'fill="none" stroke="black"/>',
        f'<text x="{WIDTH / 2:.1f}" y="{MARGIN / 2:.1f}" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{HEIGHT / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {HEIGHT / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv = ax.xlim[0] + frac * (ax.xlim[1] - ax.xlim[0])
        yv = ax.ylim[0] + frac * (ax.ylim[1] - ax.ylim[0])
        out.append(f'<text x="{_num(ax.px(xv))}" y="{HEIGHT - MARGIN + 14}" text-anchor="middle" '
                   f'font-size="10">{xv:.3g}</text>')
        out.append(f'<text x="{MARGIN - 4}" y="{_num(ax.py(yv))}" text-anchor="end" font-size="10">{yv:.3g}</text>')
    return out


def _polyline(xs, ys, color, width=1.0):
    pts = " ".join(f"{_num(a)},{_num(b)}" for a, b in zip(xs, ys))
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"/>'


def scatter(x, y, labels=None, title="", xlabel="", ylabel="") -> str:
    """Points coloured by integer label."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    labels = np.zeros(x.size, dtype=int) if labels is None else np.asarray(labels, dtype=int)
    ax = _Axes((0.0, 1.0), (0.0, 1.0))
    out = _frame(ax, title, xlabel, ylabel)
    for a, b, lab in zip(ax.px(x), ax.py(y), labels):
        out.append(f'<circle cx="{_num(a)}" cy="{_num(b)}" r="3" fill="{PALETTE[lab % len(PALETTE)]}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def curves(grid, profiles, labels=None, title="", xlabel="t", ylabel="value") -> str:
    """One polyline per profile, coloured by label."""
    grid = np.asarray(grid, dtype=float)
    profiles = [np.asarray(p, dtype=float) for p in profiles]
    labels = [0] * len(profiles) if labels is None else list(labels)
    top = max((float(p.max()) for p in profiles), default=1.0)
    ax = _Axes((0.0, 1.0), (0.0, top * 1.05))
    out = _frame(ax, title, xlabel, ylabel)
    for p, lab in zip(profiles, labels):
        out.append(_polyline(ax.px(grid), ax.py(p), PALETTE[int(lab) % len(PALETTE)]))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def profile_with_data(grid, fitted, lower, upper, x_obs, y_obs, title="", xlabel="t", ylabel="intensity") -> str:
    """Fitted curve with a pointwise band and the observations overlaid."""
    grid = np.asarray(grid, dtype=float)
    y_obs = np.asarray(y_obs, dtype=float)
    top = max(float(np.max(upper)), float(y_obs.max()) if y_obs.size else 0.0)
    bottom = min(0.0, float(y_obs.min()) if y_obs.size else 0.0)
    ax = _Axes((0.0, 1.0), (bottom, top * 1.05))
    out = _frame(ax, title, xlabel, ylabel)
    band = list(zip(ax.px(grid), ax.py(upper))) + list(zip(ax.px(grid[::-1]), ax.py(np.asarray(lower)[::-1])))
    pts = " ".join(f"{_num(a)},{_num(b)}" for a, b in band)
    out.append(f'<polygon points="{pts}" fill="#1f77b4" fill-opacity="0.2" stroke="none"/>')
    out.append(_polyline(ax.px(grid), ax.py(fitted), PALETTE[0], 1.5))
    for a, b in zip(ax.px(x_obs), ax.py(y_obs)):
        out.append(f'<circle cx="{_num(a)}" cy="{_num(b)}" r="2" fill="black"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
