"""Static SVG rendering of sweep results.

The markup is written directly (one ``<polyline>`` per method, explicit error
bars, fixed palette and layout), so identical inputs yield byte-identical
files and tests can inspect the geometry without a rasterizer.
"""

from __future__ import annotations

import numpy as np

from .harness import HarnessError, SweepResult, method_label

WIDTH, HEIGHT = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 170, 30, 50

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
           "#8c564b", "#17becf", "#7f7f7f", "#bcbd22", "#e377c2"]

_AXIS_LABEL = {"J": "number of users J", "B": "feedback bits B",
               "n_p": "number of pilots n_p"}


def _fmt(x: float) -> str:
    return f"{x:.3f}".rstrip("0").rstrip(".")


def render_sweep(result: SweepResult) -> str:
    """SVG text for a sweep result; raises on empty input."""
    if not result.rows:
        raise HarnessError("nothing to plot: sweep result is empty")
    methods = []
    for r in result.rows:
        if r.method not in methods:
            methods.append(r.method)
    xs = sorted({r.value for r in result.rows})
    y_low = min(r.mean_sum_rate - r.std_err for r in result.rows)
    y_high = max(r.mean_sum_rate + r.std_err for r in result.rows)
    if y_high == y_low:
        y_high = y_low + 1.0
    pad = 0.05 * (y_high - y_low)
    y_low, y_high = y_low - pad, y_high + pad
    x_low, x_high = min(xs), max(xs)
    if x_high == x_low:
        x_low, x_high = x_low - 1.0, x_high + 1.0

    inner_w = WIDTH - MARGIN_L - MARGIN_R
    inner_h = HEIGHT - MARGIN_T - MARGIN_B

    def px(x):
        return MARGIN_L + inner_w * (x - x_low) / (x_high - x_low)

    def py(y):
        return MARGIN_T + inner_h * (1.0 - (y - y_low) / (y_high - y_low))

    sweep_var = result.rows[0].sweep_var
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{MARGIN_L}" y1="{HEIGHT - MARGIN_B}" x2="{WIDTH - MARGIN_R}" '
        f'y2="{HEIGHT - MARGIN_B}" stroke="black"/>',
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" '
        f'y2="{HEIGHT - MARGIN_B}" stroke="black"/>',
    ]
    for tick in np.linspace(y_low, y_high, 5):
        y = py(tick)
        parts.append(f'<line x1="{MARGIN_L - 4}" y1="{_fmt(y)}" x2="{MARGIN_L}" '
                     f'y2="{_fmt(y)}" stroke="black"/>')
        parts.append(f'<text x="{MARGIN_L - 8}" y="{_fmt(y + 4)}" font-size="11" '
                     f'text-anchor="end">{_fmt(tick)}</text>')
    for x in xs:
        parts.append(f'<line x1="{_fmt(px(x))}" y1="{HEIGHT - MARGIN_B}" '
                     f'x2="{_fmt(px(x))}" y2="{HEIGHT - MARGIN_B + 4}" stroke="black"/>')
        parts.append(f'<text x="{_fmt(px(x))}" y="{HEIGHT - MARGIN_B + 18}" '
                     f'font-size="11" text-anchor="middle">{_fmt(x)}</text>')
    parts.append(f'<text x="{MARGIN_L + inner_w / 2}" y="{HEIGHT - 10}" '
                 f'font-size="12" text-anchor="middle">'
                 f'{_AXIS_LABEL.get(sweep_var, sweep_var)}</text>')
    parts.append(f'<text x="18" y="{MARGIN_T + inner_h / 2}" font-size="12" '
                 f'text-anchor="middle" transform="rotate(-90 18 '
                 f'{MARGIN_T + inner_h / 2})">sum rate [bits/s/Hz]</text>')

    for mi, method in enumerate(methods):
        color = PALETTE[mi % len(PALETTE)]
        rows = sorted((r for r in result.rows if r.method == method),
                      key=lambda r: r.value)
        points = " ".join(f"{_fmt(px(r.value))},{_fmt(py(r.mean_sum_rate))}"
                          for r in rows)
        for r in rows:
            if r.std_err > 0:
                x = _fmt(px(r.value))
                parts.append(f'<line x1="{x}" y1="{_fmt(py(r.mean_sum_rate - r.std_err))}" '
                             f'x2="{x}" y2="{_fmt(py(r.mean_sum_rate + r.std_err))}" '
                             f'stroke="{color}" stroke-width="1"/>')
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{points}"/>')
        ly = MARGIN_T + 14 + 16 * mi
        lx = WIDTH - MARGIN_R + 10
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{lx + 22}" y="{ly}" font-size="11">'
                     f'{method_label(method)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def plot_csv(csv_path: str, out_path: str) -> None:
    with open(csv_path, "r", encoding="utf-8") as fh:
        result = SweepResult.from_csv(fh.read())
    svg = render_sweep(result)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(svg)
