"""Minimal self-contained SVG line charts (no plotting dependency, no
timestamps, so outputs are byte-stable under a fixed seed)."""

from __future__ import annotations

import math

WIDTH, HEIGHT = 720, 480
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 160, 40, 55

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
           "#8c564b", "#17becf", "#7f7f7f"]


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(step))
    for m in (1, 2, 2.5, 5, 10):
        if step <= m * mag:
            step = m * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.1e}"
    return f"{v:g}"


def line_chart(series: list[tuple[str, list[float], list[float]]],
               xlabel: str, ylabel: str, title: str = "",
               target_y: float | None = None, log_x: bool = False) -> str:
    """Render named (x, y) series; `target_y` draws a dashed horizontal line."""
    pts = [(x, y) for _, xs, ys in series for x, y in zip(xs, ys)
           if not (log_x and x <= 0)]
    if not pts:
        raise ValueError("no data to plot")
    xs_all = [p[0] for p in pts]
    ys_all = [p[1] for p in pts]
    if log_x:
        x_lo, x_hi = math.log10(min(xs_all)), math.log10(max(xs_all))
    else:
        x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if target_y is not None:
        y_lo, y_hi = min(y_lo, target_y), max(y_hi, target_y)
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0

    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def px(x: float) -> float:
        v = math.log10(x) if log_x else x
        return MARGIN_L + (v - x_lo) / (x_hi - x_lo) * plot_w

    def py(y: float) -> float:
        return MARGIN_T + (1 - (y - y_lo) / (y_hi - y_lo)) * plot_h

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" '
                   f'font-size="15">{title}</text>')

    # axes and ticks
    x0, y0 = MARGIN_L, MARGIN_T + plot_h
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0 + plot_w}" y2="{y0}" stroke="black"/>')
    out.append(f'<line x1="{x0}" y1="{MARGIN_T}" x2="{x0}" y2="{y0}" stroke="black"/>')
    if log_x:
        lo_dec, hi_dec = math.floor(x_lo), math.ceil(x_hi)
        xticks = [10.0 ** d for d in range(lo_dec, hi_dec + 1)
                  if x_lo - 1e-9 <= d <= x_hi + 1e-9]
    else:
        xticks = _nice_ticks(x_lo, x_hi)
    for t in xticks:
        x = px(t) if not log_x else px(t)
        out.append(f'<line x1="{x:.1f}" y1="{y0}" x2="{x:.1f}" y2="{y0 + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.1f}" y="{y0 + 18}" text-anchor="middle">{_fmt(t)}</text>')
    for t in _nice_ticks(y_lo, y_hi):
        y = py(t)
        out.append(f'<line x1="{x0 - 5}" y1="{y:.1f}" x2="{x0}" y2="{y:.1f}" stroke="black"/>')
        out.append(f'<text x="{x0 - 8}" y="{y + 4:.1f}" text-anchor="end">{_fmt(t)}</text>')
    out.append(f'<text x="{x0 + plot_w / 2:.1f}" y="{HEIGHT - 12}" '
               f'text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="18" y="{MARGIN_T + plot_h / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {MARGIN_T + plot_h / 2:.1f})">{ylabel}</text>')

    if target_y is not None:
        y = py(target_y)
        out.append(f'<line x1="{x0}" y1="{y:.1f}" x2="{x0 + plot_w}" y2="{y:.1f}" '
                   f'stroke="black" stroke-dasharray="6 4"/>')

    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, ys)
                          if not (log_x and x <= 0))
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                   f'stroke-width="1.5"/>')
        ly = MARGIN_T + 16 * i + 10
        lx = MARGIN_L + plot_w + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 22}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 27}" y="{ly + 4}">{label}</text>')

    out.append("</svg>")
    return "\n".join(out) + "\n"
