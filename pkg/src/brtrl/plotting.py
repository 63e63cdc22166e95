"""Dependency-free SVG learning curves."""
from __future__ import annotations

import csv
from html import escape

import numpy as np

WIDTH, HEIGHT = 800, 500
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 70, 20, 40, 60
RAW_STYLE = 'fill="none" stroke="#9ecae1" stroke-width="1"'
AVG_STYLE = 'fill="none" stroke="#08519c" stroke-width="2.5"'


def read_curve(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``episode`` and ``total_reward`` columns from a curve CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"episode", "total_reward"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: CSV needs 'episode' and 'total_reward' columns")
        episodes, rewards = [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                episodes.append(float(row["episode"]))
                rewards.append(float(row["total_reward"]))
            except (TypeError, ValueError):
                raise ValueError(f"{path}:{lineno}: malformed row {row!r}") from None
    if not episodes:
        raise ValueError(f"{path}: no data rows to plot")
    return np.array(episodes), np.array(rewards)


def trailing_mean(values, window: int) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    out = np.empty_like(v)
    acc = 0.0
    for i, x in enumerate(v):
        acc += x
        if i >= window:
            acc -= v[i - window]
        out[i] = acc / min(i + 1, window)
    return out


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_svg(episodes, rewards, window: int = 100, title: str = "") -> str:
    episodes = np.asarray(episodes, dtype=float)
    rewards = np.asarray(rewards, dtype=float)
    if len(episodes) == 0:
        raise ValueError("no data to plot")
    if window < 1:
        raise ValueError("window must be >= 1")
    avg = trailing_mean(rewards, window)
    x_lo, x_hi = float(episodes.min()), float(episodes.max())
    y_lo, y_hi = float(rewards.min()), float(rewards.max())
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 1, x_hi + 1
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 1, y_hi + 1
    plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

    def px(x):
        return MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y):
        return MARGIN_TOP + (y_hi - y) / (y_hi - y_lo) * plot_h

    def polyline(ys, style):
        pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(episodes, ys))
        return f'<polyline points="{pts}" {style}/>'

    x0, y0 = MARGIN_LEFT, MARGIN_TOP + plot_h
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0 + plot_w}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{MARGIN_TOP}" x2="{x0}" y2="{y0}" stroke="black"/>',
    ]
    for t in _ticks(x_lo, x_hi):
        x = _fmt(px(t))
        out.append(f'<line x1="{x}" y1="{y0}" x2="{x}" y2="{y0 + 5}" stroke="black"/>')
        out.append(f'<text x="{x}" y="{y0 + 20}" font-size="12" text-anchor="middle">{t:.6g}</text>')
    for t in _ticks(y_lo, y_hi):
        y = _fmt(py(t))
        out.append(f'<line x1="{x0 - 5}" y1="{y}" x2="{x0}" y2="{y}" stroke="black"/>')
        out.append(f'<text x="{x0 - 8}" y="{y}" font-size="12" text-anchor="end" dominant-baseline="middle">{t:.6g}</text>')
    out += [
        f'<text x="{x0 + plot_w / 2:.2f}" y="{HEIGHT - 15}" font-size="14" text-anchor="middle">episode</text>',
        f'<text x="18" y="{MARGIN_TOP + plot_h / 2:.2f}" font-size="14" text-anchor="middle" '
        f'transform="rotate(-90 18 {MARGIN_TOP + plot_h / 2:.2f})">total reward</text>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.2f}" y="24" font-size="16" text-anchor="middle">{escape(title)}</text>')
    out += [
        polyline(rewards, RAW_STYLE),
        polyline(avg, AVG_STYLE),
        f'<text x="{WIDTH - MARGIN_RIGHT}" y="{MARGIN_TOP - 8}" font-size="12" text-anchor="end">'
        f'raw (light), {window}-episode moving average (bold)</text>',
        "</svg>",
    ]
    return "\n".join(out) + "\n"


def plot_curve(csv_path, window: int = 100, title: str = "") -> str:
    episodes, rewards = read_curve(csv_path)
    return render_svg(episodes, rewards, window, title)
