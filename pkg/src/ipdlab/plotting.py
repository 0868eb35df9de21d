"""First-party SVG line charts: per-seed metric curves reduced to a mean
line with a +-1 standard-deviation band (population convention: divide by
the number of seeds). Output is deterministic text."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractViolationError
from .metrics import MetricsRow

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 16, 28, 44


def aggregate_series(
    rows: list[MetricsRow], metric: str, outer: int | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray, str]:
    """Mean and population std across seeds for one metric.

    Aggregate rows (inner == -1) plot against the outer index; metrics that
    exist only as within-episode curves plot against the round index and, if
    several outer checkpoints exist, need ``outer`` to pick one.
    """
    mine = [r for r in rows if r.metric == metric]
    if not mine:
        raise ConfigError(f"metric {metric!r} not present in the given files")
    agg = [r for r in mine if r.inner == -1]
    if agg:
        x_label = "outer"
        points = {}
        for r in agg:
            points.setdefault(r.outer, {})[r.seed] = r.value
    else:
        outers = sorted({r.outer for r in mine})
        if outer is None:
            if len(outers) > 1:
                raise ConfigError(
                    f"metric {metric!r} is a within-episode curve recorded at "
                    f"outers {outers}; pass --outer to choose one"
                )
            outer = outers[0]
        mine = [r for r in mine if r.outer == outer]
        x_label = "round"
        points = {}
        for r in mine:
            points.setdefault(r.inner, {})[r.seed] = r.value
    xs = np.array(sorted(points))
    means = np.array([np.mean(list(points[x].values())) for x in xs])
    stds = np.array([np.std(list(points[x].values())) for x in xs])  # divide by n
    return xs, means, stds, x_label


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def render_line_chart(
    xs: np.ndarray,
    means: np.ndarray,
    stds: np.ndarray,
    title: str,
    x_label: str,
    y_label: str,
) -> str:
    if xs.size == 0:
        raise ContractViolationError("nothing to plot")
    x_min, x_max = float(xs.min()), float(xs.max())
    lo = means - stds
    hi = means + stds
    y_min, y_max = float(lo.min()), float(hi.max())
    if x_max == x_min:
        x_max = x_min + 1.0
    if y_max == y_min:
        y_max = y_min + 1.0
    pad = 0.05 * (y_max - y_min)
    y_min -= pad
    y_max += pad

    def px(x):
        return MARGIN_L + (x - x_min) / (x_max - x_min) * (WIDTH - MARGIN_L - MARGIN_R)

    def py(y):
        return HEIGHT - MARGIN_B - (y - y_min) / (y_max - y_min) * (HEIGHT - MARGIN_T - MARGIN_B)

    band = " ".join(
        f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xs, hi)
    ) + " " + " ".join(
        f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xs[::-1], lo[::-1])
    )
    line = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xs, means))

    x_ticks = np.linspace(x_min, x_max, num=min(6, max(2, xs.size)))
    y_ticks = np.linspace(y_min, y_max, num=5)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="18" text-anchor="middle" font-size="14">{title}</text>',
        f'<polygon points="{band}" fill="#9ecae1" fill-opacity="0.45" stroke="none"/>',
        f'<polyline points="{line}" fill="none" stroke="#1f77b4" stroke-width="1.8"/>',
        f'<line x1="{MARGIN_L}" y1="{HEIGHT - MARGIN_B}" x2="{WIDTH - MARGIN_R}" '
        f'y2="{HEIGHT - MARGIN_B}" stroke="black"/>',
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" '
        f'y2="{HEIGHT - MARGIN_B}" stroke="black"/>',
    ]
    for t in x_ticks:
        parts.append(
            f'<text x="{_fmt(px(t))}" y="{HEIGHT - MARGIN_B + 16}" text-anchor="middle" '
            f'font-size="10">{_fmt(t)}</text>'
        )
    for t in y_ticks:
        parts.append(
            f'<text x="{MARGIN_L - 6}" y="{_fmt(py(t) + 3)}" text-anchor="end" '
            f'font-size="10">{_fmt(t)}</text>'
        )
    parts.append(
        f'<text x="{(MARGIN_L + WIDTH - MARGIN_R) // 2}" y="{HEIGHT - 8}" '
        f'text-anchor="middle" font-size="12">{x_label}</text>'
    )
    parts.append(
        f'<text x="14" y="{(MARGIN_T + HEIGHT - MARGIN_B) // 2}" text-anchor="middle" '
        f'font-size="12" transform="rotate(-90 14 {(MARGIN_T + HEIGHT - MARGIN_B) // 2})">'
        f"{y_label}</text>"
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def plot_metric(
    rows: list[MetricsRow],
    metric: str,
    out_path: str | Path,
    outer: int | None = None,
    title: str | None = None,
) -> Path:
    xs, means, stds, x_label = aggregate_series(rows, metric, outer=outer)
    svg = render_line_chart(
        xs, means, stds,
        title=title or metric,
        x_label=x_label,
        y_label=metric,
    )
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(svg)
    return out_path
