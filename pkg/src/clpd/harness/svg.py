"""Self-contained SVG charts (no plotting dependency).

Two chart kinds cover the report surface: error-bar line charts for sweeps
and grouped bar charts for the competence/alignment grid.  Output is
byte-stable for identical inputs.
"""

from __future__ import annotations

from pathlib import Path

from clpd.harness.artifacts import provenance_line

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 70, 20, 40, 60


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _ticks(lo: float, hi: float, n: int = 6) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    return [lo + span * i / (n - 1) for i in range(n)]


def _axes(lines, x_lo, x_hi, y_lo, y_hi, x_label, y_label, title, x_ticks=True):
    def sx(x):
        return _ML + (x - x_lo) / (x_hi - x_lo) * (_W - _ML - _MR)

    def sy(y):
        return _H - _MB - (y - y_lo) / (y_hi - y_lo) * (_H - _MT - _MB)

    lines.append(
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>'
    )
    lines.append(
        f'<text x="{_W / 2:.1f}" y="22" text-anchor="middle" '
        f'font-size="15" font-family="sans-serif">{title}</text>'
    )
    for y in _ticks(y_lo, y_hi):
        py = sy(y)
        lines.append(
            f'<line x1="{_ML}" y1="{py:.1f}" x2="{_W - _MR}" y2="{py:.1f}" '
            'stroke="#dddddd" stroke-width="1"/>'
        )
        lines.append(
            f'<text x="{_ML - 6}" y="{py + 4:.1f}" text-anchor="end" '
            f'font-size="11" font-family="sans-serif">{_fmt(y)}</text>'
        )
    if x_ticks:
        for x in _ticks(x_lo, x_hi):
            px = sx(x)
            lines.append(
                f'<text x="{px:.1f}" y="{_H - _MB + 16}" text-anchor="middle" '
                f'font-size="11" font-family="sans-serif">{_fmt(x)}</text>'
            )
    lines.append(
        f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" '
        'stroke="black" stroke-width="1"/>'
    )
    lines.append(
        f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" '
        'stroke="black" stroke-width="1"/>'
    )
    lines.append(
        f'<text x="{_W / 2:.1f}" y="{_H - 16}" text-anchor="middle" '
        f'font-size="13" font-family="sans-serif">{x_label}</text>'
    )
    lines.append(
        f'<text x="18" y="{_H / 2:.1f}" text-anchor="middle" font-size="13" '
        f'font-family="sans-serif" transform="rotate(-90 18 {_H / 2:.1f})">{y_label}</text>'
    )
    return sx, sy


def line_chart(path, series, x_label, y_label, title, prov: dict) -> None:
    """series: list of {label, points: [(x, mean, std), ...]}."""
    xs = [p[0] for s in series for p in s["points"]]
    ys = [p[1] + p[2] for s in series for p in s["points"]]
    ys += [p[1] - p[2] for s in series for p in s["points"]]
    x_lo, x_hi = min(xs), max(xs)
    pad = 0.05 * (max(ys) - min(ys) or 1.0)
    y_lo, y_hi = min(ys) - pad, max(ys) + pad

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f"<!-- {provenance_line(prov)} -->",
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
    ]
    sx, sy = _axes(lines, x_lo, x_hi, y_lo, y_hi, x_label, y_label, title)
    for i, s in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y, _ in s["points"])
        lines.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        for x, y, err in s["points"]:
            px, py = sx(x), sy(y)
            lines.append(
                f'<circle cx="{px:.1f}" cy="{py:.1f}" r="3" fill="{color}"/>'
            )
            if err > 0:
                lines.append(
                    f'<line x1="{px:.1f}" y1="{sy(y - err):.1f}" x2="{px:.1f}" '
                    f'y2="{sy(y + err):.1f}" stroke="{color}" stroke-width="1"/>'
                )
        lines.append(
            f'<rect x="{_W - _MR - 150}" y="{_MT + 18 * i}" width="12" height="12" '
            f'fill="{color}"/>'
        )
        lines.append(
            f'<text x="{_W - _MR - 132}" y="{_MT + 18 * i + 10}" font-size="12" '
            f'font-family="sans-serif">{s["label"]}</text>'
        )
    lines.append("</svg>")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def grouped_bar_chart(path, group_labels, series, y_label, title, prov: dict) -> None:
    """series: list of {label, values: [v per group]}; bars grouped by label."""
    values = [v for s in series for v in s["values"]]
    y_lo = min(0.0, min(values))
    y_hi = max(values) * 1.1 if max(values) > 0 else 1.0

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f"<!-- {provenance_line(prov)} -->",
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
    ]
    sx, sy = _axes(
        lines, 0.0, float(len(group_labels)), y_lo, y_hi, "", y_label, title,
        x_ticks=False,
    )
    n_series = len(series)
    slot = (_W - _ML - _MR) / len(group_labels)
    bar = slot * 0.8 / n_series
    for gi, glabel in enumerate(group_labels):
        for si, s in enumerate(series):
            color = _COLORS[si % len(_COLORS)]
            v = s["values"][gi]
            x0 = _ML + gi * slot + slot * 0.1 + si * bar
            lines.append(
                f'<rect x="{x0:.1f}" y="{sy(max(v, 0.0)):.1f}" width="{bar:.1f}" '
                f'height="{abs(sy(0.0) - sy(v)):.1f}" fill="{color}"/>'
            )
        lines.append(
            f'<text x="{_ML + gi * slot + slot / 2:.1f}" y="{_H - _MB + 16}" '
            f'text-anchor="middle" font-size="11" font-family="sans-serif">{glabel}</text>'
        )
    for si, s in enumerate(series):
        color = _COLORS[si % len(_COLORS)]
        lines.append(
            f'<rect x="{_W - _MR - 150}" y="{_MT + 18 * si}" width="12" height="12" '
            f'fill="{color}"/>'
        )
        lines.append(
            f'<text x="{_W - _MR - 132}" y="{_MT + 18 * si + 10}" font-size="12" '
            f'font-family="sans-serif">{s["label"]}</text>'
        )
    lines.append("</svg>")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
