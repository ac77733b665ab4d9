"""Chart rendering as standalone SVG text.

Charts are built from already-aggregated table rows and contain nothing
run-dependent: coordinates are formatted to fixed precision and there are
no timestamps or generator tags, so byte-identical inputs give
byte-identical SVG files.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

from .errors import ComputationError

__all__ = ["trade_volume_chart", "sector_share_chart", "lorenz_chart"]

_WIDTH = 640.0
_HEIGHT = 400.0
_LEFT, _RIGHT, _TOP, _BOTTOM = 75.0, 25.0, 40.0, 50.0
_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _f(value: float) -> str:
    return f"{value:.2f}"


def _text(x: float, y: float, content: str, size: int = 12, anchor: str = "start") -> str:
    return (
        f'<text x="{_f(x)}" y="{_f(y)}" font-family="sans-serif" '
        f'font-size="{size}" text-anchor="{anchor}">{escape(content)}</text>'
    )


def _line(x1: float, y1: float, x2: float, y2: float, stroke: str = "#333333",
          width: float = 1.0, dash: str = "") -> str:
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return (
        f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
        f'stroke="{stroke}" stroke-width="{_f(width)}"{extra}/>'
    )


def _polyline(points: list[tuple[float, float]], stroke: str) -> str:
    coords = " ".join(f"{_f(x)},{_f(y)}" for x, y in points)
    return (
        f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
        f'stroke-width="2.00"/>'
    )


def _document(body: list[str], width: float = _WIDTH, height: float = _HEIGHT) -> str:
    head = (
        '<svg xmlns="http://www.w3.org/2000/svg" '
        f'width="{_f(width)}" height="{_f(height)}" '
        f'viewBox="0 0 {_f(width)} {_f(height)}">'
    )
    return "\n".join([head, *body, "</svg>"]) + "\n"


def _usd_label(value: float) -> str:
    for unit, name in ((1e12, "T"), (1e9, "B"), (1e6, "M"), (1e3, "k")):
        if abs(value) >= unit:
            return f"{value / unit:.1f}{name}"
    return f"{value:.0f}"


def _y_axis(lo: float, hi: float, labeler) -> tuple[list[str], float, float]:
    """Horizontal grid lines with labels; returns (elements, lo, hi)."""
    if hi <= lo:
        hi = lo + 1.0
    parts = []
    plot_h = _HEIGHT - _TOP - _BOTTOM
    for i in range(5):
        v = lo + (hi - lo) * i / 4
        y = _HEIGHT - _BOTTOM - plot_h * i / 4
        parts.append(_line(_LEFT, y, _WIDTH - _RIGHT, y, "#dddddd"))
        parts.append(_text(_LEFT - 6, y + 4, labeler(v), 11, "end"))
    return parts, lo, hi


def trade_volume_chart(series: dict[str, list[tuple[int, float]]]) -> str:
    """Line chart of yearly totals, one line per named series."""
    if not series or all(not pts for pts in series.values()):
        raise ComputationError("no series to chart")
    years = sorted({year for pts in series.values() for year, _ in pts})
    top = max(value for pts in series.values() for _, value in pts)
    body = [_text(_LEFT, 22, "Trade volume by year", 15)]
    grid, lo, hi = _y_axis(0.0, top * 1.05, _usd_label)
    body.extend(grid)

    plot_w = _WIDTH - _LEFT - _RIGHT
    plot_h = _HEIGHT - _TOP - _BOTTOM
    span = max(years[-1] - years[0], 1)

    def sx(year: int) -> float:
        return _LEFT + plot_w * (year - years[0]) / span

    def sy(value: float) -> float:
        return _HEIGHT - _BOTTOM - plot_h * (value - lo) / (hi - lo)

    for year in years:
        body.append(_line(sx(year), _HEIGHT - _BOTTOM, sx(year), _HEIGHT - _BOTTOM + 4))
        body.append(_text(sx(year), _HEIGHT - _BOTTOM + 18, str(year), 11, "middle"))
    body.append(
        _line(_LEFT, _HEIGHT - _BOTTOM, _WIDTH - _RIGHT, _HEIGHT - _BOTTOM)
    )
    body.append(_line(_LEFT, _TOP, _LEFT, _HEIGHT - _BOTTOM))

    for k, name in enumerate(sorted(series)):
        color = _PALETTE[k % len(_PALETTE)]
        pts = sorted(series[name])
        body.append(_polyline([(sx(y), sy(v)) for y, v in pts], color))
        for y, v in pts:
            body.append(
                f'<circle cx="{_f(sx(y))}" cy="{_f(sy(v))}" r="3.00" fill="{color}"/>'
            )
        ly = _TOP + 8 + 16 * k
        body.append(_line(_WIDTH - _RIGHT - 120, ly, _WIDTH - _RIGHT - 100, ly, color, 2.0))
        body.append(_text(_WIDTH - _RIGHT - 94, ly + 4, name, 11))
    return _document(body)


def sector_share_chart(shares: dict[str, float], year: int) -> str:
    """Horizontal bars of per-sector shares, largest first."""
    if not shares:
        raise ComputationError("no sector shares to chart")
    ranked = sorted(shares.items(), key=lambda kv: (-kv[1], kv[0]))
    bar_h, gap = 18.0, 6.0
    height = _TOP + len(ranked) * (bar_h + gap) + 30.0
    label_w = 170.0
    plot_w = _WIDTH - label_w - _RIGHT - 60.0
    top_share = ranked[0][1]
    body = [_text(label_w, 22, f"Sector shares of cross-border flows, {year}", 15)]
    for k, (sector, share) in enumerate(ranked):
        y = _TOP + k * (bar_h + gap)
        w = plot_w * (share / top_share if top_share > 0 else 0.0)
        body.append(_text(label_w - 8, y + bar_h - 5, sector, 11, "end"))
        body.append(
            f'<rect x="{_f(label_w)}" y="{_f(y)}" width="{_f(w)}" '
            f'height="{_f(bar_h)}" fill="{_PALETTE[0]}"/>'
        )
        body.append(_text(label_w + w + 6, y + bar_h - 5, f"{share * 100:.1f}%", 11))
    return _document(body, _WIDTH, height)


def lorenz_chart(curves: dict[str, list[tuple[float, float]]]) -> str:
    """Cumulative-share curves against the equality diagonal."""
    if not curves or all(not pts for pts in curves.values()):
        raise ComputationError("no curves to chart")
    side = 320.0
    left, top = 90.0, 40.0
    width = left + side + 160.0
    height = top + side + 60.0

    def sx(x: float) -> float:
        return left + side * x

    def sy(y: float) -> float:
        return top + side * (1.0 - y)

    body = [_text(left, 22, "Export concentration (cumulative shares)", 15)]
    for i in range(5):
        frac = i / 4
        body.append(_line(sx(frac), top, sx(frac), top + side, "#dddddd"))
        body.append(_line(left, sy(frac), left + side, sy(frac), "#dddddd"))
        body.append(_text(sx(frac), top + side + 16, f"{frac:.2f}", 10, "middle"))
        body.append(_text(left - 6, sy(frac) + 4, f"{frac:.2f}", 10, "end"))
    body.append(_line(sx(0), sy(0), sx(1), sy(1), "#888888", 1.0, "4 3"))
    for k, name in enumerate(sorted(curves)):
        color = _PALETTE[k % len(_PALETTE)]
        pts = sorted(curves[name])
        if any(not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0) or not math.isfinite(x + y)
               for x, y in pts):
            raise ComputationError(f"curve {name!r} leaves the unit square")
        body.append(_polyline([(sx(x), sy(y)) for x, y in pts], color))
        ly = top + 8 + 16 * k
        body.append(_line(left + side + 18, ly, left + side + 38, ly, color, 2.0))
        body.append(_text(left + side + 44, ly + 4, name, 11))
    body.append(_text(left + side / 2, height - 14, "share of exporters", 11, "middle"))
    return _document(body, width, height)
