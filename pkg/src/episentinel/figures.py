"""Static SVG figures: epidemic curves and the alert timeline.

Everything is rendered by hand into plain SVG so the output stays
dependency-free, diffable, and deterministic byte for byte. Elements
carry ``class`` and ``data-*`` attributes describing what they encode,
which keeps the files inspectable without pixel archaeology.
"""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .epidemic import EpidemicSeries
from .errors import InvalidParameterError
from .metrics import METRIC_NAMES
from .surveillance import SurveillanceDataset

_WIDTH = 900
_MARGIN_LEFT = 64
_MARGIN_RIGHT = 24
_INF_COLOR = "#4878a8"
_REPORT_COLOR = "#c45c3c"
_PCT_COLOR = "#7aa6c2"
_REF_COLOR = "#444444"
_MARKER_COLOR = "#8a4ea6"
_TEXT = 'font-family="sans-serif" fill="#333333"'


def _fmt(x: float) -> str:
    return f"{float(x):.2f}"


def _nice_step(span: float, target: int = 5) -> float:
    """A 1/2/5-style tick step giving roughly `target` divisions."""
    if span <= 0:
        return 1.0
    raw = span / target
    power = 10.0 ** np.floor(np.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if raw <= mult * power:
            return mult * power
    return 10.0 * power


def _ticks(vmax: float, target: int = 5) -> list[float]:
    step = _nice_step(vmax, target)
    return [i * step for i in range(int(np.floor(vmax / step)) + 1)]


def _value_panel(
    parts: list[str],
    days: np.ndarray,
    values: np.ndarray,
    top: float,
    height: float,
    title: str,
    color: str,
    css_class: str,
) -> None:
    """One bar panel: per-day rects, a y axis with ticks, and a title."""
    plot_w = _WIDTH - _MARGIN_LEFT - _MARGIN_RIGHT
    baseline = top + height
    vmax = max(float(values.max()), 1.0)
    x_of = lambda d: _MARGIN_LEFT + (d - days[0]) / max(len(days) - 1, 1) * plot_w
    bar_w = plot_w / len(days)
    parts.append(
        f'<text x="{_fmt(_MARGIN_LEFT)}" y="{_fmt(top - 8)}" font-size="14" {_TEXT}>'
        f"{escape(title)}</text>"
    )
    for tick in _ticks(vmax, 4):
        y = baseline - tick / vmax * height
        parts.append(
            f'<line x1="{_fmt(_MARGIN_LEFT)}" y1="{_fmt(y)}" x2="{_fmt(_WIDTH - _MARGIN_RIGHT)}"'
            f' y2="{_fmt(y)}" stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{_fmt(_MARGIN_LEFT - 8)}" y="{_fmt(y + 4)}" font-size="11"'
            f' text-anchor="end" {_TEXT}>{_fmt(tick)}</text>'
        )
    for day, value in zip(days, values):
        bar_h = float(value) / vmax * height
        parts.append(
            f'<rect x="{_fmt(x_of(day) - bar_w / 2)}" y="{_fmt(baseline - bar_h)}"'
            f' width="{_fmt(bar_w)}" height="{_fmt(bar_h)}" fill="{color}"'
            f' class="{css_class}" data-day="{int(day)}"/>'
        )
    parts.append(
        f'<line x1="{_fmt(_MARGIN_LEFT)}" y1="{_fmt(baseline)}" x2="{_fmt(_WIDTH - _MARGIN_RIGHT)}"'
        f' y2="{_fmt(baseline)}" stroke="#999999" stroke-width="1"/>'
    )
    for tick in _ticks(float(days[-1]), 6):
        if tick < days[0]:
            continue
        parts.append(
            f'<text x="{_fmt(x_of(tick))}" y="{_fmt(baseline + 16)}" font-size="11"'
            f' text-anchor="middle" {_TEXT}>{int(tick)}</text>'
        )


def _document(parts: list[str], height: int) -> str:
    head = (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{height}"'
        f' viewBox="0 0 {_WIDTH} {height}">\n'
        f'<rect x="0" y="0" width="{_WIDTH}" height="{height}" fill="#ffffff"/>\n'
    )
    return head + "\n".join(parts) + "\n</svg>\n"


def emit_epidemic_figure(series: EpidemicSeries, path: str | Path) -> None:
    """Two stacked daily bar panels: new infections and reported cases."""
    if series.T < 1:
        raise InvalidParameterError("epidemic series is empty")
    days = np.arange(1, series.T + 1)
    panel_h, gap, top0 = 190.0, 64.0, 36.0
    parts: list[str] = []
    _value_panel(parts, days, series.new_inf, top0, panel_h, "New infections per day", _INF_COLOR, "inf-bar")
    _value_panel(
        parts,
        days,
        series.reported,
        top0 + panel_h + gap,
        panel_h,
        "Reported cases per day",
        _REPORT_COLOR,
        "reported-bar",
    )
    bottom = top0 + 2 * panel_h + gap
    parts.append(
        f'<text x="{_fmt(_WIDTH / 2)}" y="{_fmt(bottom + 36)}" font-size="12"'
        f' text-anchor="middle" {_TEXT}>Day</text>'
    )
    Path(path).write_text(_document(parts, int(bottom + 48)), encoding="utf-8")


def _area_points(
    days: np.ndarray, values: np.ndarray, vmax: float, baseline: float, height: float
) -> str:
    plot_w = _WIDTH - _MARGIN_LEFT - _MARGIN_RIGHT
    x_of = lambda d: _MARGIN_LEFT + (d - days[0]) / max(len(days) - 1, 1) * plot_w
    pts = [f"{_fmt(x_of(days[0]))},{_fmt(baseline)}"]
    for day, value in zip(days, values):
        pts.append(f"{_fmt(x_of(day))},{_fmt(baseline - float(value) / vmax * height)}")
    pts.append(f"{_fmt(x_of(days[-1]))},{_fmt(baseline)}")
    return " ".join(pts)


def emit_alert_figure(
    year_rows: SurveillanceDataset,
    alert_days: dict[str, int | None],
    ref: int,
    path: str | Path,
) -> None:
    """Absenteeism and reported-case areas, the reference line, and one
    marker row per metric whose tuned model raised an alert."""
    days = np.asarray(year_rows.data["Date"], dtype=np.int64)
    if days.size == 0:
        raise InvalidParameterError("year slice holds no rows")
    if not days.min() <= ref <= days.max():
        raise InvalidParameterError(
            f"reference day {ref} falls outside days {days.min()}..{days.max()}"
        )
    pct = np.asarray(year_rows.data["pct_absent"], dtype=float)
    reported = np.asarray(year_rows.data["reported_cases"], dtype=float)
    panel_h, top0 = 220.0, 36.0
    plot_w = _WIDTH - _MARGIN_LEFT - _MARGIN_RIGHT
    baseline = top0 + panel_h
    x_of = lambda d: _MARGIN_LEFT + (d - days[0]) / max(len(days) - 1, 1) * plot_w
    parts: list[str] = []
    parts.append(
        f'<text x="{_fmt(_MARGIN_LEFT)}" y="{_fmt(top0 - 10)}" font-size="14" {_TEXT}>'
        "School absenteeism, reported cases, and tuned alert days</text>"
    )
    pct_max = max(float(pct.max()), 1e-9)
    rep_max = max(float(reported.max()), 1.0)
    parts.append(
        f'<polygon points="{_area_points(days, pct, pct_max, baseline, panel_h)}"'
        f' fill="{_PCT_COLOR}" fill-opacity="0.55" stroke="none" class="pct-area"/>'
    )
    parts.append(
        f'<polygon points="{_area_points(days, reported, rep_max, baseline, panel_h * 0.8)}"'
        f' fill="{_REPORT_COLOR}" fill-opacity="0.5" stroke="none" class="reported-area"/>'
    )
    parts.append(
        f'<line x1="{_fmt(x_of(ref))}" y1="{_fmt(top0)}" x2="{_fmt(x_of(ref))}"'
        f' y2="{_fmt(baseline)}" stroke="{_REF_COLOR}" stroke-width="1.5"'
        f' stroke-dasharray="6 4" class="ref-line" data-day="{int(ref)}"/>'
    )
    parts.append(
        f'<text x="{_fmt(x_of(ref) + 5)}" y="{_fmt(top0 + 14)}" font-size="11" {_TEXT}>'
        f"reference day {int(ref)}</text>"
    )
    parts.append(
        f'<line x1="{_fmt(_MARGIN_LEFT)}" y1="{_fmt(baseline)}" x2="{_fmt(_WIDTH - _MARGIN_RIGHT)}"'
        f' y2="{_fmt(baseline)}" stroke="#999999" stroke-width="1"/>'
    )
    for tick in _ticks(float(days[-1]), 6):
        if tick < days[0]:
            continue
        parts.append(
            f'<text x="{_fmt(x_of(tick))}" y="{_fmt(baseline + 16)}" font-size="11"'
            f' text-anchor="middle" {_TEXT}>{int(tick)}</text>'
        )
    # legend for the two filled series
    legend_y = top0 + 8
    for label, color in (("% absent", _PCT_COLOR), ("reported cases", _REPORT_COLOR)):
        parts.append(
            f'<rect x="{_fmt(_WIDTH - 200)}" y="{_fmt(legend_y)}" width="14" height="10"'
            f' fill="{color}" fill-opacity="0.6"/>'
        )
        parts.append(
            f'<text x="{_fmt(_WIDTH - 182)}" y="{_fmt(legend_y + 9)}" font-size="11" {_TEXT}>'
            f"{escape(label)}</text>"
        )
        legend_y += 16
    row_y = baseline + 34.0
    silent: list[str] = []
    for name in METRIC_NAMES:
        day = alert_days.get(name)
        if day is None:
            silent.append(name)
            continue
        parts.append(
            f'<text x="{_fmt(_MARGIN_LEFT - 8)}" y="{_fmt(row_y + 4)}" font-size="11"'
            f' text-anchor="end" {_TEXT}>{escape(name)}</text>'
        )
        parts.append(
            f'<line x1="{_fmt(_MARGIN_LEFT)}" y1="{_fmt(row_y)}" x2="{_fmt(_WIDTH - _MARGIN_RIGHT)}"'
            f' y2="{_fmt(row_y)}" stroke="#eeeeee" stroke-width="1"/>'
        )
        parts.append(
            f'<circle cx="{_fmt(x_of(int(day)))}" cy="{_fmt(row_y)}" r="5"'
            f' fill="{_MARKER_COLOR}" class="alert-marker" data-metric="{escape(name)}"'
            f' data-day="{int(day)}"/>'
        )
        row_y += 20.0
    if silent:
        parts.append(
            f'<text x="{_fmt(_MARGIN_LEFT)}" y="{_fmt(row_y + 6)}" font-size="11"'
            f' {_TEXT} class="no-alert-note">No alerts raised: {escape(", ".join(silent))}</text>'
        )
        row_y += 20.0
    Path(path).write_text(_document(parts, int(row_y + 24)), encoding="utf-8")
