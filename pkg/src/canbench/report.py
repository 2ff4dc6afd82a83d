"""CSV sweep tables, dependency-free SVG trend plots and the static impact table."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from html import escape
from pathlib import Path
from typing import Sequence

from .bench import RegressionFit, SweepRecord, fit_linear_regression

CSV_HEADER = "model,param,value,n_done,elapsed_s,est_total_s,at_time_s,slope,intercept,r2"

ATTACK_Y_LABEL = "Estimated Time for Attacks (seconds)"
TRAINING_Y_LABEL = "Estimated Time for Training (seconds)"
X_LABELS = {"n_trees": "Number of Estimators (number of trees)",
            "n_rounds": "Number of Estimators (number of boosting rounds)"}

IMPACT_ROWS = (
    ("Detection", "VH", "Gain of time to detect/respond to VAPT attempt"),
    ("Response", "VH", "Gain of time to detect/respond to VAPT attempt"),
    ("Prevention", "H", "Improve deterrence"),
)


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class SweepTable:
    records: tuple[SweepRecord, ...]
    fit: RegressionFit | None
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_records(cls, records: Sequence[SweepRecord], kind: str = "attack-time",
                     **metadata) -> SweepTable:
        """Table whose fit is recomputed from exactly ``records``."""
        records = tuple(records)
        key = _y_getter(kind)
        fit = None
        if len({r.value for r in records}) >= 2:
            fit = fit_linear_regression([(r.value, key(r)) for r in records])
        return cls(records, fit, {"kind": kind, **metadata})


def _y_getter(kind: str):
    if kind == "attack-time":
        return lambda r: r.est_total
    if kind == "at-time":
        return lambda r: r.at_time
    raise ReportError(f"unknown plot kind {kind!r}")


def _g(x) -> str:
    return "" if x is None else f"{x:.6g}"


def sweep_csv_text(table: SweepTable) -> str:
    fit = table.fit
    fit_cols = [_g(fit.slope), _g(fit.intercept), _g(fit.r2)] if fit else ["", "", ""]
    lines = [CSV_HEADER]
    for r in table.records:
        lines.append(",".join([r.model_kind, r.param, str(r.value), str(r.n_done),
                               _g(r.elapsed), _g(r.est_total), _g(r.at_time), *fit_cols]))
    return "\n".join(lines) + "\n"


def emit_sweep_csv(table: SweepTable, destination) -> int:
    return _write(destination, sweep_csv_text(table))


def parse_sweep_csv(text: str) -> tuple[list[SweepRecord], RegressionFit | None]:
    lines = text.rstrip("\n").split("\n")
    if lines[0] != CSV_HEADER:
        raise ReportError("unexpected sweep CSV header")
    records, fit = [], None
    for line in lines[1:]:
        f = line.split(",")
        if len(f) != 10:
            raise ReportError(f"bad sweep CSV row: {line!r}")
        records.append(SweepRecord(f[0], f[1], int(f[2]), int(f[3]), float(f[4]), float(f[5]),
                                   float(f[6]) if f[6] else None))
        if f[7]:
            fit = RegressionFit(float(f[7]), float(f[8]), float(f[9]), len(lines) - 1)
    return records, fit


def _write(destination, text: str) -> int:
    data = text.encode("utf-8")
    if hasattr(destination, "write"):
        if isinstance(destination, io.TextIOBase):
            destination.write(text)
        else:
            destination.write(data)
    else:
        Path(destination).write_bytes(data)
    return len(data)


# SVG -------------------------------------------------------------------------

WIDTH, HEIGHT = 640, 420
MARGIN = {"left": 90, "right": 30, "top": 40, "bottom": 70}


@dataclass(frozen=True)
class PlotFrame:
    """Linear data -> pixel mapping with 5% padding on both axes."""

    x0: float
    x1: float
    y0: float
    y1: float

    @classmethod
    def around(cls, xs: Sequence[float], ys: Sequence[float]) -> PlotFrame:
        def padded(lo, hi):
            span = hi - lo
            pad = 0.05 * span if span > 0 else max(abs(lo) * 0.05, 1.0)
            return lo - pad, hi + pad
        return cls(*padded(min(xs), max(xs)), *padded(min(ys), max(ys)))

    def px(self, x: float) -> float:
        inner = WIDTH - MARGIN["left"] - MARGIN["right"]
        return MARGIN["left"] + (x - self.x0) / (self.x1 - self.x0) * inner

    def py(self, y: float) -> float:
        inner = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
        return HEIGHT - MARGIN["bottom"] - (y - self.y0) / (self.y1 - self.y0) * inner


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    return [lo + (hi - lo) * i / n for i in range(n + 1)]


def sweep_svg_text(table: SweepTable, kind: str = "attack-time") -> str:
    if not table.records:
        raise ReportError("cannot plot an empty sweep")
    get_y = _y_getter(kind)
    xs = [float(r.value) for r in table.records]
    ys = [float(get_y(r)) for r in table.records]
    fit = table.fit
    line_ys = [fit.slope * x + fit.intercept for x in (min(xs), max(xs))] if fit else []
    frame = PlotFrame.around(xs, ys + line_ys)
    param = table.records[0].param
    x_label = X_LABELS.get(param, param)
    y_label = ATTACK_Y_LABEL if kind == "attack-time" else TRAINING_Y_LABEL
    model = table.records[0].model_kind

    left, bottom = MARGIN["left"], HEIGHT - MARGIN["bottom"]
    right, top = WIDTH - MARGIN["right"], MARGIN["top"]
    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<title>{escape(model)}: {escape(y_label)}</title>',
        '<rect x="0" y="0" width="100%" height="100%" fill="white"/>',
        f'<path class="axes" d="M{left},{top} L{left},{bottom} L{right},{bottom}" '
        'fill="none" stroke="black"/>',
    ]
    for t in _ticks(frame.x0, frame.x1):
        px = frame.px(t)
        out.append(f'<path class="tick" d="M{px:.3f},{bottom} v5" stroke="black"/>')
        out.append(f'<text class="tick-label" x="{px:.3f}" y="{bottom + 18}" '
                   f'text-anchor="middle" font-size="11">{t:.4g}</text>')
    for t in _ticks(frame.y0, frame.y1):
        py = frame.py(t)
        out.append(f'<path class="tick" d="M{left},{py:.3f} h-5" stroke="black"/>')
        out.append(f'<text class="tick-label" x="{left - 8}" y="{py + 4:.3f}" '
                   f'text-anchor="end" font-size="11">{t:.4g}</text>')
    out.append(f'<text class="x-label" x="{(left + right) / 2}" y="{HEIGHT - 20}" '
               f'text-anchor="middle" font-size="13">{escape(x_label)}</text>')
    out.append(f'<text class="y-label" x="20" y="{(top + bottom) / 2}" text-anchor="middle" '
               f'font-size="13" transform="rotate(-90 20 {(top + bottom) / 2})">'
               f'{escape(y_label)}</text>')
    for x, y in zip(xs, ys):
        out.append(f'<circle class="marker" cx="{frame.px(x):.6f}" cy="{frame.py(y):.6f}" '
                   'r="4" fill="steelblue"/>')
    if fit:
        x_lo, x_hi = min(xs), max(xs)
        out.append(f'<line class="fit" x1="{frame.px(x_lo):.6f}" y1="{frame.py(line_ys[0]):.6f}" '
                   f'x2="{frame.px(x_hi):.6f}" y2="{frame.py(line_ys[1]):.6f}" '
                   'stroke="firebrick" stroke-width="2"/>')
        legend = (f"Lin. Reg.: y = {fit.slope:.6g} x + {fit.intercept:.6g} "
                  f"(R^2 = {fit.r2:.4g})")
    else:
        legend = "Lin. Reg.: n/a (single point)"
    out.append(f'<text class="legend" x="{left + 10}" y="{top - 12}" font-size="12">'
               f'{escape(model)} | {escape(legend)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_svg_plot(table: SweepTable, kind: str, destination) -> int:
    return _write(destination, sweep_svg_text(table, kind))


# Impact table ----------------------------------------------------------------

def impact_text(fmt: str = "text") -> str:
    header = ("Axis", "Impact", "Motivation")
    if fmt == "csv":
        rows = [",".join(header)] + [",".join(f'"{c}"' if "," in c else c for c in row)
                                     for row in IMPACT_ROWS]
        return "\n".join(rows) + "\n"
    if fmt != "text":
        raise ReportError(f"unknown impact format {fmt!r}")
    widths = [max(len(r[i]) for r in (header,) + IMPACT_ROWS) for i in range(3)]
    def fmt_row(r):
        return "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
    lines = ["Hyperparameter impact on CSS-MDO framework axes (RF, GB)",
             fmt_row(header), fmt_row(tuple("-" * w for w in widths))]
    lines += [fmt_row(r) for r in IMPACT_ROWS]
    lines.append("VH = very high, H = high")
    return "\n".join(lines) + "\n"


def emit_impact_report(destination, fmt: str = "text") -> int:
    return _write(destination, impact_text(fmt))
