"""CSV / SVG emitters for benchmark results."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Iterable, Mapping
from xml.sax.saxutils import escape

from .data import _atomic_write
from .results import CompressionResult, ConfusionMatrix, NoiseExperimentResult, REFERENCE_FRACTIONS, REFERENCE_TABLE

RESULTS_HEADER = ("dataset", "method", "kept_fraction", "mse", "regime")
CONFUSION_HEADER = ("detector", "tp", "fp", "tn", "fn", "balanced_accuracy")


def _row(r) -> tuple[str, str, str, str, str]:
    if isinstance(r, NoiseExperimentResult):
        return (r.dataset_id, "VAE", repr(float(r.kept_fraction)), repr(float(r.mse)), r.regime.value)
    return (r.dataset_id, r.method.value, repr(float(r.kept_fraction)), repr(float(r.mse)), "")


def results_csv(results: Iterable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULTS_HEADER)
    for r in results:
        w.writerow(_row(r))
    return buf.getvalue()


def write_text(path, text: str) -> None:
    _atomic_write(Path(path), lambda fh: fh.write(text.encode()))


def emit_report(results, path, svg_path=None) -> None:
    """Write the results CSV and, optionally, an SVG chart next to it."""
    results = list(results)
    if not results:
        raise ValueError("no results to report")
    write_text(path, results_csv(results))
    if svg_path is not None:
        write_text(svg_path, svg_chart([r for r in results if isinstance(r, CompressionResult)]))


def read_results_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["kept_fraction"] = float(row["kept_fraction"])
        row["mse"] = float(row["mse"])
    return rows


def confusion_csv(matrices: Mapping[str, ConfusionMatrix]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CONFUSION_HEADER)
    for name, cm in matrices.items():
        w.writerow((name, cm.tp, cm.fp, cm.tn, cm.fn, repr(float(cm.balanced_accuracy))))
    return buf.getvalue()


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


def svg_chart(results: list[CompressionResult], width: int = 640, height: int = 400) -> str:
    """Self-contained SVG: MSE (log scale) against kept fraction, one polyline per series.

    A series is a method, prefixed with the dataset id when several datasets
    are present.
    """
    datasets = sorted({r.dataset_id for r in results})
    series: dict[str, list[tuple[float, float]]] = {}
    for r in results:
        key = r.method.value if len(datasets) <= 1 else f"{r.dataset_id}/{r.method.value}"
        series.setdefault(key, []).append((r.kept_fraction, r.mse))
    pts = [p for s in series.values() for p in s]
    floor = 1e-12
    xs = [p[0] for p in pts] or [0.0, 1.0]
    ys = [math.log10(max(p[1], floor)) for p in pts] or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = math.floor(min(ys)), math.ceil(max(ys))
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1
    ml, mr, mt, mb = 70, 160, 20, 50
    pw, ph = width - ml - mr, height - mt - mb

    def sx(v):
        return ml + pw * (v - x0) / (x1 - x0)

    def sy(v):
        return mt + ph * (1 - (math.log10(max(v, floor)) - y0) / (y1 - y0))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for e in range(y0, y1 + 1):
        y = mt + ph * (1 - (e - y0) / (y1 - y0))
        out.append(f'<line x1="{ml - 4}" y1="{y:.2f}" x2="{ml}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{ml - 8}" y="{y + 4:.2f}" font-size="11" text-anchor="end">1e{e}</text>')
    for i in range(5):
        v = x0 + (x1 - x0) * i / 4
        x = sx(v)
        out.append(f'<line x1="{x:.2f}" y1="{mt + ph}" x2="{x:.2f}" y2="{mt + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{mt + ph + 18}" font-size="11" text-anchor="middle">{100 * v:.3g}%</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 10}" font-size="12" text-anchor="middle">kept coefficients</text>')
    out.append(f'<text x="15" y="{mt + ph / 2}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 15 {mt + ph / 2})">MSE</text>')
    for i, (name, s) in enumerate(series.items()):
        s = sorted(s)
        color = _COLORS[i % len(_COLORS)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in s)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"><title>{escape(name)}</title></polyline>')
        ly = mt + 15 + 18 * i
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 35}" y="{ly + 4}" font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _fraction_columns(fractions, rel: float = 0.05) -> dict[float, float]:
    """Map each kept fraction to a column; budgets within ``rel`` of each other share one."""
    cols: dict[float, float] = {}
    group: list[float] = []
    for f in sorted(set(fractions)):
        if group and f > group[0] * (1 + rel):
            for g in group:
                cols[g] = group[-1]
            group = []
        group.append(f)
    for g in group:
        cols[g] = group[-1]
    return cols


def format_table(results: list[CompressionResult], with_reference: bool = True) -> str:
    """Plain-text table: one row per (dataset, method), one column per kept-fraction group.

    Methods land on slightly different fractions for the same budget (padding,
    integer latent sizes), so fractions within 5% of each other share a column
    headed by the group's largest value.
    """
    col_of = _fraction_columns([r.kept_fraction for r in results])
    columns = sorted(set(col_of.values()))
    cells: dict[tuple[str, str], dict[float, float]] = {}
    for r in results:
        cells.setdefault((r.dataset_id, r.method.value), {})[col_of[r.kept_fraction]] = r.mse
    names = [ds for ds, _ in cells] + (list(REFERENCE_TABLE) if with_reference else [])
    w = max([len("dataset")] + [len(n) for n in names]) + 2
    head = f"{'dataset':<{w}}{'method':<15}" + "".join(f"{100 * f:>11.3g}%" for f in columns)
    lines = [head, "-" * len(head)]
    for (ds, m), row in cells.items():
        lines.append(f"{ds:<{w}}{m:<15}" + "".join(
            f"{row[f]:>12.5f}" if f in row else f"{'':>12}" for f in columns))
    if with_reference:
        lines += ["", "reference (12-lead, MSE at " + " / ".join(f"{100 * f:g}%" for f in REFERENCE_FRACTIONS) + ")"]
        for ds, rows in REFERENCE_TABLE.items():
            for m, vals in rows.items():
                lines.append(f"{ds:<{w}}{m.value:<15}" + "".join(f"{v:>12.5f}" for v in vals))
    return "\n".join(lines) + "\n"
