"""SVG charts from harness CSV output (matplotlib, Agg backend)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import LogFormatterMathtext, LogLocator  # noqa: E402

__all__ = ["PlotSpec", "PlotResult", "SchemaError", "emit_plot", "plot_figure1", "read_csv_rows"]

# fixed ids and no timestamp, so repeated runs write identical SVG bytes
_RC = {"svg.hashsalt": "polytail", "svg.fonttype": "none"}
_METADATA = {"Date": None, "Creator": "polytail"}


class SchemaError(ValueError):
    """The CSV lacks a declared column or has no data rows."""


@dataclass
class PlotSpec:
    x: str
    y: str
    series: str | None = None
    yerr: str | None = None
    logx: bool = False
    logy: bool = False
    title: str = ""
    xlabel: str | None = None
    ylabel: str | None = None


@dataclass
class PlotResult:
    path: Path
    series: list[str]
    xtick_labels: list[str]


def read_csv_rows(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(lines)
    rows = list(reader)
    return list(reader.fieldnames or []), rows


def _float(value: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        return math.nan


def _save(fig, out) -> Path:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format="svg", metadata=_METADATA)
    plt.close(fig)
    return out


def emit_plot(csv_path, spec: PlotSpec, out=None) -> PlotResult:
    """Line chart of ``spec.y`` against ``spec.x``, one line per ``spec.series`` value.

    Series keep their first-appearance order; points are sorted by x.
    """
    columns, rows = read_csv_rows(csv_path)
    needed = [c for c in (spec.x, spec.y, spec.series, spec.yerr) if c]
    missing = [c for c in needed if c not in columns]
    if missing:
        raise SchemaError(f"{csv_path}: missing column(s) {', '.join(missing)}")
    if not rows:
        raise SchemaError(f"{csv_path}: no data rows")

    groups: dict[str, list[dict]] = {}
    for row in rows:
        groups.setdefault(row[spec.series] if spec.series else spec.y, []).append(row)

    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.4, 4.2))
        for name, group in groups.items():
            pts = sorted((_float(r[spec.x]), _float(r[spec.y]), _float(r[spec.yerr]) if spec.yerr else 0.0) for r in group)
            xs, ys, es = zip(*pts)
            if spec.yerr:
                ax.errorbar(xs, ys, yerr=es, marker="o", ms=4, capsize=3, label=name)
            else:
                ax.plot(xs, ys, marker="o", ms=4, label=name)
        if spec.logx:
            ax.set_xscale("log")
            ax.xaxis.set_major_locator(LogLocator(base=10))
            ax.xaxis.set_major_formatter(LogFormatterMathtext(base=10))
        if spec.logy:
            ax.set_yscale("log")
        ax.set_xlabel(spec.xlabel or spec.x)
        ax.set_ylabel(spec.ylabel or spec.y)
        if spec.title:
            ax.set_title(spec.title)
        ax.legend(frameon=False)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.canvas.draw()
        ticks = [t.get_text() for t, loc in zip(ax.get_xticklabels(), ax.get_xticks())
                 if ax.get_xlim()[0] <= loc <= ax.get_xlim()[1]]
        out = Path(out) if out else Path(csv_path).with_suffix(".svg")
        path = _save(fig, out)
    return PlotResult(path, list(groups), ticks)


def plot_figure1(points, directions: dict, out, title: str = "") -> Path:
    """Scatter of a 2-D toy set with each direction drawn as its decision boundary.

    ``points`` is ``(x, labels)``; ``directions`` maps a label to a unit 2-vector.
    """
    x, labels = points
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.2, 5.2))
        ax.scatter(x[labels > 0, 0], x[labels > 0, 1], s=12, marker="o", label="majority (+1)")
        ax.scatter(x[labels < 0, 0], x[labels < 0, 1], s=24, marker="^", label="minority (-1)")
        span = float(abs(x).max()) * 1.1
        line = [-span, span]
        for name, theta in directions.items():
            # boundary theta . x = 0 is the line orthogonal to theta
            ortho = (-theta[1], theta[0])
            ax.plot([t * ortho[0] for t in line], [t * ortho[1] for t in line], lw=1.2, label=name)
        ax.set_xlim(-span, span)
        ax.set_ylim(-span, span)
        ax.set_aspect("equal")
        ax.axhline(0, color="0.8", lw=0.5)
        ax.axvline(0, color="0.8", lw=0.5)
        if title:
            ax.set_title(title)
        ax.legend(frameon=False, fontsize=8, loc="lower left")
        fig.tight_layout()
        return _save(fig, out)
