"""Render figures from the snapgraph CLI's delimiter-separated outputs.

Four figure kinds, each tied to a documented file schema:

* ``tea``         -- per-month stacked bars of novel vs. reoccurring edges
                     (``tea.csv``), with optional cutoff markers,
* ``tet``         -- edge-lifespan layout (``tet.csv``): one horizontal
                     segment per edge, colored by edge class,
* ``mae_bars``    -- per-month error bars (``per_month.csv``), grouped by
                     model and channel,
* ``strata_grid`` -- heat grid of stratified errors (``by_gender.csv`` or
                     ``by_age.csv``); strata with no observations are drawn
                     hatched, never as a zero value.

Rendering never mutates the input files and is deterministic for fixed
inputs and style options.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Rectangle

KINDS = ("tea", "tet", "mae_bars", "strata_grid")

SCHEMAS = {
    "tea": [["month", "novel", "reoccurring"]],
    "tet": [["source", "dest", "first_month", "last_month", "edge_class"]],
    "mae_bars": [["model", "channel", "month", "mae_mean", "mae_std", "count"]],
    "strata_grid": [
        ["model", "channel", "src_gender", "dst_gender", "mae_mean", "mae_std", "count"],
        ["model", "channel", "src_group", "dst_group", "mae_mean", "mae_std", "count"],
    ],
}

EDGE_CLASS_COLORS = {
    "train_only": "#2ca02c",
    "transductive": "#ff7f0e",
    "inductive": "#d62728",
}


class SchemaError(ValueError):
    """Input header does not match the figure kind's documented schema."""


@dataclass
class Style:
    """Presentation options; defaults follow the package's house palette."""

    novel_color: str = "#d62728"
    reoccurring_color: str = "#7f7f7f"
    edge_class_colors: dict = field(default_factory=lambda: dict(EDGE_CLASS_COLORS))
    heat_cmap: str = "viridis"
    absent_hatch: str = "///"
    figsize: tuple = (8.0, 5.0)
    dpi: int = 120
    cutoffs: tuple = ()  # months marked with dashed vertical lines
    channel: str | None = None  # strata_grid: which channel to draw
    model: str | None = None  # strata_grid: which model to draw


@dataclass
class PlotSpec:
    input_path: str
    kind: str
    output_path: str
    style: Style = field(default_factory=Style)


@dataclass
class RenderResult:
    """What was drawn, for callers that want to verify without reparsing."""

    output_path: str
    kind: str
    n_rows: int
    absent_cells: list = field(default_factory=list)  # strata_grid only


def _read_table(path, kind):
    """Parse rows after validating the header against the kind's schemas.

    A mismatch raises SchemaError naming the missing and unexpected columns
    relative to the closest documented schema.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a header row")
        rows = [row for row in reader if row]
    candidates = SCHEMAS[kind]
    for schema in candidates:
        if header == schema:
            return header, rows
    closest = max(candidates, key=lambda s: len(set(s) & set(header)))
    missing = [c for c in closest if c not in header]
    unexpected = [c for c in header if c not in closest]
    raise SchemaError(
        f"{path}: header does not match the {kind!r} schema "
        f"{','.join(closest)}; missing columns {missing}, "
        f"unexpected columns {unexpected}"
    )


def _finish(fig, spec, result):
    fig.savefig(spec.output_path, dpi=spec.style.dpi)
    plt.close(fig)
    return result


def _render_tea(spec):
    _, rows = _read_table(spec.input_path, "tea")
    months = [int(r[0]) for r in rows]
    novel = [int(r[1]) for r in rows]
    reocc = [int(r[2]) for r in rows]
    st = spec.style
    fig, ax = plt.subplots(figsize=st.figsize)
    ax.bar(months, reocc, color=st.reoccurring_color, label="reoccurring")
    ax.bar(
        months,
        novel,
        bottom=reocc,
        color=st.novel_color,
        hatch="////",
        edgecolor="white",
        label="novel",
    )
    for cutoff in st.cutoffs:
        ax.axvline(cutoff + 0.5, color="black", linestyle="--", linewidth=1)
    ax.set_xlabel("month")
    ax.set_ylabel("edges")
    ax.set_title("Temporal edge appearance")
    ax.legend()
    return _finish(fig, spec, RenderResult(spec.output_path, "tea", len(rows)))


def _render_tet(spec):
    _, rows = _read_table(spec.input_path, "tet")
    st = spec.style
    fig, ax = plt.subplots(figsize=st.figsize)
    seen_classes = []
    for y, row in enumerate(rows):
        first, last, cls = int(row[2]), int(row[3]), row[4]
        color = st.edge_class_colors.get(cls)
        if color is None:
            raise SchemaError(
                f"{spec.input_path}: unknown edge_class {cls!r}; expected one "
                f"of {sorted(st.edge_class_colors)}"
            )
        ax.hlines(y, first, last + 0.8, color=color, linewidth=1.5,
                  label=cls if cls not in seen_classes else None)
        if cls not in seen_classes:
            seen_classes.append(cls)
    for cutoff in st.cutoffs:
        ax.axvline(cutoff + 0.5, color="black", linestyle="--", linewidth=1)
    ax.set_xlabel("month")
    ax.set_ylabel("edge (ordered by first appearance)")
    ax.set_title("Temporal edge traffic")
    if seen_classes:
        ax.legend()
    return _finish(fig, spec, RenderResult(spec.output_path, "tet", len(rows)))


def _render_mae_bars(spec):
    _, rows = _read_table(spec.input_path, "mae_bars")
    # one bar series per (model, channel), grouped within each month
    months = sorted({int(r[2]) for r in rows})
    series = {}
    for model, channel, month, mean, std, _count in rows:
        key = (model, channel)
        series.setdefault(key, {})[int(month)] = (
            float(mean) if mean != "" else np.nan,
            float(std) if std != "" else 0.0,
        )
    keys = sorted(series)
    st = spec.style
    fig, ax = plt.subplots(figsize=st.figsize)
    width = 0.8 / max(1, len(keys))
    cmap = plt.get_cmap("tab10")
    for k, key in enumerate(keys):
        offs = (k - (len(keys) - 1) / 2) * width
        means = [series[key].get(m, (np.nan, 0.0))[0] for m in months]
        stds = [series[key].get(m, (np.nan, 0.0))[1] for m in months]
        ax.bar(
            [m + offs for m in months],
            means,
            width=width,
            yerr=stds,
            capsize=2,
            color=cmap(k % 10),
            label=f"{key[0]} / {key[1]}",
        )
    ax.set_xticks(months)
    ax.set_xlabel("month")
    ax.set_ylabel("mean absolute error")
    ax.set_title("Per-month error on positive edges")
    ax.legend()
    return _finish(fig, spec, RenderResult(spec.output_path, "mae_bars", len(rows)))


def _render_strata_grid(spec):
    header, rows = _read_table(spec.input_path, "strata_grid")
    src_col, dst_col = header[2], header[3]
    st = spec.style
    models = sorted({r[0] for r in rows})
    channels = sorted({r[1] for r in rows})
    model = st.model if st.model is not None else models[0]
    channel = st.channel if st.channel is not None else channels[0]
    if model not in models:
        raise SchemaError(
            f"{spec.input_path}: model {model!r} not present; file has {models}"
        )
    if channel not in channels:
        raise SchemaError(
            f"{spec.input_path}: channel {channel!r} not present; file has {channels}"
        )
    picked = [r for r in rows if r[0] == model and r[1] == channel]
    src_labels = list(dict.fromkeys(r[2] for r in picked))
    dst_labels = list(dict.fromkeys(r[3] for r in picked))
    grid = np.full((len(src_labels), len(dst_labels)), np.nan)
    for r in picked:
        i, j = src_labels.index(r[2]), dst_labels.index(r[3])
        if r[4] != "" and int(r[6]) > 0:
            grid[i, j] = float(r[4])
    masked = np.ma.masked_invalid(grid)
    fig, ax = plt.subplots(figsize=st.figsize)
    cmap = plt.get_cmap(st.heat_cmap).copy()
    cmap.set_bad(alpha=0.0)
    im = ax.imshow(masked, cmap=cmap)
    absent = []
    for i in range(len(src_labels)):
        for j in range(len(dst_labels)):
            if np.isnan(grid[i, j]):
                # absent stratum: hatched patch carrying no value at all
                ax.add_patch(
                    Rectangle(
                        (j - 0.5, i - 0.5), 1, 1,
                        fill=False, hatch=st.absent_hatch, edgecolor="gray",
                    )
                )
                absent.append((src_labels[i], dst_labels[j]))
            else:
                ax.text(j, i, f"{grid[i, j]:.2f}", ha="center", va="center",
                        color="white", fontsize=9)
    ax.set_xticks(range(len(dst_labels)), dst_labels)
    ax.set_yticks(range(len(src_labels)), src_labels)
    ax.set_xlabel(dst_col)
    ax.set_ylabel(src_col)
    ax.set_title(f"{model} / {channel}: error by {src_col} x {dst_col}")
    fig.colorbar(im, ax=ax, label="mean absolute error")
    return _finish(
        fig, spec,
        RenderResult(spec.output_path, "strata_grid", len(picked), absent),
    )


_RENDERERS = {
    "tea": _render_tea,
    "tet": _render_tet,
    "mae_bars": _render_mae_bars,
    "strata_grid": _render_strata_grid,
}


def render(spec: PlotSpec) -> RenderResult:
    """Render one figure; returns a summary of what was drawn."""
    if spec.kind not in _RENDERERS:
        raise SchemaError(f"unknown figure kind {spec.kind!r}; expected one of {KINDS}")
    return _RENDERERS[spec.kind](spec)
