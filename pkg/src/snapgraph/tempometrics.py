"""Temporal-edge statistics, MAE evaluation, and significance testing.

Edge identity everywhere is the ordered pair (source, destination);
reciprocal edges are distinct. All functions here are pure and safe to call
concurrently.

The three summary indices over a snapshot sequence with a development/test
cutoff are:

* novelty      -- average per-month fraction of never-seen-before edges
* reoccurrence -- fraction of development edges that reappear in the test set
* surprise     -- fraction of test edges never seen during development
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .graphstore import GraphStoreError, TemporalGraph


class EdgeClass(Enum):
    TRAIN_ONLY = "train_only"
    TRANSDUCTIVE = "transductive"
    INDUCTIVE = "inductive"


AGE_GROUPS = ((18, 21), (25, 35), (45, 55), (60, 65))


@dataclass
class TeaSeries:
    """Per-month (novel, reoccurring) edge counts; components sum to |E^(t)|."""

    novel: list
    reoccurring: list

    @property
    def n_months(self) -> int:
        return len(self.novel)


@dataclass
class TetLayout:
    """Deterministic edge-lifespan ordering for the traffic layout.

    ``rows`` holds one (source, dest, first_month, last_month, EdgeClass)
    tuple per distinct edge, blocked by first-appearance month and sorted
    within each block by last appearance (ties broken by ascending edge id).
    """

    rows: list


def _dev_test_sets(graph: TemporalGraph, cutoff: int):
    if not (1 <= cutoff < graph.n_months):
        raise GraphStoreError(
            f"cutoff must satisfy 1 <= cutoff < T={graph.n_months}, got {cutoff}"
        )
    dev, test = set(), set()
    for snap in graph.snapshots:
        (dev if snap.month <= cutoff else test).update(snap.edges)
    return dev, test


def novelty(graph: TemporalGraph) -> float:
    """Mean per-month share of edges not seen in any earlier month.

    Months with no edges contribute to neither the numerator terms nor the
    divisor (the defining ratio is undefined for an empty month).
    """
    seen: set = set()
    terms = []
    for snap in graph.snapshots:
        edges = set(snap.edges)
        if edges:
            terms.append(len(edges - seen) / len(edges))
            seen |= edges
    if not terms:
        raise GraphStoreError("graph has no edges in any month")
    return sum(terms) / len(terms)


def reoccurrence(graph: TemporalGraph, cutoff: int) -> float:
    """Share of development-period edges that reappear after the cutoff."""
    dev, test = _dev_test_sets(graph, cutoff)
    if not dev:
        raise GraphStoreError("development period has no edges")
    return len(dev & test) / len(dev)


def surprise(graph: TemporalGraph, cutoff: int) -> float:
    """Share of test-period edges never seen during development."""
    dev, test = _dev_test_sets(graph, cutoff)
    if not test:
        raise GraphStoreError("test period has no edges")
    return len(test - dev) / len(test)


def tea_series(graph: TemporalGraph) -> TeaSeries:
    """Per-month decomposition of the edge set into novel and reoccurring."""
    seen: set = set()
    novel, reocc = [], []
    for snap in graph.snapshots:
        edges = set(snap.edges)
        novel.append(len(edges - seen))
        reocc.append(len(edges & seen))
        seen |= edges
    return TeaSeries(novel=novel, reoccurring=reocc)


def tet_layout(graph: TemporalGraph, cutoff: int) -> TetLayout:
    """Edge-lifespan layout: blocks by first month, sorted by last month."""
    dev, test = _dev_test_sets(graph, cutoff)
    first: dict = {}
    last: dict = {}
    for snap in graph.snapshots:
        for pair in snap.edges:
            first.setdefault(pair, snap.month)
            last[pair] = snap.month
    rows = []
    for pair in first:
        if pair in dev and pair in test:
            cls = EdgeClass.TRANSDUCTIVE
        elif pair in dev:
            cls = EdgeClass.TRAIN_ONLY
        else:
            cls = EdgeClass.INDUCTIVE
        rows.append((pair[0], pair[1], first[pair], last[pair], cls))
    rows.sort(key=lambda r: (r[2], r[3], r[0], r[1]))
    return TetLayout(rows=rows)


# ---------------------------------------------------------------------------
# MAE
# ---------------------------------------------------------------------------


def mae(preds, truths):
    """Per-channel mean and population std of |truth - pred|.

    ``preds`` and ``truths`` are aligned (n, 2) arrays of (call, sms)
    values per evaluated edge.
    """
    preds = np.asarray(preds, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if preds.shape != truths.shape:
        raise GraphStoreError(
            f"prediction/truth length mismatch: {preds.shape} vs {truths.shape}"
        )
    err = np.abs(truths - preds)
    return err.mean(axis=0), err.std(axis=0)


def _age_group(age: int):
    for g, (lo, hi) in enumerate(AGE_GROUPS):
        if lo <= age <= hi:
            return g
    return None


def stratified_mae(preds, truths, src_nodes, dst_nodes, attrs, scheme, months=None,
                   test_months=None):
    """MAE broken down by a stratification scheme.

    scheme is one of ``gender_pairs``, ``age_grid``, ``per_month``. Returns a
    dict mapping stratum key to (mean (2,), std (2,), count); empty strata
    are simply absent from the result. ``age_grid`` uses the four standard
    age groups and drops edges whose endpoints fall outside all groups;
    ``per_month`` needs per-edge ``months`` and covers ``test_months`` only.
    """
    preds = np.asarray(preds, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    n = len(preds)
    if scheme == "gender_pairs":
        keys = [
            (attrs[s].gender, attrs[d].gender) for s, d in zip(src_nodes, dst_nodes)
        ]
    elif scheme == "age_grid":
        keys = []
        for s, d in zip(src_nodes, dst_nodes):
            gs, gd = _age_group(attrs[s].age), _age_group(attrs[d].age)
            keys.append(None if gs is None or gd is None else (gs, gd))
    elif scheme == "per_month":
        if months is None:
            raise GraphStoreError("per_month stratification requires per-edge months")
        allowed = set(test_months) if test_months is not None else None
        keys = [
            m if allowed is None or m in allowed else None for m in months
        ]
    else:
        raise GraphStoreError(f"unknown stratification scheme {scheme!r}")

    buckets: dict = {}
    for i in range(n):
        if keys[i] is not None:
            buckets.setdefault(keys[i], []).append(i)
    table = {}
    for key, idx in buckets.items():
        err = np.abs(truths[idx] - preds[idx])
        table[key] = (err.mean(axis=0), err.std(axis=0), len(idx))
    return table


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank test
# ---------------------------------------------------------------------------


def _signed_ranks(diffs):
    """Midranks of |d| with signs, zero differences discarded."""
    d = np.asarray(diffs, dtype=np.float64)
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        return np.array([]), np.array([])
    order = np.argsort(np.abs(d), kind="stable")
    absd = np.abs(d)[order]
    ranks = np.empty(n)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and absd[j + 1] == absd[i]:
            j += 1
        ranks[i : j + 1] = (i + j) / 2.0 + 1.0
        i = j + 1
    signs = np.sign(d)[order]
    return ranks, signs


def _exact_two_sided_p(ranks, w_plus: float) -> float:
    """Exact two-sided p for W+ via the sign-flip distribution of midranks.

    Works with ties by operating on doubled ranks (integers). Distribution
    is computed by dynamic programming over the 2^n equiprobable sign
    assignments.
    """
    r2 = np.rint(2.0 * ranks).astype(np.int64)
    total = int(r2.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in r2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    counts /= counts.sum()
    w2 = int(round(2.0 * w_plus))
    p_le = counts[: w2 + 1].sum()
    p_ge = counts[w2:].sum()
    return min(1.0, 2.0 * min(p_le, p_ge))


def _normal_two_sided_p(ranks, w_plus: float) -> float:
    """Normal approximation with tie correction and continuity correction."""
    n = len(ranks)
    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    # tie correction: subtract sum(t^3 - t)/48 over tie groups
    _, tie_counts = np.unique(ranks, return_counts=True)
    var -= ((tie_counts**3 - tie_counts).sum()) / 48.0
    if var <= 0:
        return 1.0
    dev = w_plus - mu
    if dev > 0:
        dev -= 0.5
    elif dev < 0:
        dev += 0.5
    z = dev / math.sqrt(var)
    return min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))


def wilcoxon_signed_rank(errors_a, errors_b):
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are discarded. The null distribution is enumerated
    exactly for n <= 25 remaining pairs and approximated by a tie-corrected
    normal beyond that. Returns (W+ statistic, p-value); all-zero
    differences give the defined result p = 1.0.
    """
    a = np.asarray(errors_a, dtype=np.float64)
    b = np.asarray(errors_b, dtype=np.float64)
    if a.shape != b.shape:
        raise GraphStoreError("paired samples must have equal length")
    ranks, signs = _signed_ranks(a - b)
    n = len(ranks)
    if n == 0:
        return 0.0, 1.0
    if n < 5:
        raise GraphStoreError(
            f"need at least 5 nonzero differences, have {n}"
        )
    w_plus = float(ranks[signs > 0].sum())
    if n <= 25:
        p = _exact_two_sided_p(ranks, w_plus)
    else:
        p = _normal_two_sided_p(ranks, w_plus)
    return w_plus, p


# ---------------------------------------------------------------------------
# Evaluation report container and serialization
# ---------------------------------------------------------------------------

CHANNELS = ("call", "sms")
EDGE_SETS = ("positive", "r_negative", "h_negative")

SUMMARY_HEADER = "model,channel,edge_set,mae_mean,mae_std,count"
AVE_HEADER = "model,channel,ave"
PER_MONTH_HEADER = "model,channel,month,mae_mean,mae_std,count"
GENDER_HEADER = "model,channel,src_gender,dst_gender,mae_mean,mae_std,count"
AGE_HEADER = "model,channel,src_group,dst_group,mae_mean,mae_std,count"
TEA_HEADER = "month,novel,reoccurring"
TET_HEADER = "source,dest,first_month,last_month,edge_class"


@dataclass
class EvalReport:
    """MAE decomposition for one model.

    ``cells`` maps edge-set name to (mean (2,), std (2,), count); ``ave`` is
    the unweighted mean of the three edge-set means per channel, matching
    the reporting convention. Optional strata tables are keyed like the
    outputs of stratified_mae.
    """

    model: str
    cells: dict
    per_month: dict | None = None
    by_gender: dict | None = None
    by_age: dict | None = None

    @property
    def ave(self) -> np.ndarray:
        means = [self.cells[k][0] for k in EDGE_SETS]
        return np.mean(means, axis=0)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_tea_csv(path, series: TeaSeries) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TEA_HEADER + "\n")
        for m in range(series.n_months):
            fh.write(f"{m + 1},{series.novel[m]},{series.reoccurring[m]}\n")


def write_tet_csv(path, layout: TetLayout) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TET_HEADER + "\n")
        for s, d, fm, lm, cls in layout.rows:
            fh.write(f"{s},{d},{fm},{lm},{cls.value}\n")


def write_report_files(report: EvalReport, directory) -> list:
    """Emit the delimiter-separated report files; returns written paths."""
    import os

    written = []

    def emit(name, header, lines):
        path = os.path.join(directory, name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(header + "\n")
            for line in lines:
                fh.write(line + "\n")
        written.append(path)

    lines = []
    for c, channel in enumerate(CHANNELS):
        for es in EDGE_SETS:
            mean, std, count = report.cells[es]
            lines.append(
                f"{report.model},{channel},{es},{_fmt(mean[c])},{_fmt(std[c])},{count}"
            )
    emit("summary.csv", SUMMARY_HEADER, lines)

    emit(
        "ave.csv",
        AVE_HEADER,
        [
            f"{report.model},{channel},{_fmt(report.ave[c])}"
            for c, channel in enumerate(CHANNELS)
        ],
    )

    if report.per_month is not None:
        lines = []
        for month in sorted(report.per_month):
            mean, std, count = report.per_month[month]
            for c, channel in enumerate(CHANNELS):
                lines.append(
                    f"{report.model},{channel},{month},{_fmt(mean[c])},{_fmt(std[c])},{count}"
                )
        emit("per_month.csv", PER_MONTH_HEADER, lines)

    if report.by_gender is not None:
        lines = []
        for sg in ("A", "B"):
            for dg in ("A", "B"):
                cell = report.by_gender.get((sg, dg))
                for c, channel in enumerate(CHANNELS):
                    if cell is None:
                        lines.append(f"{report.model},{channel},{sg},{dg},,,0")
                    else:
                        mean, std, count = cell
                        lines.append(
                            f"{report.model},{channel},{sg},{dg},{_fmt(mean[c])},{_fmt(std[c])},{count}"
                        )
        emit("by_gender.csv", GENDER_HEADER, lines)

    if report.by_age is not None:
        lines = []
        for gs in range(len(AGE_GROUPS)):
            for gd in range(len(AGE_GROUPS)):
                cell = report.by_age.get((gs, gd))
                s_label = f"{AGE_GROUPS[gs][0]}-{AGE_GROUPS[gs][1]}"
                d_label = f"{AGE_GROUPS[gd][0]}-{AGE_GROUPS[gd][1]}"
                for c, channel in enumerate(CHANNELS):
                    if cell is None:
                        lines.append(
                            f"{report.model},{channel},{s_label},{d_label},,,0"
                        )
                    else:
                        mean, std, count = cell
                        lines.append(
                            f"{report.model},{channel},{s_label},{d_label},{_fmt(mean[c])},{_fmt(std[c])},{count}"
                        )
        emit("by_age.csv", AGE_HEADER, lines)

    return written
