"""Memorization baselines: the rEdgeBank windowed-mean regressor and the
binary EdgeBank existence predictor.

rEdgeBank predicts the 4-vector edge attributes at month t as the mean of
the months in [t-w, t-1] where the ordered pair actually had an edge; the
divisor is the number of present months, not w. A pair with no observation
in the window predicts all zeros. History is keyed by ordered pair:
querying (j, i) never reads (i, j) memory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graphstore import GraphStoreError, TemporalGraph
from .tempometrics import mae


@dataclass
class EdgeHistory:
    """Per-pair (month, attribute-vector) observations up to a frontier month.

    Append-only by month; concurrent reads at a fixed frontier are safe,
    advancing the frontier is exclusive.
    """

    observations: dict = field(default_factory=dict)  # (i, j) -> [(month, (4,) array)]
    frontier: int = 0

    def record_month(self, month: int, edges: dict) -> None:
        if month <= self.frontier:
            raise GraphStoreError(
                f"months must advance: frontier {self.frontier}, got {month}"
            )
        for pair, attr in edges.items():
            self.observations.setdefault(pair, []).append((month, attr.as_array()))
        self.frontier = month

    @classmethod
    def from_graph(cls, graph: TemporalGraph, upto: int | None = None) -> "EdgeHistory":
        hist = cls()
        upto = graph.n_months if upto is None else upto
        for snap in graph.snapshots[:upto]:
            hist.record_month(snap.month, snap.edges)
        return hist


def redgebank_predict(history: EdgeHistory, pair, t: int, w: int) -> np.ndarray:
    """Windowed mean of the pair's observed attributes over [t-w, t-1]."""
    if w < 1:
        raise GraphStoreError(f"window must be >= 1, got {w}")
    if t > history.frontier + 1:
        raise GraphStoreError(
            f"cannot predict month {t} with frontier at {history.frontier}"
        )
    rows = [
        attr
        for month, attr in history.observations.get(pair, ())
        if t - w <= month <= t - 1
    ]
    if not rows:
        return np.zeros(4)
    return np.mean(rows, axis=0)


def edgebank_exists(history: EdgeHistory, pair, t: int, window: int | None = None) -> bool:
    """Binary EdgeBank: was the pair observed within the memory span?

    ``window=None`` is unlimited memory; otherwise only the months
    [t-window, t-1] count.
    """
    obs = history.observations.get(pair)
    if not obs:
        return False
    if window is None:
        return any(month <= t - 1 for month, _ in obs)
    return any(t - window <= month <= t - 1 for month, _ in obs)


def tune_window(graph: TemporalGraph, validation_months, candidates) -> int:
    """Pick the window minimizing averaged positive-edge MAE on validation.

    Error is the mean of the call and SMS channel MAEs over the forward
    channels of every validation edge. Ties go to the smallest window.
    """
    candidates = sorted(set(candidates))
    if not candidates:
        raise GraphStoreError("no candidate windows")
    validation_months = list(validation_months)
    if not any(graph.snapshots[t - 1].edges for t in validation_months):
        raise GraphStoreError("validation months contain no edges")
    history = EdgeHistory.from_graph(graph)
    best_w, best_err = None, None
    for w in candidates:
        preds, truths = [], []
        for t in validation_months:
            for pair, attr in graph.snapshots[t - 1].edges.items():
                p = redgebank_predict(history, pair, t, w)
                preds.append(p[:2])
                truths.append(attr.as_array()[:2])
        mean, _ = mae(np.array(preds), np.array(truths))
        err = float(mean.mean())
        if best_err is None or err < best_err:
            best_w, best_err = w, err
    return best_w
