"""Shared builders for temporal-graph tests."""

import datetime

import numpy as np
import pytest

from snapgraph.graphstore import (
    EdgeAttr,
    EventRecord,
    NodeAttr,
    Snapshot,
    TemporalGraph,
)


def ts(year, month, day=1, hour=12):
    return int(
        datetime.datetime(year, month, day, hour, tzinfo=datetime.timezone.utc).timestamp()
    )


def make_nodes(n):
    return {
        i: NodeAttr(
            age=18 + (i * 7) % 48,
            gender="A" if i % 2 == 0 else "B",
            lat=60.0 + 0.01 * i,
            lon=24.0 + 0.02 * i,
        )
        for i in range(n)
    }


def build_graph(n_nodes, month_edges, nodes=None):
    """month_edges: per month, {(s, d): (cf, sf, cb, sb)}; mirrors are added."""
    nodes = nodes if nodes is not None else make_nodes(n_nodes)
    snaps = []
    for t, edges in enumerate(month_edges, start=1):
        es = {}
        for (s, d), v in edges.items():
            attr = EdgeAttr(*v)
            es[(s, d)] = attr
            es.setdefault((d, s), attr.mirrored())
        snaps.append(Snapshot(t, es))
    return TemporalGraph(nodes=nodes, snapshots=snaps)


def random_graph(rng, max_nodes=50, max_months=12, ensure_dev_test=False):
    n = int(rng.integers(2, max_nodes + 1))
    T = int(rng.integers(2, max_months + 1))
    month_edges = []
    for _ in range(T):
        m = {}
        for _ in range(int(rng.integers(0, max(2, n)))):
            s, d = (int(x) for x in rng.integers(0, n, 2))
            if s == d or (s, d) in m or (d, s) in m:
                continue
            m[(s, d)] = tuple(int(x) for x in rng.integers(0, 6, 4))
        month_edges.append(m)
    if ensure_dev_test:
        month_edges[0].setdefault((0, 1), (1, 0, 0, 0))
        month_edges[-1].setdefault((0, 1), (0, 1, 0, 0))
    elif not any(month_edges):
        month_edges[0][(0, 1)] = (1, 0, 0, 0)
    return build_graph(n, month_edges)


def make_events(rows):
    """rows: (ego, alter, (year, month), kind, direction) tuples."""
    out = []
    for i, (ego, alter, ym, kind, direction) in enumerate(rows):
        out.append(EventRecord(ego, alter, ts(*ym) + i, kind, direction))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
