"""Ingestion and snapshot store for monthly call/SMS temporal graphs.

The pipeline is: ingest event + node-attribute files, filter users, aggregate
events to monthly snapshots, split by time, normalize features, and sample
k-hop subgraphs around seed nodes.

Event file format (delimiter-separated, header required)::

    ego,alter,timestamp,kind,direction

where ``timestamp`` is seconds since the Unix epoch, ``kind`` is ``call`` or
``sms``, and ``direction`` is ``out`` (ego initiated) or ``in`` (alter
initiated). Node attribute files carry the header ``node,age,gender,lat,lon``.

Month boundaries are calendar months in UTC. An event between i and j is
attributed to its initiator: the forward channels of directed edge (i, j)
count events initiated by i toward j.
"""

from __future__ import annotations

import datetime as _dt
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

logger = logging.getLogger(__name__)

EVENT_HEADER = ["ego", "alter", "timestamp", "kind", "direction"]
NODE_HEADER = ["node", "age", "gender", "lat", "lon"]

KINDS = ("call", "sms")
DIRECTIONS = ("out", "in")
GENDERS = ("A", "B")

GRAPH_FORMAT = "snapgraph-temporal-graph"
GRAPH_VERSION = 1


class GraphStoreError(ValueError):
    """Raised on contract violations in the graph pipeline."""


@dataclass(frozen=True)
class EventRecord:
    """One raw CDR event between an ego and an alter."""

    ego: int
    alter: int
    timestamp: int
    kind: str
    direction: str


@dataclass(frozen=True)
class NodeAttr:
    age: int
    gender: str
    lat: float
    lon: float


@dataclass(frozen=True)
class EdgeAttr:
    """Monthly counts on a directed edge (source, destination).

    Forward channels count events initiated by the source toward the
    destination; backward channels mirror the reverse direction.
    """

    calls_fwd: int
    sms_fwd: int
    calls_bwd: int
    sms_bwd: int

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.calls_fwd, self.sms_fwd, self.calls_bwd, self.sms_bwd],
            dtype=np.float64,
        )

    def mirrored(self) -> "EdgeAttr":
        return EdgeAttr(self.calls_bwd, self.sms_bwd, self.calls_fwd, self.sms_fwd)


@dataclass
class Snapshot:
    """State of the graph in one month: directed edges with count attributes."""

    month: int
    edges: dict  # (source, destination) -> EdgeAttr


@dataclass
class TemporalGraph:
    """Ordered sequence of monthly snapshots over a shared node universe.

    Immutable by convention after construction; concurrent reads are safe.
    """

    nodes: dict  # node id -> NodeAttr
    snapshots: list  # Snapshot, months contiguous 1..T

    def __post_init__(self):
        for t, snap in enumerate(self.snapshots, start=1):
            if snap.month != t:
                raise GraphStoreError(
                    f"snapshot months must be contiguous 1..T, got {snap.month} at position {t}"
                )

    @property
    def n_months(self) -> int:
        return len(self.snapshots)

    def edge_union(self) -> set:
        """All distinct directed edges over the full time span."""
        out = set()
        for snap in self.snapshots:
            out.update(snap.edges)
        return out


@dataclass(frozen=True)
class Split:
    """Temporal train/validation/test boundary months (inclusive cutoffs)."""

    train_cutoff: int
    val_cutoff: int
    test_end: int

    def __post_init__(self):
        if not (1 <= self.train_cutoff < self.val_cutoff < self.test_end):
            raise GraphStoreError(
                f"invalid split ordering: {self.train_cutoff} < {self.val_cutoff} < {self.test_end} required"
            )

    @property
    def train_months(self):
        return range(1, self.train_cutoff + 1)

    @property
    def val_months(self):
        return range(self.train_cutoff + 1, self.val_cutoff + 1)

    @property
    def test_months(self):
        return range(self.val_cutoff + 1, self.test_end + 1)


@dataclass
class NormStats:
    """Normalization statistics: node min/max and train-only edge mean/std."""

    node_min: np.ndarray  # (3,) age, lat, lon
    node_max: np.ndarray  # (3,)
    edge_mean: np.ndarray  # (4,)
    edge_std: np.ndarray  # (4,)

    def to_dict(self):
        return {
            "node_min": self.node_min.tolist(),
            "node_max": self.node_max.tolist(),
            "edge_mean": self.edge_mean.tolist(),
            "edge_std": self.edge_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            node_min=np.asarray(d["node_min"], dtype=np.float64),
            node_max=np.asarray(d["node_max"], dtype=np.float64),
            edge_mean=np.asarray(d["edge_mean"], dtype=np.float64),
            edge_std=np.asarray(d["edge_std"], dtype=np.float64),
        )

    def standardize(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.edge_mean) / self.edge_std

    def destandardize(self, z: np.ndarray) -> np.ndarray:
        return z * self.edge_std + self.edge_mean


@dataclass
class NormalizedGraph:
    """A TemporalGraph with model-ready features.

    Node features are ordered (age, gender, lat, lon): gender is binary 0/1
    and the remaining three are min-max scaled to [-1, 1]. Edge input
    features are the z-scored 4-vector counts; a raw copy of the counts is
    kept on the underlying graph as regression targets.
    """

    graph: TemporalGraph
    stats: NormStats
    node_ids: list
    node_feat: np.ndarray  # (n, 4)
    edge_feat: list  # per month: dict (s, d) -> (4,) standardized array

    @property
    def node_index(self) -> dict:
        return {v: i for i, v in enumerate(self.node_ids)}


@dataclass
class Subgraph:
    """BFS ball of radius k around a seed node, with induced snapshots."""

    seed: int
    k: int
    nodes: frozenset
    graph: TemporalGraph


@dataclass(frozen=True)
class FilterPolicy:
    """User-filtering rules applied before aggregation."""

    min_age: int = 18
    max_age: int = 65
    max_daily_calls: float = 8.0
    require_yearly_activity: bool = True


@dataclass
class _NodeStats:
    first_ts: int
    last_ts: int
    n_calls: int = 0
    n_events: int = 0
    years: set = field(default_factory=set)


@dataclass
class RawStore:
    """Events grouped per ordered (initiator, receiver) pair per month.

    ``node_stats`` holds each user's activity profile as observed at ingest
    time; filtering decides on these immutable profiles, which makes
    filter_users idempotent by construction.
    """

    pair_counts: dict  # (i, j) -> {month: [n_calls, n_sms]}
    node_stats: dict  # node -> _NodeStats
    attrs: dict  # node -> NodeAttr
    n_months: int
    start_year: int
    start_month: int
    diagnostics: list = field(default_factory=list)
    unknown_nodes: set = field(default_factory=set)

    @property
    def n_events(self) -> int:
        return sum(
            c + s for months in self.pair_counts.values() for c, s in months.values()
        )

    @property
    def n_nodes(self) -> int:
        return len(self.attrs)

    def years_spanned(self):
        if self.n_months == 0:
            return []
        last = _shift_month(self.start_year, self.start_month, self.n_months - 1)
        return list(range(self.start_year, last[0] + 1))


def _shift_month(year: int, month: int, delta: int):
    idx = year * 12 + (month - 1) + delta
    return idx // 12, idx % 12 + 1


def _ts_year_month(ts: int):
    d = _dt.datetime.fromtimestamp(ts, tz=_dt.timezone.utc)
    return d.year, d.month


def month_index(ts: int, start_year: int, start_month: int) -> int:
    """1-based calendar month index of a timestamp relative to the window start."""
    y, m = _ts_year_month(ts)
    return (y * 12 + m) - (start_year * 12 + start_month) + 1


# ---------------------------------------------------------------------------
# Parsing and ingestion
# ---------------------------------------------------------------------------


def parse_event_row(lineno: int, fields: list):
    """Parse one event row; returns (EventRecord, None) or (None, diagnostic)."""
    if len(fields) != 5:
        return None, f"line {lineno}: expected 5 fields, got {len(fields)}"
    try:
        ego = int(fields[0])
        alter = int(fields[1])
        ts = int(fields[2])
    except ValueError as exc:
        return None, f"line {lineno}: {exc}"
    kind = fields[3].strip()
    direction = fields[4].strip()
    if kind not in KINDS:
        return None, f"line {lineno}: unknown kind {kind!r}"
    if direction not in DIRECTIONS:
        return None, f"line {lineno}: unknown direction {direction!r}"
    if ego == alter:
        return None, f"line {lineno}: ego == alter ({ego})"
    return EventRecord(ego, alter, ts, kind, direction), None


def parse_node_row(lineno: int, fields: list):
    if len(fields) != 5:
        return None, None, f"line {lineno}: expected 5 fields, got {len(fields)}"
    if any(f.strip() == "" for f in fields):
        return None, None, f"line {lineno}: missing field"
    try:
        node = int(fields[0])
        age = int(fields[1])
        lat = float(fields[3])
        lon = float(fields[4])
    except ValueError as exc:
        return None, None, f"line {lineno}: {exc}"
    gender = fields[2].strip()
    if gender not in GENDERS:
        return None, None, f"line {lineno}: unknown gender {gender!r}"
    return node, NodeAttr(age, gender, lat, lon), None


def _read_rows(path, expected_header):
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header.split(",") != expected_header:
            raise GraphStoreError(
                f"{path}: header mismatch, expected {','.join(expected_header)!r}, got {header!r}"
            )
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if line:
                yield lineno, line.split(",")


def ingest(events, attrs, n_months: int | None = None) -> RawStore:
    """Group an event stream by ordered pair and calendar month.

    ``events`` yields EventRecord instances or (lineno, EventRecord-or-None,
    diagnostic) triples from row parsing; ``attrs`` maps node id to NodeAttr.
    Malformed rows become per-row diagnostics; the window defaults to the
    span of observed events, extended to ``n_months`` when given.
    """
    diagnostics = []
    records = []
    for item in events:
        if isinstance(item, EventRecord):
            rec, diag = item, None
            if rec.ego == rec.alter:
                rec, diag = None, f"record ego == alter ({item.ego})"
        else:
            lineno, fields = item
            rec, diag = parse_event_row(lineno, fields)
        if diag is not None:
            diagnostics.append(diag)
        else:
            records.append(rec)

    attrs = dict(attrs)
    if records:
        start_year, start_month = _ts_year_month(min(r.timestamp for r in records))
        span = max(
            month_index(r.timestamp, start_year, start_month) for r in records
        )
    else:
        start_year, start_month, span = 1970, 1, 0
    if n_months is None:
        n_months = span
    elif records and span > n_months:
        raise GraphStoreError(
            f"events span {span} months but the configured window is {n_months}"
        )

    pair_counts: dict = {}
    node_stats: dict = {}
    unknown = set()
    for rec in records:
        # attribute the event to its initiator
        if rec.direction == "out":
            src, dst = rec.ego, rec.alter
        else:
            src, dst = rec.alter, rec.ego
        t = month_index(rec.timestamp, start_year, start_month)
        bucket = pair_counts.setdefault((src, dst), {}).setdefault(t, [0, 0])
        bucket[0 if rec.kind == "call" else 1] += 1
        year = _ts_year_month(rec.timestamp)[0]
        for node in (rec.ego, rec.alter):
            st = node_stats.get(node)
            if st is None:
                st = node_stats[node] = _NodeStats(rec.timestamp, rec.timestamp)
            st.first_ts = min(st.first_ts, rec.timestamp)
            st.last_ts = max(st.last_ts, rec.timestamp)
            st.n_events += 1
            if rec.kind == "call":
                st.n_calls += 1
            st.years.add(year)
            if node not in attrs:
                unknown.add(node)

    return RawStore(
        pair_counts=pair_counts,
        node_stats=node_stats,
        attrs=attrs,
        n_months=n_months,
        start_year=start_year,
        start_month=start_month,
        diagnostics=diagnostics,
        unknown_nodes=unknown,
    )


def ingest_files(events_path, attrs_path, n_months: int | None = None) -> RawStore:
    """Ingest from the documented event and node-attribute file formats."""
    attrs = {}
    attr_diags = []
    for lineno, fields in _read_rows(attrs_path, NODE_HEADER):
        node, attr, diag = parse_node_row(lineno, fields)
        if diag is not None:
            attr_diags.append(f"{attrs_path}: {diag}")
        else:
            attrs[node] = attr
    store = ingest(_read_rows(events_path, EVENT_HEADER), attrs, n_months=n_months)
    store.diagnostics = attr_diags + store.diagnostics
    return store


# ---------------------------------------------------------------------------
# Filtering
# ---------------------------------------------------------------------------


def _daily_call_average(st: _NodeStats) -> float:
    days = max(1.0, (st.last_ts - st.first_ts) / 86400.0)
    return st.n_calls / days


def filter_users(store: RawStore, policy: FilterPolicy = FilterPolicy()) -> RawStore:
    """Drop users violating the filter policy, with all their events.

    Predicates are evaluated against the ingest-time activity profiles, so
    applying the filter twice equals applying it once.
    """
    years_required = set(store.years_spanned())

    def keep(node) -> bool:
        attr = store.attrs.get(node)
        if attr is None:
            return False
        if not (policy.min_age <= attr.age <= policy.max_age):
            return False
        st = store.node_stats.get(node)
        if st is None:
            return False
        if _daily_call_average(st) > policy.max_daily_calls:
            return False
        if policy.require_yearly_activity and not years_required <= st.years:
            return False
        return True

    surviving = {n for n in store.node_stats if keep(n)}
    pair_counts = {
        pair: {m: list(c) for m, c in months.items()}
        for pair, months in store.pair_counts.items()
        if pair[0] in surviving and pair[1] in surviving
    }
    return RawStore(
        pair_counts=pair_counts,
        node_stats={n: store.node_stats[n] for n in surviving},
        attrs={n: a for n, a in store.attrs.items() if n in surviving},
        n_months=store.n_months,
        start_year=store.start_year,
        start_month=store.start_month,
        diagnostics=list(store.diagnostics),
        unknown_nodes=set(),
    )


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def aggregate_monthly(store: RawStore) -> TemporalGraph:
    """Build monthly snapshots from a (filtered) raw store.

    Both ordered pairs (i, j) and (j, i) are materialized whenever either
    direction had activity in a month; their forward/backward channels
    mirror each other.
    """
    snapshots = [Snapshot(t, {}) for t in range(1, store.n_months + 1)]
    monthly: dict = {}
    for (i, j), months in store.pair_counts.items():
        for t, (calls, sms) in months.items():
            key = (min(i, j), max(i, j), t)
            fwd, bwd = monthly.setdefault(key, ([0, 0], [0, 0]))
            side = fwd if (i, j) == (key[0], key[1]) else bwd
            side[0] += calls
            side[1] += sms
    for (a, b, t), (fwd, bwd) in monthly.items():
        attr = EdgeAttr(fwd[0], fwd[1], bwd[0], bwd[1])
        snapshots[t - 1].edges[(a, b)] = attr
        snapshots[t - 1].edges[(b, a)] = attr.mirrored()
    return TemporalGraph(nodes=dict(store.attrs), snapshots=snapshots)


# ---------------------------------------------------------------------------
# Splitting and normalization
# ---------------------------------------------------------------------------


def temporal_split(graph: TemporalGraph, cutoffs=None) -> Split:
    """Validate and build the temporal split.

    Without explicit cutoffs the 24/6/6 month proportions of the default
    36-month configuration are applied (train 2/3, validation up to 5/6).
    """
    T = graph.n_months
    if T < 3:
        raise GraphStoreError(f"need at least 3 months to split, have {T}")
    if cutoffs is None:
        train_cutoff = max(1, round(T * 24 / 36))
        val_cutoff = max(train_cutoff + 1, round(T * 30 / 36))
        val_cutoff = min(val_cutoff, T - 1)
        cutoffs = (train_cutoff, val_cutoff, T)
    train_cutoff, val_cutoff, test_end = cutoffs
    if test_end != T:
        raise GraphStoreError(f"test_end must equal T={T}, got {test_end}")
    return Split(train_cutoff, val_cutoff, test_end)


_NODE_FEATURE_NAMES = ("age", "lat", "lon")
_EDGE_FEATURE_NAMES = ("calls_fwd", "sms_fwd", "calls_bwd", "sms_bwd")


def normalize(graph: TemporalGraph, split: Split) -> NormalizedGraph:
    """Scale node features to [-1, 1] and z-score edge inputs on train months.

    Regression targets keep the raw count scale; only the inputs are
    standardized. A constant node feature normalizes to 0.0 with a warning;
    a zero-variance edge feature on the training months is an error.
    """
    if not graph.nodes:
        raise GraphStoreError("cannot normalize an empty graph")
    node_ids = sorted(graph.nodes)
    raw = np.array(
        [
            [graph.nodes[v].age, graph.nodes[v].lat, graph.nodes[v].lon]
            for v in node_ids
        ],
        dtype=np.float64,
    )
    lo, hi = raw.min(axis=0), raw.max(axis=0)
    scaled = np.zeros_like(raw)
    for c in range(3):
        if hi[c] > lo[c]:
            scaled[:, c] = 2.0 * (raw[:, c] - lo[c]) / (hi[c] - lo[c]) - 1.0
        else:
            logger.warning(
                "node feature %s is constant; normalizing to 0.0", _NODE_FEATURE_NAMES[c]
            )
    gender = np.array(
        [0.0 if graph.nodes[v].gender == "A" else 1.0 for v in node_ids]
    )
    node_feat = np.column_stack([scaled[:, 0], gender, scaled[:, 1], scaled[:, 2]])

    train_rows = [
        attr.as_array()
        for t in split.train_months
        for attr in graph.snapshots[t - 1].edges.values()
    ]
    if not train_rows:
        raise GraphStoreError("training months contain no edges")
    train_arr = np.stack(train_rows)
    mean = train_arr.mean(axis=0)
    std = train_arr.std(axis=0)
    for c in range(4):
        if std[c] <= 0.0:
            raise GraphStoreError(
                f"edge feature {_EDGE_FEATURE_NAMES[c]} has zero variance on the training months"
            )
    stats = NormStats(node_min=lo, node_max=hi, edge_mean=mean, edge_std=std)

    edge_feat = []
    for snap in graph.snapshots:
        edge_feat.append(
            {pair: stats.standardize(attr.as_array()) for pair, attr in snap.edges.items()}
        )
    return NormalizedGraph(
        graph=graph,
        stats=stats,
        node_ids=node_ids,
        node_feat=node_feat,
        edge_feat=edge_feat,
    )


# ---------------------------------------------------------------------------
# k-hop sampling
# ---------------------------------------------------------------------------


def union_adjacency(graph: TemporalGraph) -> dict:
    """Undirected neighbor sets over the union of all snapshots."""
    adj: dict = {v: set() for v in graph.nodes}
    for s, d in graph.edge_union():
        adj[s].add(d)
        adj[d].add(s)
    return adj


def sample_khop(graph: TemporalGraph, seed: int, k: int, adjacency=None) -> Subgraph:
    """BFS ball of radius ``k`` around ``seed`` on the undirected union graph."""
    if seed not in graph.nodes:
        raise GraphStoreError(f"unknown seed node {seed}")
    if k < 0:
        raise GraphStoreError(f"hop count must be >= 0, got {k}")
    if adjacency is None:
        adjacency = union_adjacency(graph)
    dist = {seed: 0}
    queue = deque([seed])
    while queue:
        v = queue.popleft()
        if dist[v] == k:
            continue
        for u in adjacency[v]:
            if u not in dist:
                dist[u] = dist[v] + 1
                queue.append(u)
    members = frozenset(dist)
    snapshots = [
        Snapshot(
            snap.month,
            {
                pair: attr
                for pair, attr in snap.edges.items()
                if pair[0] in members and pair[1] in members
            },
        )
        for snap in graph.snapshots
    ]
    induced = TemporalGraph(
        nodes={v: graph.nodes[v] for v in members}, snapshots=snapshots
    )
    return Subgraph(seed=seed, k=k, nodes=members, graph=induced)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_graph(graph: TemporalGraph, path, stats: NormStats | None = None) -> None:
    """Write the versioned TemporalGraph container (byte-stable JSON)."""
    doc = {
        "format": GRAPH_FORMAT,
        "version": GRAPH_VERSION,
        "nodes": {
            str(v): [a.age, a.gender, a.lat, a.lon]
            for v, a in sorted(graph.nodes.items())
        },
        "snapshots": [
            {
                "month": snap.month,
                "edges": [
                    [s, d, e.calls_fwd, e.sms_fwd, e.calls_bwd, e.sms_bwd]
                    for (s, d), e in sorted(snap.edges.items())
                ],
            }
            for snap in graph.snapshots
        ],
        "norm": stats.to_dict() if stats is not None else None,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_graph(path):
    """Read a serialized TemporalGraph; returns (graph, NormStats or None)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != GRAPH_FORMAT:
        raise GraphStoreError(f"{path}: not a {GRAPH_FORMAT} container")
    if doc.get("version") != GRAPH_VERSION:
        raise GraphStoreError(f"{path}: unsupported version {doc.get('version')}")
    nodes = {
        int(v): NodeAttr(int(a[0]), a[1], float(a[2]), float(a[3]))
        for v, a in doc["nodes"].items()
    }
    snapshots = [
        Snapshot(
            sd["month"],
            {
                (s, d): EdgeAttr(cf, sf, cb, sb)
                for s, d, cf, sf, cb, sb in sd["edges"]
            },
        )
        for sd in doc["snapshots"]
    ]
    stats = NormStats.from_dict(doc["norm"]) if doc.get("norm") else None
    return TemporalGraph(nodes=nodes, snapshots=snapshots), stats


# ---------------------------------------------------------------------------
# File emission (shared with the generator and CLI)
# ---------------------------------------------------------------------------


def write_event_file(path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(EVENT_HEADER) + "\n")
        for r in records:
            fh.write(f"{r.ego},{r.alter},{r.timestamp},{r.kind},{r.direction}\n")


def write_node_file(path, attrs: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(NODE_HEADER) + "\n")
        for node in sorted(attrs):
            a = attrs[node]
            fh.write(f"{node},{a.age},{a.gender},{a.lat!r},{a.lon!r}\n")
