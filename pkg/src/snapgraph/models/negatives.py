"""Negative query-edge sampling over a prepared snapshot sequence.

Two flavors:

* random    -- ordered pairs that are never connected in any month, drawn
  uniformly without replacement at a multiple of the month's positives,
* historical -- every pair seen strictly before month t but absent at t.

Both use local node indices from the SeqInputs. Negative query targets are
zero on both channels by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..graphstore import GraphStoreError
from .architectures import SeqInputs

# below this many candidate pairs we enumerate instead of rejection-sampling
_ENUMERATION_LIMIT = 200_000


@dataclass
class NegativeSample:
    pairs: list  # local (src, dst)
    kind: str  # "random" | "historical"
    complete: bool  # False when fewer candidates exist than requested


def union_pairs(seq: SeqInputs) -> set:
    out = set()
    for snap in seq.raw_snapshots:
        out.update(snap)
    return out


def sample_negatives(seq: SeqInputs, month: int, kind: str, ratio: int = 10,
                     rng: np.random.Generator | None = None) -> NegativeSample:
    if not 1 <= month <= seq.n_months:
        raise GraphStoreError(f"month {month} outside 1..{seq.n_months}")
    if kind == "historical":
        return NegativeSample(historical_negatives(seq, month), "historical", True)
    if kind != "random":
        raise GraphStoreError(f"unknown negative kind {kind!r}")
    if rng is None:
        raise GraphStoreError("random negative sampling needs an rng")
    wanted = ratio * len(seq.raw_snapshots[month - 1])
    pairs, complete = _random_never_connected(seq, wanted, rng)
    return NegativeSample(pairs, "random", complete)


def _random_never_connected(seq: SeqInputs, wanted: int, rng):
    n = seq.n_nodes
    forbidden = union_pairs(seq)
    possible = n * (n - 1) - len(forbidden)
    if wanted <= 0:
        return [], True
    if possible <= 0:
        return [], False
    if n * n <= _ENUMERATION_LIMIT or wanted >= possible:
        allowed = sorted(
            (s, d)
            for s in range(n)
            for d in range(n)
            if s != d and (s, d) not in forbidden
        )
        if wanted >= len(allowed):
            return allowed, wanted == len(allowed)
        idx = rng.choice(len(allowed), size=wanted, replace=False)
        return [allowed[i] for i in sorted(idx)], True
    chosen: dict = {}
    attempts = 0
    while len(chosen) < wanted and attempts < 60:
        attempts += 1
        k = 2 * (wanted - len(chosen)) + 16
        src = rng.integers(0, n, size=k)
        dst = rng.integers(0, n, size=k)
        for s, d in zip(src.tolist(), dst.tolist()):
            if s != d and (s, d) not in forbidden and (s, d) not in chosen:
                chosen[(s, d)] = None
                if len(chosen) == wanted:
                    break
    pairs = list(chosen)
    return pairs, len(pairs) == wanted


def historical_negatives(seq: SeqInputs, month: int) -> list:
    """Pairs connected at some month < t but not at t, sorted for determinism."""
    past = set()
    for snap in seq.raw_snapshots[: month - 1]:
        past.update(snap)
    current = set(seq.raw_snapshots[month - 1])
    return sorted(past - current)
