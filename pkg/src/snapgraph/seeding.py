"""Deterministic named RNG streams.

All randomness in the toolkit funnels through a single root seed. Components
(data generation, negative sampling, parameter init, ...) each get their own
stream derived from (root_seed, name), so re-seeding one component never
perturbs the others.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root_seed: int, name: str) -> int:
    """Derive a child seed from a root seed and a stream name."""
    digest = hashlib.sha256(f"{root_seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def stream(root_seed: int, name: str) -> np.random.Generator:
    """A numpy Generator for the named stream of ``root_seed``."""
    return np.random.default_rng(derive_seed(root_seed, name))
