"""Named, independent random streams derived from a single root seed."""

from __future__ import annotations

import numpy as np

# Fixed stream keys; appending new names never perturbs existing streams.
STREAMS = {
    "layout": 0,
    "skills": 1,
    "dynamics": 2,
    "market": 3,
    "fiscal": 4,
    "policy": 5,
    "planner": 6,
}


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    key = (STREAMS[name], *extra)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def child_seed(seed: int, index: int) -> int:
    """Deterministic 32-bit seed for the ``index``-th child of ``seed``."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])
