"""Deterministic per-task random streams.

Every Monte Carlo task derives its generator from ``(master_seed, index)`` so
results do not depend on worker count or scheduling order.
"""

from __future__ import annotations

import numpy as np


def task_seed(master_seed: int, *index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(i) for i in index))


def task_rng(master_seed: int, *index: int) -> np.random.Generator:
    """Generator for task ``index`` under ``master_seed``."""
    return np.random.default_rng(task_seed(master_seed, *index))


def as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
