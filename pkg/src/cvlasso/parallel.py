"""Seed streams and order-stable replication maps."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Sequence

import numpy as np


def stream(seed: int | None, *key: int) -> np.random.SeedSequence:
    """Child seed sequence addressed by an integer key path (order independent)."""
    return np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))


def rng(seed: int | None, *key: int) -> np.random.Generator:
    return np.random.default_rng(stream(seed, *key))


def replicate(fn: Callable[..., Any], jobs: Sequence[tuple], threads: int = 1) -> list[Any]:
    """Apply ``fn(*job)`` to every job; results are returned in job order."""
    if threads <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, *job) for job in jobs]
        return [f.result() for f in futures]

