"""Worker pool and deterministic chunked sampling."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

CHUNK = 16384


def worker_count() -> int:
    cap = os.environ.get("SOBOMAP_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = max(1, min(n, int(cap)))
        except ValueError:
            raise ValueError(f"SOBOMAP_THREADS must be an integer, got {cap!r}") from None
    return n


def as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def map_chunks(fn: Callable[[int, np.random.Generator], np.ndarray], total: int,
               rng: np.random.Generator, chunk: int = CHUNK) -> list:
    """Run fn(count, generator) over fixed-size chunks.

    Chunk sizes and child seeds depend only on `total` and `rng`, so the
    result does not change with the worker count.
    """
    sizes = [chunk] * (total // chunk) + ([total % chunk] if total % chunk else [])
    root = np.random.SeedSequence(int(rng.integers(2**63)))
    gens = [np.random.default_rng(s) for s in root.spawn(len(sizes))]
    workers = min(worker_count(), len(sizes)) or 1
    if workers == 1:
        return [fn(n, g) for n, g in zip(sizes, gens)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, sizes, gens))
