"""Seeded, chunked sampling that does not depend on the thread count.

Every chunk draws from its own generator seeded with ``(seed, stream,
chunk_index)``; results are always combined in chunk order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

CHUNK_SIZE = 8192

# independent random streams per purpose, so equal seeds never share draws
STREAM_FIT = 0
STREAM_RECON = 1
STREAM_SAMPLE = 2
STREAM_MONTE_CARLO = 3


def chunk_rng(seed: int, stream: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream, chunk])


def chunk_bounds(total: int, chunk_size: int = CHUNK_SIZE) -> list[tuple[int, int]]:
    return [(lo, min(lo + chunk_size, total)) for lo in range(0, total, chunk_size)]


def resolve_threads(threads) -> int:
    if threads in (None, "auto", 0):
        return os.cpu_count() or 1
    return max(1, int(threads))


def map_chunks(fn, bounds, threads=1) -> list:
    """``[fn(i, lo, hi) for i, (lo, hi) in enumerate(bounds)]``, possibly threaded."""
    n = resolve_threads(threads)
    args = [(i, lo, hi) for i, (lo, hi) in enumerate(bounds)]
    if n == 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(lambda a: fn(*a), args))
