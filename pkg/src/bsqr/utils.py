"""Shared plumbing: seeded counter-based RNG streams and bounded parallelism."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

__all__ = ["chain_rng", "worker_count", "thread_map"]


def chain_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent reproducible stream from a counter-based generator.

    Philox is keyed by (seed, stream), so distinct streams are independent
    by construction and a (seed, stream) pair always replays identically.
    """
    key = np.array([int(seed) % 2**64, int(stream) % 2**64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def worker_count() -> int:
    """Worker cap from BSQR_THREADS; defaults to 1 (serial, deterministic order)."""
    raw = os.environ.get("BSQR_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def thread_map(fn, items):
    """Map preserving order, threaded only when BSQR_THREADS allows it.

    Each item must carry its own RNG stream; results are collected in input
    order so runs are bit-identical regardless of the worker count.
    """
    items = list(items)
    workers = worker_count()
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
