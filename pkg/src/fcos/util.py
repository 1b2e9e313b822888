"""Small shared helpers."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def run_parallel(fn, items, workers: int = 1) -> list:
    """Maps fn over items preserving input order; workers > 1 uses threads.

    Each task must be self-contained and deterministic, so the result is
    independent of the worker count.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
