"""Order-preserving process-pool map used for per-image work."""

from __future__ import annotations

import atexit
import os
from concurrent.futures import ProcessPoolExecutor

from .data_model import ValidationError

ENV_VAR = "KPT_DIAGNOSE_PARALLEL"

_pools: dict[int, ProcessPoolExecutor] = {}


def resolve_workers(workers=None) -> int:
    if workers is None:
        workers = os.environ.get(ENV_VAR, 1)
    try:
        workers = int(workers)
    except (TypeError, ValueError):
        raise ValidationError(f"worker count must be an integer, got {workers!r}")
    return max(1, workers)


def _pool(workers: int) -> ProcessPoolExecutor:
    pool = _pools.get(workers)
    if pool is None:
        pool = _pools[workers] = ProcessPoolExecutor(max_workers=workers)
    return pool


@atexit.register
def shutdown() -> None:
    for pool in _pools.values():
        pool.shutdown(cancel_futures=True)
    _pools.clear()


def pmap(fn, items, workers=1) -> list:
    """``list(map(fn, items))``, optionally spread over worker processes.

    Results always come back in input order, so callers reduce them
    deterministically regardless of the worker count.
    """
    items = list(items)
    workers = resolve_workers(workers)
    if workers == 1 or len(items) < 2:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (4 * workers))
    return list(_pool(workers).map(fn, items, chunksize=chunk))
