"""Order-preserving thread map; worker count from ``L1CHAIN_WORKERS``."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable

WORKERS_ENV = "L1CHAIN_WORKERS"


def worker_count(workers: int | None = None) -> int:
    if workers is None:
        try:
            workers = int(os.environ.get(WORKERS_ENV, "1"))
        except ValueError:
            workers = 1
    return max(1, int(workers))


def pmap(fn: Callable, items: Iterable, workers: int | None = None) -> list:
    """``[fn(x) for x in items]`` evaluated on a thread pool; result order is input order."""
    items = list(items)
    n = worker_count(workers)
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
