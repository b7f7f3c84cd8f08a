"""Worker-pool helper with deterministic, order-preserving results.

The GASTRO_THREADS environment variable caps parallelism; results are
always merged in input order so parallel stages stay bit-reproducible.
"""

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count() -> int:
    env = os.environ.get("GASTRO_THREADS", "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, min(4, os.cpu_count() or 1))


def ordered_map(fn, items, workers: int | None = None) -> list:
    """Like ``list(map(fn, items))`` but threaded, preserving input order."""
    items = list(items)
    n = workers if workers is not None else worker_count()
    if n <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
