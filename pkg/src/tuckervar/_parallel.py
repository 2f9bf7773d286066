"""Order-preserving map over a thread pool."""
import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "TUCKERVAR_THREADS"


def resolve_threads(threads=None):
    """Explicit value, else ``$TUCKERVAR_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else 1
    threads = int(threads)
    if threads < 1:
        raise ValueError("threads must be at least 1")
    return threads


def parallel_map(fn, items, threads=1):
    """``list(map(fn, items))``, optionally on ``threads`` workers.

    Results come back in input order, so reductions over them do not depend
    on scheduling.
    """
    items = list(items)
    threads = resolve_threads(threads)
    if threads == 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))
