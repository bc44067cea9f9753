"""Deterministic worker pool sized by SPINLAB_THREADS."""

import os
from concurrent.futures import ThreadPoolExecutor


def thread_count(requested=None):
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("SPINLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def ordered_map(fn, items, threads=None):
    """map() whose output order (and thus every reduction) ignores scheduling."""
    items = list(items)
    n = thread_count(threads)
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
