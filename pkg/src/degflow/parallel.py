"""Worker-count plumbing.

Every parallel code path in degflow partitions work so that results do not
depend on the worker count: FFT workers split independent 1-d transforms, and
ladder rungs run as independent tasks collected by index.
"""

import os
from concurrent.futures import ThreadPoolExecutor

_threads = None


def get_threads():
    if _threads is not None:
        return _threads
    env = os.environ.get("DEGFLOW_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def set_threads(k):
    global _threads
    _threads = None if k is None else max(1, int(k))


def ordered_map(func, items, threads=None):
    """Map ``func`` over ``items`` and return results in input order."""
    items = list(items)
    workers = threads or get_threads()
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))
