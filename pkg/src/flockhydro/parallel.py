"""Worker-count policy shared by the parallel loops."""

import os

from .errors import ConfigError

ENV = "FLOCKHYDRO_THREADS"


def max_workers(default=None):
    """Thread cap from FLOCKHYDRO_THREADS, else ``default`` or the CPU count."""
    raw = os.environ.get(ENV)
    if raw is None or raw == "":
        return default or os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(ENV, f"must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(ENV, f"must be a positive integer, got {raw!r}")
    return n


def parallel_map(fn, items, workers=None):
    """``list(map(fn, items))`` on a thread pool; results keep input order."""
    items = list(items)
    workers = min(workers or max_workers(), len(items)) if items else 1
    if workers <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
