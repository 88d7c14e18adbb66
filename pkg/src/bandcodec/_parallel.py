import os
from concurrent.futures import ThreadPoolExecutor

ENV_VAR = "BANDCODEC_THREADS"


def max_workers() -> int:
    """Worker cap from ``BANDCODEC_THREADS`` (0 or unset means CPU count)."""
    raw = os.environ.get(ENV_VAR, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n


def ordered_map(fn, items):
    """``list(map(fn, items))``, possibly threaded; result order is input order."""
    items = list(items)
    workers = min(max_workers(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
