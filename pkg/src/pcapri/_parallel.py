import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "PCAPRI_THREADS"


def resolve_threads(threads=None) -> int:
    """Worker count: explicit value, else ``$PCAPRI_THREADS``, else 1."""
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1") or 1)
    return max(1, int(threads))


def ordered_map(func, items, threads=None):
    """``map`` that may run on a thread pool but always yields in input order.

    Callers merge results sequentially, so reductions are bit-identical
    for any worker count.
    """
    n = resolve_threads(threads)
    if n == 1:
        for item in items:
            yield func(item)
        return
    with ThreadPoolExecutor(max_workers=n) as pool:
        yield from pool.map(func, items)
