import os
from concurrent.futures import ThreadPoolExecutor


def resolve_threads(threads: int | None) -> int:
    """Explicit value, else ``EWINFER_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get("EWINFER_THREADS")
        threads = int(env) if env else 1
    return max(int(threads), 1)


def pmap(fn, items, threads: int | None = None) -> list:
    """Ordered map; runs on a thread pool when more than one thread is requested.

    The walk kernel releases the GIL, so threads give real parallelism for
    sampler-heavy work. Output order always matches input order.
    """
    items = list(items)
    threads = resolve_threads(threads)
    if threads == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))
