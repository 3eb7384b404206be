# ============================================
#   Suppress — Worker pool
# ============================================

from concurrent.futures import ThreadPoolExecutor


def parallel_map(fn, items, threads: int = 1) -> list:
    """
    Map `fn` over `items` with up to `threads` workers.
    Results always come back in input order, so output never depends
    on the thread count. threads <= 1 runs inline.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
