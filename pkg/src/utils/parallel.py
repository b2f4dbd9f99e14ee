from concurrent.futures import ThreadPoolExecutor

from utils.logger import setup_logger

logger = setup_logger("utils.parallel")


def map_rays(func, items, threads=1):
    """
    Applies func to every item, keeping input order.
    threads <= 1 runs serially; scenes are shared read-only between workers.
    """
    items = list(items)
    if threads is None or threads <= 1 or len(items) < 2:
        return [func(item) for item in items]

    logger.debug(f"Dispatching {len(items)} rays over {threads} threads")
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))
