"""Thread-pool helper honouring ``PAINT_THREADS``."""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from app.config import settings

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def worker_count(requested: Optional[int] = None) -> int:
    """Resolve the worker cap: explicit value, else ``PAINT_THREADS`` (0 = auto)."""
    n = settings.threads if requested is None else requested
    if n <= 0:
        n = os.cpu_count() or 1
    return max(1, n)


def map_ordered(fn: Callable[[T], R], items: Iterable[T], workers: Optional[int] = None) -> List[R]:
    """Apply ``fn`` to every item, possibly concurrently; results keep input order.

    Downstream reductions iterate the returned list, so summation order is fixed
    regardless of how many workers ran.
    """
    items = list(items)
    n = min(worker_count(workers), max(1, len(items)))
    if n == 1:
        return [fn(item) for item in items]
    logger.debug(f"Running {len(items)} tasks on {n} threads")
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
