"""
Bounded worker pool for independent evaluations.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

from .config import Config

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def map_bounded(fn: Callable[[T], R], items: Iterable[T], max_workers: int | None = None) -> list[R]:
    """
    Apply fn to every item on at most SWEEP_THREADS threads.

    Results come back in input order; the first exception raised by a task
    propagates to the caller.
    """
    items = list(items)
    workers = min(max_workers or Config.SWEEP_THREADS, len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
