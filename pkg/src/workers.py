"""Process pool helper for per-matrix work.

Workers must be module-level callables so they pickle.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from . import config

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def resolve_jobs(jobs: Optional[int]) -> int:
    """Explicit job count, else JACOBI_RL_JOBS."""
    if jobs is None:
        jobs = config.settings.jobs
    return max(1, int(jobs))


def parallel_map(fn: Callable[[T], R], items: Iterable[T], jobs: Optional[int] = 1) -> List[R]:
    """Map ``fn`` over ``items`` keeping input order.

    Runs in-process when ``jobs`` is 1 or there is at most one item.
    """
    work = list(items)
    jobs = resolve_jobs(jobs)
    if jobs == 1 or len(work) <= 1:
        return [fn(item) for item in work]

    workers = min(jobs, len(work))
    logger.debug("parallel_map: %d items on %d workers", len(work), workers)
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, work, chunksize=max(1, len(work) // (4 * workers))))
