"""Order-preserving map with optional process parallelism.

Results are aggregated by task index, so the output is independent of the
worker count; every task carries its own seed stream.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, Optional, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

__all__ = ["resolve_jobs", "parallel_map"]


def resolve_jobs(jobs: Optional[int] = None) -> int:
    """Explicit value, else AGAL_JOBS, else available parallelism."""
    if jobs is not None and jobs > 0:
        return jobs
    env = os.environ.get("AGAL_JOBS")
    if env:
        try:
            val = int(env)
            if val > 0:
                return val
        except ValueError:
            pass
    return os.cpu_count() or 1


def parallel_map(fn: Callable[[T], R], items: Sequence[T], jobs: int = 1) -> List[R]:
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))
