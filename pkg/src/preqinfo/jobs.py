"""Worker pool for independent jobs (seed replicates, chains, reference models).

Results always come back in submission order, so assembly does not depend on
which worker finishes first.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Optional

JOBS_ENV = "PREQINFO_JOBS"


def resolve_jobs(jobs: Optional[int] = None) -> int:
    if jobs is None:
        raw = os.environ.get(JOBS_ENV, "").strip()
        jobs = int(raw) if raw else 1
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    return int(jobs)


def run_jobs(fn: Callable, items: Iterable, jobs: Optional[int] = None) -> list:
    """Apply ``fn`` to every item, in parallel when ``jobs > 1``; order is preserved."""
    items = list(items)
    n = min(resolve_jobs(jobs), max(1, len(items)))
    if n == 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
