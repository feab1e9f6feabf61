"""Ordered process-pool map; results come back in task order for any worker count."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def map_ordered(fn, tasks, workers: int = 1) -> list:
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))
