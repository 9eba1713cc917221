"""Process pool over independent replicas with an ordered merge."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def resolve_workers(workers) -> int:
    if workers is None or workers == 0:
        return os.cpu_count() or 1
    if workers < 0:
        raise ValueError("workers must be non-negative")
    return int(workers)


def run_replicas(fn, tasks, workers=1):
    """``[fn(t) for t in tasks]``, possibly in parallel, always in task order."""
    tasks = list(tasks)
    workers = min(resolve_workers(workers), len(tasks)) or 1
    if workers == 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))
