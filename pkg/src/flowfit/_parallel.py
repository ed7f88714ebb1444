"""Worker-count policy and small parallel-map helpers.

FLOWFIT_THREADS caps process/thread parallelism everywhere; results are
always collected in task order so schedules never change outputs.
"""

import os
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor

__all__ = ["worker_cap", "thread_map", "process_map"]


def worker_cap(requested: int | None = None) -> int:
    env = os.environ.get("FLOWFIT_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    cap = max(1, cap)
    if requested is None:
        return cap
    return max(1, min(requested, cap))


def thread_map(fn, tasks, workers: int | None = None):
    tasks = list(tasks)
    n = worker_cap(workers if workers is not None else len(tasks))
    if n <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=min(n, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def process_map(fn, tasks, workers: int | None = None):
    tasks = list(tasks)
    n = worker_cap(workers if workers is not None else len(tasks))
    if n <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(n, len(tasks))) as pool:
        return list(pool.map(fn, tasks))
