"""Static and dynamic execution of the collapsed tile loop, plus imbalance metrics."""
from __future__ import annotations

import enum
import heapq
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .errors import ConfigError, LoopError


class SchedulePolicy(enum.Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"

    @classmethod
    def parse(cls, text) -> "SchedulePolicy":
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).lower())
        except ValueError:
            raise ConfigError(f"unknown schedule {text!r} (expected static or dynamic)") from None


def static_partition(n: int, threads: int) -> list[range]:
    """Contiguous near-equal chunks: the first ``n % threads`` get one extra index."""
    if n < 0 or threads < 1:
        raise ValueError(f"need n >= 0 and threads >= 1, got n={n} threads={threads}")
    base, extra = divmod(n, threads)
    out, start = [], 0
    for t in range(threads):
        size = base + (1 if t < extra else 0)
        out.append(range(start, start + size))
        start += size
    return out


@dataclass
class WorkerStats:
    busy: list[float]
    idle: list[float]
    tiles: list[int]
    cells: list[int]
    order: list[list[int]] = field(repr=False)
    spans: list[tuple[int, int]] = field(repr=False)
    wall: float = 0.0

    @classmethod
    def empty(cls, threads: int) -> "WorkerStats":
        return cls(
            busy=[0.0] * threads, idle=[0.0] * threads, tiles=[0] * threads,
            cells=[0] * threads, order=[[] for _ in range(threads)],
            spans=[(0, 0)] * threads,
        )

    @property
    def threads(self) -> int:
        return len(self.busy)

    def merge(self, other: "WorkerStats") -> None:
        """Accumulate another loop execution with the same thread count."""
        for w in range(self.threads):
            self.busy[w] += other.busy[w]
            self.idle[w] += other.idle[w]
            self.tiles[w] += other.tiles[w]
            self.cells[w] += other.cells[w]
        self.wall += other.wall


class WorkerPool:
    """A fixed set of ``threads`` workers reused across loop executions.

    With one thread the body runs inline on the caller.
    """

    def __init__(self, threads: int, name: str = "worker"):
        if threads < 1:
            raise ConfigError(f"thread count must be >= 1, got {threads}")
        self.threads = threads
        self._executor = (
            ThreadPoolExecutor(max_workers=threads, thread_name_prefix=name)
            if threads > 1 else None
        )

    def run(self, fn: Callable[[int], None]) -> None:
        """Call ``fn(w)`` for every worker id and wait for all of them."""
        if self._executor is None:
            fn(0)
            return
        futures = [self._executor.submit(fn, w) for w in range(self.threads)]
        for fut in futures:
            fut.result()

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def execute_collapsed_loop(
    tiles,
    policy,
    workers,
    body: Callable[[int], int | None],
    chunk: int = 1,
) -> WorkerStats:
    """Run ``body(k)`` for every collapsed index ``k`` under ``policy``.

    ``tiles`` is a length or a sized tile collection. ``workers`` is a thread
    count or a WorkerPool. ``body`` may return the number of cells it
    processed. Static gives each worker its static_partition range in
    ascending order; Dynamic hands out the lowest unclaimed ``chunk`` indices
    from a shared counter.
    """
    policy = SchedulePolicy.parse(policy)
    n = tiles if isinstance(tiles, int) else len(tiles)
    own_pool = not isinstance(workers, WorkerPool)
    pool = WorkerPool(workers) if own_pool else workers
    threads = pool.threads
    stats = WorkerStats.empty(threads)
    if n == 0:
        if own_pool:
            pool.close()
        return stats
    if chunk < 1:
        raise ConfigError(f"dynamic chunk size must be >= 1, got {chunk}")

    ranges = static_partition(n, threads)
    lock = threading.Lock()
    next_index = [0]
    abort = threading.Event()
    failure: list = []
    finish = [0] * threads

    def claim():
        with lock:
            start = next_index[0]
            if start >= n:
                return None
            next_index[0] = min(n, start + chunk)
            return range(start, next_index[0])

    def indices(w):
        if policy is SchedulePolicy.STATIC:
            yield from ranges[w]
            return
        while True:
            got = claim()
            if got is None:
                return
            yield from got

    def work(w):
        begin = time.perf_counter_ns()
        busy = 0
        for k in indices(w):
            if abort.is_set():
                break
            t0 = time.perf_counter_ns()
            try:
                cells = body(k)
            except BaseException as exc:  # noqa: BLE001 - re-raised below
                with lock:
                    failure.append((k, exc))
                abort.set()
                break
            busy += time.perf_counter_ns() - t0
            stats.order[w].append(k)
            stats.tiles[w] += 1
            stats.cells[w] += int(cells or 0)
        finish[w] = time.perf_counter_ns()
        stats.busy[w] = busy * 1e-9
        stats.spans[w] = (begin, finish[w])

    start = time.perf_counter_ns()
    try:
        pool.run(work)
    finally:
        if own_pool:
            pool.close()
    end = time.perf_counter_ns()
    stats.wall = (end - start) * 1e-9
    for w in range(threads):
        stats.idle[w] = max(0, end - finish[w]) * 1e-9
    if failure:
        k, exc = min(failure, key=lambda item: item[0])
        raise LoopError(f"loop body failed on tile {k}: {exc!r}", k) from exc
    return stats


def imbalance_metric(stats) -> float:
    """``max(busy) / mean(busy) - 1``; zero means perfectly balanced."""
    busy = stats.busy if isinstance(stats, WorkerStats) else list(stats)
    if not busy:
        raise ValueError("no threads")
    mean = sum(busy) / len(busy)
    if mean <= 0:
        raise ValueError("imbalance undefined: all busy times are zero")
    return max(busy) / mean - 1.0


def simulate_makespan(costs: Sequence[float], threads: int, policy) -> tuple[float, list[float]]:
    """Deterministic cost-model run of a loop; returns (makespan, per-worker load).

    Dynamic assigns each index, lowest first, to the worker that frees up
    earliest (ties to the lowest worker id).
    """
    policy = SchedulePolicy.parse(policy)
    loads = [0.0] * threads
    if policy is SchedulePolicy.STATIC:
        for w, r in enumerate(static_partition(len(costs), threads)):
            loads[w] = float(sum(costs[k] for k in r))
    else:
        heap = [(0.0, w) for w in range(threads)]
        for c in costs:
            t, w = heapq.heappop(heap)
            loads[w] += c
            heapq.heappush(heap, (t + c, w))
    return (max(loads) if loads else 0.0), loads
