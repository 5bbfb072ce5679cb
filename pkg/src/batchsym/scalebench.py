"""Wall-clock scheduler throughput benchmark.

Measures sustained scheduling decisions per second with synthetic requests
injected in-process against the two-plane scheduler; GPUs are in-process
stubs. Two dimensions:

* worker scaling: the model set is sharded across worker processes, each
  worker driving its own scheduler shard (its model planes plus a rank
  plane over its share of GPU stubs) at full speed for the measurement
  interval; aggregate throughput is the sum.
* GPU-count scaling: a single shard with a growing GPU stub count shows
  how per-decision cost responds to the size of the availability index.
"""

from __future__ import annotations

import multiprocessing as mp
import time
from dataclasses import dataclass

from .profile import LatencyProfile, ModelSpec
from .scheduler import PolicyConfig, Request
from .simulator import Engine
from .units import ms_to_ns

_BENCH_ALPHA_MS = 1.0
_BENCH_BETA_MS = 5.0
_BENCH_SLO_MS = 25.0
_CHECK_EVERY = 2048


@dataclass(frozen=True)
class BenchPoint:
    workers: int
    gpus: int
    models: int
    requests: int
    elapsed_s: float

    @property
    def throughput_rps(self) -> float:
        return self.requests / self.elapsed_s if self.elapsed_s > 0 else 0.0

    @property
    def cost_per_decision_us(self) -> float:
        return 1e6 * self.elapsed_s / self.requests if self.requests else 0.0


def _shard_loop(n_models: int, n_gpus: int, duration_s: float) -> int:
    """Drive one scheduler shard flat out for duration_s; returns the number
    of requests pushed through arrival handling and dispatch."""
    profile = LatencyProfile.linear(_BENCH_ALPHA_MS, _BENCH_BETA_MS,
                                    max_batch=32)
    slo = ms_to_ns(_BENCH_SLO_MS)
    models = [ModelSpec(i, f"bench{i}", profile, slo)
              for i in range(n_models)]
    engine = Engine(models, n_gpus, PolicyConfig("deferred"))
    # virtual arrival gap sized so the shard stays saturated but feasible:
    # ~80% of the staggered capacity of the shard's GPU pool
    bs = 16
    cap_rps = n_gpus * bs * 1e9 / profile.latency(bs)
    gap_ns = max(1, int(1e9 / (0.8 * cap_rps)))
    deadline = time.monotonic() + duration_s
    heap = engine._heap
    import heapq

    n = 0
    t = 0
    mid = 0
    while True:
        rid = n + 1
        engine.now = t
        req = Request(rid, mid, t, t + slo)
        engine._record_arrival(req)
        engine.planes[mid].on_new_request(req, t)
        n += 1
        t += gap_ns
        mid += 1
        if mid == n_models:
            mid = 0
        while heap and heap[0][0] <= t:
            engine._dispatch_event(heapq.heappop(heap))
        if n % _CHECK_EVERY == 0 and time.monotonic() >= deadline:
            break
    return n


def _worker_entry(n_models, n_gpus, duration_s, queue):
    queue.put(_shard_loop(n_models, n_gpus, duration_s))


def bench_workers(workers: int, total_models: int, total_gpus: int,
                  duration_s: float) -> BenchPoint:
    """Aggregate scheduling throughput with the model set sharded across
    `workers` processes."""
    if workers == 0:
        return BenchPoint(0, total_gpus, total_models, 0, duration_s)
    n_models = max(1, total_models // workers)
    n_gpus = max(1, total_gpus // workers)
    t0 = time.monotonic()
    if workers == 1:
        n = _shard_loop(n_models, n_gpus, duration_s)
        return BenchPoint(1, total_gpus, total_models, n,
                          time.monotonic() - t0)
    ctx = mp.get_context("fork")
    queue = ctx.Queue()
    procs = [ctx.Process(target=_worker_entry,
                         args=(n_models, n_gpus, duration_s, queue))
             for _ in range(workers)]
    for p in procs:
        p.start()
    total = 0
    for _ in procs:
        total += queue.get()
    for p in procs:
        p.join()
    elapsed = time.monotonic() - t0
    return BenchPoint(workers, total_gpus, total_models, total, elapsed)


def bench_gpu_scaling(gpu_counts: list[int], duration_s: float,
                      n_models: int = 32) -> list[BenchPoint]:
    """Per-decision cost versus the in-process GPU stub count, one shard."""
    points = []
    for g in gpu_counts:
        t0 = time.monotonic()
        n = _shard_loop(n_models, g, duration_s)
        points.append(BenchPoint(1, g, n_models, n, time.monotonic() - t0))
    return points


def scale_bench(worker_counts: list[int], gpu_counts: list[int],
                duration_s: float, total_models: int = 64,
                total_gpus: int = 128) -> dict:
    """Run both benchmark dimensions; returns {'workers': [...], 'gpus': [...]}."""
    worker_points = [bench_workers(w, total_models, total_gpus, duration_s)
                     for w in worker_counts]
    gpu_points = bench_gpu_scaling(gpu_counts, duration_s)
    return {"workers": worker_points, "gpus": gpu_points}
