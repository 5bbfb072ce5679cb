"""Deterministic discrete-event engine with GPU emulation by delay.

Events are ordered by (tick, priority, sequence). Priorities fix the
processing order of simultaneous events: batch completions first, then the
GPU matchmaking timer, then model timers, then per-model drop timers, then
new arrivals. The sequence number makes the whole ordering total, so a run
is a pure function of (scenario, seed).

GPUs are emulated by introducing a delay: an execution order occupies the
GPU for exactly the profiled duration. With constant network delays every
dispatched batch therefore finishes exactly when planned; jittered delays
can push actual starts past the plan and produce late completions.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .network import NetworkModel
from .profile import ModelSpec
from .scheduler import (ExecutionOrder, ModelPlane, PolicyConfig,
                        ProtocolError, RankPlane, Request)
from .units import NEG_INF, s_to_ns
from .workload import STREAM_NETWORK, WorkloadSpec, generate_arrivals, substream

EV_COMPLETION = 0
EV_GPU_TIMER = 1
EV_MODEL_TIMER = 2
EV_DROP_TIMER = 3
EV_ARRIVAL = 4  # not heaped; merged from the arrival stream

OUTCOME_COMPLETED = 0
OUTCOME_LATE = 1
OUTCOME_DROPPED = 2

OUTCOME_NAMES = ("completed", "late", "dropped")

TRACE_DISPATCH = "dispatch"
TRACE_DROP = "drop"
TRACE_SHRINK = "shrink"


class EmulatedGpu:
    __slots__ = ("gpu_id", "busy_until", "orders")

    def __init__(self, gpu_id: int):
        self.gpu_id = gpu_id
        self.busy_until = 0
        self.orders: list[ExecutionOrder] = []

    def execute(self, order: ExecutionOrder) -> ExecutionOrder:
        if order.start < self.busy_until:
            # late previous finish (possible only under jitter): serialize
            shift = self.busy_until - order.start
            order.start += shift
            order.finish += shift
        self.busy_until = order.finish
        self.orders.append(order)
        return order


@dataclass
class RunResult:
    model_names: list[str]
    gpu_count: int
    duration_ns: int
    # parallel per-request arrays, indexed by request_id - 1
    req_model: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    req_arrival: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    req_deadline: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    req_dispatch: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    req_start: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    req_finish: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    req_batch: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    req_outcome: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    gpu_logs: list[list[tuple[int, int, int, int]]] = field(default_factory=list)
    trace: list[tuple] = field(default_factory=list)
    drops: int = 0
    completions: int = 0
    late: int = 0

    @property
    def n_requests(self) -> int:
        return len(self.req_model)


class InvariantViolation(AssertionError):
    pass


class Engine:
    """Binds model planes, the rank plane, emulated GPUs, and the event
    queue. Also serves as the planes' host: it owns timer arming, grant
    delivery, and all bookkeeping side effects."""

    def __init__(self, models: list[ModelSpec], gpu_count: int,
                 policy: PolicyConfig, network: NetworkModel | None = None,
                 seed: int = 0, record_trace: bool = False,
                 check_invariants: bool = False):
        if gpu_count < 1:
            raise ValueError("need at least one GPU")
        self.models = models
        self.policy = policy
        self.network = network or NetworkModel.zero()
        self.record_trace = record_trace
        self.check_invariants = check_invariants
        self.now = 0
        self._heap: list[tuple] = []
        self._seq = 0
        self.rank = RankPlane(gpu_count, len(models), policy, self)
        self.planes = [ModelPlane(spec, policy, self) for spec in models]
        self.gpus = [EmulatedGpu(g) for g in range(gpu_count)]
        if self.network.jitterless:
            self._net_sampler = None
        else:
            rng = substream(seed, STREAM_NETWORK)
            ctrl = self.network.d_ctrl.sampler(rng)
            data = self.network.d_data.sampler(rng)
            self._net_sampler = lambda b: ctrl() + data() * b
        # per-request records, appended at arrival, patched on outcome
        self._model_idx: list[int] = []
        self._arrival: list[int] = []
        self._deadline: list[int] = []
        self._dispatch: list[int] = []
        self._start: list[int] = []
        self._finish: list[int] = []
        self._batch: list[int] = []
        self._outcome: list[int] = []
        self.trace: list[tuple] = []
        # conservation counters
        self.n_arrivals = 0
        self.n_queued = 0
        self.n_inflight = 0
        self.n_completed = 0
        self.n_dropped = 0
        self._seen_rids: set[int] | None = set() if check_invariants else None
        self.handler_ops_max = 0

    # -- host interface used by the planes ----------------------------------

    def push_model_timer(self, tick, mid, gen, size, exec_at, latest):
        self._push(tick, EV_MODEL_TIMER, (mid, gen, size, exec_at, latest))

    def push_gpu_timer(self, tick, gpu_id, gen):
        self._push(tick, EV_GPU_TIMER, (gpu_id, gen))

    def push_drop_timer(self, tick, mid, gen):
        self._push(tick, EV_DROP_TIMER, (mid, gen))

    def deliver_grant(self, mid, gpu_id, gpu_free_at, now):
        self.planes[mid].granted_gpu(gpu_id, gpu_free_at, now)

    def sample_dispatch_delay(self, b: int) -> int | None:
        return self._net_sampler(b) if self._net_sampler is not None else None

    def emit_order(self, order: ExecutionOrder, members: list[Request]):
        order = self.gpus[order.gpu_id].execute(order)
        self.n_queued -= order.size
        self.n_inflight += order.size
        for r in members:
            i = r.rid - 1
            self._dispatch[i] = order.emitted_at
            self._start[i] = order.start
            self._finish[i] = order.finish
            self._batch[i] = order.size
        self._push(order.finish, EV_COMPLETION, order)
        if self.record_trace:
            self.trace.append((order.emitted_at, TRACE_DISPATCH,
                               order.model_id, order.gpu_id, order.size,
                               order.start, order.finish, order.request_ids))

    def record_drop(self, req: Request, now: int, reason: str):
        i = req.rid - 1
        self._outcome[i] = OUTCOME_DROPPED
        self.n_queued -= 1
        self.n_dropped += 1
        if self.record_trace:
            self.trace.append((now, TRACE_DROP, req.model_id, -1, 0,
                               -1, -1, (req.rid,)))

    def record_shrink(self, mid, gpu_id, pre_size, new_size, now):
        if self.record_trace:
            self.trace.append((now, TRACE_SHRINK, mid, gpu_id, new_size,
                               -1, -1, ()))

    # -- event loop ----------------------------------------------------------

    def _push(self, tick, prio, payload):
        self._seq += 1
        heapq.heappush(self._heap, (tick, prio, self._seq, payload))

    def run(self, workload: WorkloadSpec, duration_s: float, seed: int
            ) -> RunResult:
        names = [m.name for m in self.models]
        arr_ticks, arr_midx = generate_arrivals(workload, names, duration_s, seed)
        return self.run_stream(arr_ticks, arr_midx, duration_s)

    def run_stream(self, arr_ticks, arr_midx, duration_s: float) -> RunResult:
        n_arr = len(arr_ticks)
        slo = [m.slo_ns for m in self.models]
        n_models = len(self.models)
        heap = self._heap
        i = 0
        while heap or i < n_arr:
            if i < n_arr:
                at = int(arr_ticks[i])
                if heap and (heap[0][0], heap[0][1]) <= (at, EV_ARRIVAL):
                    self._dispatch_event(heapq.heappop(heap))
                else:
                    midx = int(arr_midx[i])
                    if midx < 0 or midx >= n_models:
                        raise ProtocolError(f"request for unknown model {midx}")
                    i += 1
                    rid = self.n_arrivals + 1
                    self.now = at
                    req = Request(rid, midx, at, at + slo[midx])
                    self._record_arrival(req)
                    self.planes[midx].on_new_request(req, at)
            else:
                self._dispatch_event(heapq.heappop(heap))
            if self.check_invariants:
                self._verify()
        return self._result(duration_s)

    def _record_arrival(self, req: Request):
        if self._seen_rids is not None:
            if req.rid in self._seen_rids:
                raise ProtocolError(f"duplicate request id {req.rid}")
            self._seen_rids.add(req.rid)
        self.n_arrivals += 1
        self.n_queued += 1
        self._model_idx.append(req.model_id)
        self._arrival.append(req.arrival)
        self._deadline.append(req.deadline)
        self._dispatch.append(-1)
        self._start.append(-1)
        self._finish.append(-1)
        self._batch.append(-1)
        self._outcome.append(-1)

    def _dispatch_event(self, ev):
        tick, prio, _, payload = ev
        self.now = tick
        ops0 = self.rank.ops
        ev0 = self.rank.evictions
        if prio == EV_COMPLETION:
            order: ExecutionOrder = payload
            self.n_inflight -= order.size
            self.n_completed += order.size
            for rid in order.request_ids:
                i = rid - 1
                if order.finish <= self._deadline[i]:
                    self._outcome[i] = OUTCOME_COMPLETED
                else:
                    self._outcome[i] = OUTCOME_LATE
        elif prio == EV_GPU_TIMER:
            gpu_id, gen = payload
            self.rank.on_gpu_timer(gpu_id, gen, tick)
        elif prio == EV_MODEL_TIMER:
            mid, gen, size, exec_at, latest = payload
            self.rank.on_model_timer(mid, gen, size, exec_at, latest, tick)
        elif prio == EV_DROP_TIMER:
            mid, gen = payload
            self.planes[mid].on_drop_timer(gen, tick)
        # evictions are amortized against their registrations, so they are
        # excluded from the per-handler ordered-op bound
        ops = (self.rank.ops - ops0) - 2 * (self.rank.evictions - ev0)
        if ops > self.handler_ops_max:
            self.handler_ops_max = ops

    # -- invariants (enabled in tests) ---------------------------------------

    def _verify(self):
        queued = sum(len(p.queue) for p in self.planes)
        if queued != self.n_queued:
            raise InvariantViolation(
                f"queued counter {self.n_queued} != actual {queued}")
        if self.n_arrivals != (self.n_completed + self.n_dropped +
                               self.n_queued + self.n_inflight):
            raise InvariantViolation(
                f"conservation broken at t={self.now}: "
                f"{self.n_arrivals} arrivals vs {self.n_completed} completed "
                f"+ {self.n_dropped} dropped + {self.n_queued} queued "
                f"+ {self.n_inflight} in flight")
        bad = [s for s in self.rank.gpu_states() if s in ("both", "lost")]
        if bad:
            raise InvariantViolation(f"gpu state machine broken: {bad}")
        # between events no grant is outstanding (grants resolve inline)
        if any(s == "outstanding" for s in self.rank.gpu_states()):
            raise InvariantViolation("outstanding grant across event boundary")
        mc = self.rank.mc
        if len(mc) != len(self.rank.mc_by_latest) or len(mc) != len(self.rank.mc_by_bs):
            raise InvariantViolation("rank candidate indices out of sync")
        for p in self.planes:
            if p.cand is not None:
                c = p.cand
                if c.exec_at > c.latest:
                    raise InvariantViolation(
                        f"model {p.mid} candidate exec {c.exec_at} > latest {c.latest}")
                if c.exec_at + p.lat[c.size - 1] > c.head_deadline:
                    raise InvariantViolation(
                        f"model {p.mid} candidate misses head deadline")

    # -- results ---------------------------------------------------------------

    def _result(self, duration_s: float) -> RunResult:
        res = RunResult(
            model_names=[m.name for m in self.models],
            gpu_count=len(self.gpus),
            duration_ns=s_to_ns(duration_s),
            req_model=np.asarray(self._model_idx, dtype=np.int64),
            req_arrival=np.asarray(self._arrival, dtype=np.int64),
            req_deadline=np.asarray(self._deadline, dtype=np.int64),
            req_dispatch=np.asarray(self._dispatch, dtype=np.int64),
            req_start=np.asarray(self._start, dtype=np.int64),
            req_finish=np.asarray(self._finish, dtype=np.int64),
            req_batch=np.asarray(self._batch, dtype=np.int64),
            req_outcome=np.asarray(self._outcome, dtype=np.int64),
            gpu_logs=[[(o.start, o.finish, o.model_id, o.size)
                       for o in g.orders] for g in self.gpus],
            trace=self.trace,
            drops=self.n_dropped,
            completions=self.n_completed,
            late=int(np.count_nonzero(
                np.asarray(self._outcome, dtype=np.int64) == OUTCOME_LATE)),
        )
        return res
