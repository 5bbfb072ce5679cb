"""Deadline-driven batch scheduling core.

Two cooperating planes form the scheduler:

* one ``ModelPlane`` per model owns that model's FIFO request queue and
  maintains at most one pending batch candidate (size, desired start
  ``exec_at``, expiry ``latest``);
* a single ``RankPlane`` owns the global state: the GPU availability index
  and the set of candidates waiting for a GPU, matched on timer events.

Planes communicate only through ``inform_candidate`` / ``inform_gpu``
messages and grant callbacks, never by sharing mutable state, so the same
core runs unmodified under the virtual-clock simulator (all planes
multiplexed on one thread, bit-reproducible) and under the wall-clock
benchmark shards.

The matchmaking rules:

* A model timer fires when a candidate's dispatch lead time arrives. It
  grabs the earliest-free GPU if that GPU is free by ``exec_at`` (ties by
  smallest gpu id); otherwise the candidate is registered as schedulable.
* A GPU timer fires just before the earliest GPU frees up. Among registered
  candidates still valid at that moment it grants the one whose ``latest``
  is closest (most urgent); expired candidates are evicted.

Boundary comparisons are inclusive (a GPU free exactly at ``exec_at`` or
exactly at ``latest`` still matches): with integer ticks, strict
comparisons would miss zero-width opportunities.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from sortedcontainers import SortedList

from .profile import ModelSpec
from .units import NEG_INF

OUTSTANDING = -1  # free_at marker while a grant is in flight

GATHER_PREFIX = "prefix"
GATHER_DROP_HEAD = "drop_head"

DROP_DEADLINE = "deadline"   # head cannot finish in time even alone, now
DROP_POLICY = "policy"       # timeout floor leaves no feasible start


class ProtocolError(RuntimeError):
    """Violation of the plane messaging contract (unknown ids, dup ids)."""


@dataclass(frozen=True)
class PolicyConfig:
    """Dispatch policy plus the planning bounds for message delays.

    ``timeout_ns`` is the offset k from the earliest member arrival before
    which a timeout-policy batch will not start; k=0 is exactly eager.
    ``timeout_slo_frac`` resolves k per model as a fraction of its SLO.
    """
    kind: str  # "deferred" | "eager" | "timeout"
    timeout_ns: int = 0
    timeout_slo_frac: float | None = None
    d_ctrl_ns: int = 0
    d_data_ns: int = 0
    gather: str = GATHER_PREFIX
    target_batch: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("deferred", "eager", "timeout"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.timeout_ns < 0:
            raise ValueError("timeout must be >= 0")
        if self.timeout_slo_frac is not None and self.timeout_slo_frac < 0:
            raise ValueError("timeout_slo_frac must be >= 0")
        if self.d_ctrl_ns < 0 or self.d_data_ns < 0:
            raise ValueError("negative network delay bound")
        if self.gather not in (GATHER_PREFIX, GATHER_DROP_HEAD):
            raise ValueError(f"unknown gather policy {self.gather!r}")
        if self.gather == GATHER_DROP_HEAD and self.target_batch < 1:
            raise ValueError("drop_head gathering needs target_batch >= 1")

    def resolve_timeout_ns(self, slo_ns: int) -> int:
        if self.timeout_slo_frac is not None:
            return int(round(self.timeout_slo_frac * slo_ns))
        return self.timeout_ns


class Request:
    __slots__ = ("rid", "model_id", "arrival", "deadline")

    def __init__(self, rid: int, model_id: int, arrival: int, deadline: int):
        self.rid = rid
        self.model_id = model_id
        self.arrival = arrival
        self.deadline = deadline

    def __repr__(self) -> str:
        return f"Request({self.rid}, m{self.model_id}, a={self.arrival})"


class BatchCandidate:
    """A model's single pending batch. Members are always the current queue
    prefix (FIFO + one SLO per model), so only the head is recorded."""
    __slots__ = ("size", "exec_at", "latest", "head_deadline", "head_rid")

    def __init__(self, size, exec_at, latest, head_deadline, head_rid):
        self.size = size
        self.exec_at = exec_at
        self.latest = latest
        self.head_deadline = head_deadline
        self.head_rid = head_rid

    def key(self):
        return (self.size, self.exec_at, self.latest, self.head_rid)

    def __repr__(self) -> str:
        return (f"Candidate(b={self.size}, exec={self.exec_at}, "
                f"latest={self.latest})")


class ExecutionOrder:
    __slots__ = ("gpu_id", "model_id", "size", "start", "finish",
                 "request_ids", "emitted_at")

    def __init__(self, gpu_id, model_id, size, start, finish, request_ids,
                 emitted_at):
        self.gpu_id = gpu_id
        self.model_id = model_id
        self.size = size
        self.start = start
        self.finish = finish
        self.request_ids = request_ids
        self.emitted_at = emitted_at


class ModelPlane:
    """Owns one model's queue and candidate. Driven by its host (the event
    engine), which delivers arrivals, timer expiries, and GPU grants."""

    __slots__ = ("mid", "name", "lat", "max_batch", "slo", "kind",
                 "timeout_ns", "d_ctrl", "d_data", "gather", "target_batch",
                 "queue", "cand", "drop_gen", "armed_drop_rid", "drops",
                 "host")

    def __init__(self, spec: ModelSpec, policy: PolicyConfig, host):
        self.mid = spec.model_id
        self.name = spec.name
        self.lat = spec.profile.lat_ns
        self.max_batch = spec.profile.max_batch
        self.slo = spec.slo_ns
        self.kind = policy.kind
        self.timeout_ns = policy.resolve_timeout_ns(spec.slo_ns)
        self.d_ctrl = policy.d_ctrl_ns
        self.d_data = policy.d_data_ns
        self.gather = policy.gather
        self.target_batch = min(policy.target_batch, self.max_batch)
        self.queue: deque[Request] = deque()
        self.cand: BatchCandidate | None = None
        self.drop_gen = 0
        self.armed_drop_rid = -1
        self.drops = 0
        self.host = host

    # -- entry points -----------------------------------------------------

    def on_new_request(self, req: Request, now: int) -> None:
        self.queue.append(req)
        if self._update_candidate(now, NEG_INF):
            self.host.rank.inform_candidate(self.mid, self.cand, now)

    def on_drop_timer(self, gen: int, now: int) -> None:
        if gen != self.drop_gen:
            return
        self.armed_drop_rid = -1
        if self._update_candidate(now, NEG_INF):
            self.host.rank.inform_candidate(self.mid, self.cand, now)

    def granted_gpu(self, gpu_id: int, gpu_free_at: int, now: int) -> None:
        """A GPU was reserved for this model. Revalidate the candidate with
        the GPU's availability as a floor, then either dispatch or hand the
        GPU back unused."""
        pre_size = self.cand.size if self.cand is not None else 0
        self._update_candidate(now, max(gpu_free_at, 0))
        c = self.cand
        if c is None:
            self.host.rank.inform_gpu(gpu_id, max(now, gpu_free_at), now)
            self._update_candidate(now, NEG_INF)
            self.host.rank.inform_candidate(self.mid, self.cand, now)
            return
        if c.size < pre_size:
            self.host.record_shrink(self.mid, gpu_id, pre_size, c.size, now)
        b = c.size
        popleft = self.queue.popleft
        members = [popleft() for _ in range(b)]
        start = c.exec_at
        actual = self.host.sample_dispatch_delay(b)
        if actual is not None and now + actual > start:
            start = now + actual  # late metadata/input arrival at the GPU
        order = ExecutionOrder(gpu_id, self.mid, b, start,
                               start + self.lat[b - 1],
                               tuple(r.rid for r in members), now)
        self.host.emit_order(order, members)
        believed_free = c.exec_at + self.lat[b - 1]
        self.cand = None
        self._update_candidate(now, NEG_INF)
        self.host.rank.inform_gpu(gpu_id, believed_free, now)
        self.host.rank.inform_candidate(self.mid, self.cand, now)

    # -- candidate maintenance --------------------------------------------

    def _drop_head(self, now: int, reason: str) -> None:
        head = self.queue.popleft()
        self.drops += 1
        self.host.record_drop(head, now, reason)

    def _update_candidate(self, now: int, gpu_floor: int) -> bool:
        """Recompute the candidate from the queue. Returns True when the
        candidate changed (callers then re-inform the rank plane)."""
        q = self.queue
        lat = self.lat
        base1 = self.d_ctrl + self.d_data + lat[0]
        while q and now + base1 > q[0].deadline:
            self._drop_head(now, DROP_DEADLINE)
        if self.kind == "timeout":
            # the timeout floor is arrival + k; with deadline = arrival +
            # SLO this is feasible for nobody or everybody of this model
            while q and q[0].arrival + self.timeout_ns + lat[0] > q[0].deadline:
                self._drop_head(now, DROP_POLICY)
        if self.gather == GATHER_DROP_HEAD and len(q) > self.target_batch:
            # early dropping: sacrifice heads so a target-size batch can
            # still start now and meet the surviving head's deadline
            tb = self.target_batch
            need = now + self.d_ctrl + self.d_data * tb + lat[tb - 1]
            while len(q) > tb and need > q[0].deadline:
                self._drop_head(now, DROP_DEADLINE)
        if not q:
            self._arm_drop_timer(now)
            if self.cand is not None:
                self.cand = None
                return True
            return False
        head = q[0]
        d = head.deadline
        cap = min(len(q), self.max_batch)
        if self.gather == GATHER_DROP_HEAD:
            cap = min(cap, self.target_batch)
        pol_floor = (head.arrival + self.timeout_ns
                     if self.kind == "timeout" else NEG_INF)
        floor2 = max(pol_floor, gpu_floor)
        b = self._max_feasible(now, floor2, cap, d)
        if b == 0:
            # only the GPU floor can forbid b=1 here (time- and
            # policy-infeasible heads were dropped above): report no batch
            # so the caller returns the GPU; the queue stays intact
            self._arm_drop_timer(now)
            if self.cand is not None:
                self.cand = None
                return True
            return False
        l_next = lat[b] if b < self.max_batch else lat[-1]
        exec_at = now + self.d_ctrl + self.d_data * b
        if self.kind == "deferred":
            fr = d - l_next
            if fr > exec_at:
                exec_at = fr
        if floor2 > exec_at:
            exec_at = floor2
        new = BatchCandidate(b, exec_at, d - lat[b - 1], d, head.rid)
        self._arm_drop_timer(now)
        if self.cand is not None and self.cand.key() == new.key():
            return False
        self.cand = new
        return True

    def _max_feasible(self, now: int, floor: int, cap: int, d: int) -> int:
        """Largest prefix size b in [1, cap] whose start (after delays and
        floors) still finishes by the head deadline; 0 if none."""
        lat = self.lat
        d_ctrl = self.d_ctrl
        d_data = self.d_data

        def ok(b: int) -> bool:
            start = now + d_ctrl + d_data * b
            if floor > start:
                start = floor
            return start + lat[b - 1] <= d

        if not ok(1):
            return 0
        lo, hi = 1, cap
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if ok(mid):
                lo = mid
            else:
                hi = mid - 1
        return lo

    def _arm_drop_timer(self, now: int) -> None:
        """Keep a timer at the first tick where the head can no longer be
        served even as a singleton batch; firing it forces the drop."""
        if not self.queue:
            if self.armed_drop_rid != -1:
                self.armed_drop_rid = -1
                self.drop_gen += 1
            return
        head = self.queue[0]
        if head.rid == self.armed_drop_rid:
            return
        self.armed_drop_rid = head.rid
        self.drop_gen += 1
        fire = head.deadline - (self.d_ctrl + self.d_data + self.lat[0]) + 1
        self.host.push_drop_timer(max(fire, now), self.mid, self.drop_gen)


class RankPlane:
    """Global matchmaking state: GPU availability index, registered
    candidates, and the timers that drive model-GPU pairing.

    Every handler touches the ordered indices a bounded number of times
    (plus amortized evictions), keeping per-event cost logarithmic in the
    model and GPU counts. ``ops`` counts ordered-index operations so tests
    can assert that bound.
    """

    __slots__ = ("host", "d_ctrl", "d_data", "free_at", "free_idx", "mc",
                 "mc_by_latest", "mc_by_bs", "model_gen", "gpu_gen",
                 "armed_gpu", "ops", "evictions", "registrations")

    def __init__(self, gpu_count: int, model_count: int,
                 policy: PolicyConfig, host):
        self.host = host
        self.d_ctrl = policy.d_ctrl_ns
        self.d_data = policy.d_data_ns
        self.free_at = [0] * gpu_count
        self.free_idx = SortedList((0, g) for g in range(gpu_count))
        self.mc: dict[int, tuple[int, int, int]] = {}
        self.mc_by_latest = SortedList()
        self.mc_by_bs = SortedList()
        self.model_gen = [0] * model_count
        self.gpu_gen = 0
        self.armed_gpu: tuple[int, int] | None = None
        self.ops = 0
        self.evictions = 0
        self.registrations = 0

    def _delay(self, b: int) -> int:
        return self.d_ctrl + self.d_data * b

    # -- messages from model planes ----------------------------------------

    def inform_candidate(self, mid: int, cand: BatchCandidate | None,
                         now: int) -> None:
        if mid >= len(self.model_gen) or mid < 0:
            raise ProtocolError(f"inform_candidate for unknown model {mid}")
        self.model_gen[mid] += 1
        self._unregister(mid)
        if cand is not None:
            fire = cand.exec_at - self._delay(cand.size)
            if fire < now:
                fire = now
            self.host.push_model_timer(fire, mid, self.model_gen[mid],
                                       cand.size, cand.exec_at, cand.latest)

    def inform_gpu(self, gpu_id: int, free_at: int, now: int) -> None:
        if gpu_id >= len(self.free_at) or gpu_id < 0:
            raise ProtocolError(f"inform_gpu for unknown gpu {gpu_id}")
        old = self.free_at[gpu_id]
        if old != OUTSTANDING:
            self.free_idx.remove((old, gpu_id))
            self.ops += 1
        self.free_at[gpu_id] = free_at
        self.free_idx.add((free_at, gpu_id))
        self.ops += 1
        self._set_gpu_timer(now)

    # -- timer expiries -----------------------------------------------------

    def on_model_timer(self, mid: int, gen: int, size: int, exec_at: int,
                       latest: int, now: int) -> None:
        if gen != self.model_gen[mid]:
            return  # superseded candidate; stale timer
        if self.free_idx:
            fa, gid = self.free_idx[0]
            self.ops += 1
            if fa <= exec_at:
                self.free_idx.pop(0)
                self.ops += 1
                self.free_at[gid] = OUTSTANDING
                self.host.deliver_grant(mid, gid, fa, now)
                return
        self.mc[mid] = (size, exec_at, latest)
        self.mc_by_latest.add((latest, mid))
        self.mc_by_bs.add((size, mid))
        self.ops += 2
        self.registrations += 1
        self._set_gpu_timer(now)

    def on_gpu_timer(self, gpu_id: int, gen: int, now: int) -> None:
        if gen != self.gpu_gen:
            return
        self.armed_gpu = None
        fa = self.free_at[gpu_id]
        if fa == OUTSTANDING:
            self._set_gpu_timer(now)
            return
        while self.mc_by_latest and self.mc_by_latest[0][0] < fa:
            _, m = self.mc_by_latest.pop(0)
            size, _, _ = self.mc.pop(m)
            self.mc_by_bs.remove((size, m))
            self.ops += 2
            self.evictions += 1
        if self.mc_by_latest:
            _, m = self.mc_by_latest[0]
            self.ops += 1
            size, exec_at, _ = self.mc[m]
            # registered candidates became schedulable before they were
            # registered, so exec_at <= fa always holds here
            self._unregister(m)
            self.free_idx.remove((fa, gpu_id))
            self.ops += 1
            self.free_at[gpu_id] = OUTSTANDING
            self.host.deliver_grant(m, gpu_id, fa, now)
        self._set_gpu_timer(now)

    # -- internals ----------------------------------------------------------

    def _unregister(self, mid: int) -> None:
        entry = self.mc.pop(mid, None)
        if entry is not None:
            size, _, latest = entry
            self.mc_by_latest.remove((latest, mid))
            self.mc_by_bs.remove((size, mid))
            self.ops += 2

    def _set_gpu_timer(self, now: int) -> None:
        """(Re-)arm the single GPU timer for the earliest-free GPU, leading
        its free moment by the dispatch delay of the largest registered
        candidate (the one needing the longest lead)."""
        if not self.mc or not self.free_idx:
            if self.armed_gpu is not None:
                self.armed_gpu = None
                self.gpu_gen += 1
            return
        fa, gid = self.free_idx[0]
        size, _ = self.mc_by_bs[-1]
        self.ops += 2
        fire = fa - self._delay(size)
        if fire < now:
            fire = now
        if self.armed_gpu == (fire, gid):
            return
        self.armed_gpu = (fire, gid)
        self.gpu_gen += 1
        self.host.push_gpu_timer(fire, gid, self.gpu_gen)

    # -- introspection for invariant checks ---------------------------------

    def gpu_states(self) -> list[str]:
        states = []
        in_idx = {gid for _, gid in self.free_idx}
        for gid, fa in enumerate(self.free_at):
            if fa == OUTSTANDING:
                states.append("outstanding" if gid not in in_idx else "both")
            else:
                states.append("indexed" if gid in in_idx else "lost")
        return states
