"""Scheduling core behavior: candidate maintenance, matchmaking, policies.

The worked cluster here is 3 GPUs and one model with l(b) = b + 5 ms,
SLO 12 ms, arrivals every 0.75 ms; its exact dispatch trace is known by
hand and frozen below.
"""

import math

import pytest

from batchsym.profile import LatencyProfile, ModelSpec
from batchsym.scheduler import (BatchCandidate, ModelPlane, PolicyConfig,
                                ProtocolError, RankPlane, Request)
from batchsym.simulator import Engine
from batchsym.units import NEG_INF, ms_to_ns
from conftest import dispatches, drive, drops, make_engine, make_models

MS = ms_to_ns(1.0)
UNIT_ROWS = [(1.0, 5.0, 12.0)]


class FakeHost:
    """Minimal plane host for driving a ModelPlane directly."""

    def __init__(self):
        self.rank = self
        self.informed = []
        self.gpu_informs = []
        self.orders = []
        self.dropped = []
        self.drop_timers = []
        self.shrinks = []

    def inform_candidate(self, mid, cand, now):
        self.informed.append((mid, cand))

    def inform_gpu(self, gpu_id, free_at, now):
        self.gpu_informs.append((gpu_id, free_at))

    def push_drop_timer(self, tick, mid, gen):
        self.drop_timers.append((tick, mid, gen))

    def record_drop(self, req, now, reason):
        self.dropped.append((req.rid, now, reason))

    def record_shrink(self, mid, gpu_id, pre, new, now):
        self.shrinks.append((mid, gpu_id, pre, new))

    def emit_order(self, order, members):
        self.orders.append(order)

    def sample_dispatch_delay(self, b):
        return None


def unit_plane(kind="deferred", timeout_ms=0.0, host=None):
    spec = make_models(*UNIT_ROWS)[0]
    policy = PolicyConfig(kind, timeout_ns=ms_to_ns(timeout_ms))
    return ModelPlane(spec, policy, host or FakeHost()), host or None


def enqueue(plane, rid, arrival_ms):
    t = ms_to_ns(arrival_ms)
    plane.on_new_request(Request(rid, plane.mid, t, t + plane.slo), t)


# -- candidate maintenance (batch gathering + window arithmetic) -------------

def test_candidate_grows_with_arrivals():
    plane, _ = unit_plane()
    # R1..R3 at 0, 0.75, 1.5: candidate (3, exec 3, latest 4)
    for rid, t in ((1, 0.0), (2, 0.75), (3, 1.5)):
        enqueue(plane, rid, t)
    c = plane.cand
    assert (c.size, c.exec_at, c.latest) == (3, 3 * MS, 4 * MS)
    # R4 at 2.25: frontrun 2 clamped by now; candidate (4, 2.25, 3)
    enqueue(plane, 4, 2.25)
    c = plane.cand
    assert (c.size, c.exec_at, c.latest) == (4, ms_to_ns(2.25), 3 * MS)


def test_first_request_window():
    plane, _ = unit_plane()
    enqueue(plane, 1, 0.0)
    # singleton candidate waits at deadline - l(2)
    assert (plane.cand.size, plane.cand.exec_at) == (1, ms_to_ns(12.0 - 7.0))


def test_get_batch_empty_queue():
    plane, _ = unit_plane()
    assert not plane._update_candidate(0, NEG_INF)
    assert plane.cand is None


def test_head_dropped_when_infeasible_even_alone():
    host = FakeHost()
    plane, _ = unit_plane(host=host)
    # deadline 10 ms, l(1) = 6 ms, evaluated at now = 5 ms: 5 + 6 > 10
    plane.on_new_request(Request(1, 0, ms_to_ns(4.0), ms_to_ns(10.0)),
                         ms_to_ns(4.0))
    plane._update_candidate(ms_to_ns(5.0), NEG_INF)
    assert host.dropped == [(1, ms_to_ns(5.0), "deadline")]
    assert plane.cand is None


def test_size_unchanged_when_newcomer_violates_head_deadline():
    plane, _ = unit_plane()
    for rid, t in ((1, 0.0), (2, 0.75), (3, 1.5), (4, 2.25)):
        enqueue(plane, rid, t)
    assert (plane.cand.size, plane.cand.latest) == (4, 3 * MS)
    # arrival inside the window (2.25, 3): joining would break the head
    # deadline, so the batch stays at 4; exec re-clamps to now
    enqueue(plane, 5, 2.5)
    assert (plane.cand.size, plane.cand.exec_at, plane.cand.latest) == \
        (4, ms_to_ns(2.5), 3 * MS)


def test_timeout_policy_floor_and_eager_equivalence():
    # timeout(k): start no earlier than head arrival + k
    plane, _ = unit_plane(kind="timeout", timeout_ms=3.0)
    enqueue(plane, 1, 1.0)
    assert plane.cand.exec_at == ms_to_ns(4.0)
    # k = 0 behaves like eager: dispatchable immediately
    for kind, timeout in (("timeout", 0.0), ("eager", 0.0)):
        p, _ = unit_plane(kind=kind, timeout_ms=timeout)
        enqueue(p, 1, 0.1)
        assert p.cand.exec_at == ms_to_ns(0.1)


def test_timeout_unreachable_head_dropped_as_policy():
    host = FakeHost()
    plane, _ = unit_plane(kind="timeout", timeout_ms=7.0, host=host)
    enqueue(plane, 1, 0.0)  # k + l(1) = 13 > SLO 12: never dispatchable
    assert plane.cand is None
    assert host.dropped[0][2] == "policy"


def test_granted_gpu_dispatch_and_next_candidate():
    host = FakeHost()
    plane, _ = unit_plane(host=host)
    for rid, t in ((1, 0.0), (2, 0.75), (3, 1.5), (4, 2.25)):
        enqueue(plane, rid, t)
    plane.granted_gpu(0, 0, ms_to_ns(2.25))
    order = host.orders[0]
    assert (order.start, order.finish, order.size) == \
        (ms_to_ns(2.25), ms_to_ns(11.25), 4)
    assert order.request_ids == (1, 2, 3, 4)
    assert host.gpu_informs[-1] == (0, ms_to_ns(11.25))
    assert plane.cand is None and len(plane.queue) == 0


def test_granted_gpu_with_empty_queue_returns_gpu():
    host = FakeHost()
    plane, _ = unit_plane(host=host)
    plane.granted_gpu(2, ms_to_ns(1.0), ms_to_ns(5.0))
    assert host.gpu_informs == [(2, ms_to_ns(5.0))]
    assert host.orders == []


def test_granted_gpu_busy_floor_pushes_start_and_revalidates():
    host = FakeHost()
    plane, _ = unit_plane(host=host)
    for rid, t in ((1, 0.0), (2, 0.75), (3, 1.5), (4, 2.25)):
        enqueue(plane, rid, t)
    # GPU frees at 3.0 = latest: still feasible at size 4, start pushed
    plane.granted_gpu(1, ms_to_ns(3.0), ms_to_ns(2.25))
    order = host.orders[0]
    assert (order.start, order.size) == (ms_to_ns(3.0), 4)
    assert order.finish <= ms_to_ns(12.0)


def test_granted_gpu_floor_shrinks_batch():
    host = FakeHost()
    plane, _ = unit_plane(host=host)
    for rid, t in ((1, 0.0), (2, 0.75), (3, 1.5), (4, 2.25)):
        enqueue(plane, rid, t)
    # GPU frees at 4.0 > latest(4) = 3.0: size 4 infeasible, 3 fits
    # (4 + l(3) = 12 <= 12)
    plane.granted_gpu(1, ms_to_ns(4.0), ms_to_ns(2.25))
    order = host.orders[0]
    assert (order.start, order.size) == (ms_to_ns(4.0), 3)
    assert host.shrinks == [(0, 1, 4, 3)]
    assert len(plane.queue) == 1  # R4 stays queued for the next batch


# -- rank plane matchmaking ---------------------------------------------------

def test_model_timer_prefers_smallest_gpu_id():
    eng = make_engine(UNIT_ROWS, gpus=3, record_trace=True)
    res = drive(eng, [(0.0, 0), (0.75, 0), (1.5, 0), (2.25, 0)])
    d = dispatches(res)
    assert len(d) == 1 and d[0][3] == 0  # all idle at t=0: grant GPU 0


def test_gpu_timer_grants_most_urgent_candidate():
    # One GPU, busy 5..11 with m0's singleton. m1 and m2 register size-3
    # candidates whose windows span t=11: m1 [10.2, 11.2], m2 [10.5, 11.5].
    # On free, the closest `latest` (m1) wins; m2 expires and is dropped.
    rows = [(1.0, 5.0, 12.0), (1.0, 5.0, 13.0), (1.0, 5.0, 14.0)]
    eng = make_engine(rows, gpus=1, record_trace=True)
    res = drive(eng, [(0.0, 0),
                      (5.5, 2), (5.7, 2), (5.9, 2),
                      (6.2, 1), (6.4, 1), (6.6, 1)])
    d = dispatches(res)
    assert [(t[2], t[4]) for t in d] == [(0, 1), (1, 3)]
    assert d[1][5] == ms_to_ns(11.0)  # starts the moment the GPU frees
    assert sorted(t[7][0] for t in drops(res)) == [2, 3, 4]  # m2's requests


def test_candidate_expired_before_gpu_free_is_evicted_and_dropped():
    rows = [(1.0, 5.0, 30.0), (1.0, 5.0, 12.0)]
    eng = make_engine(rows, gpus=1, record_trace=True)
    # m0 hoards the GPU for l(8) = 13 ms from t ~ 17; m1's request at 18
    # has latest 24 < free_at ~ 30: candidate evicted, request dropped.
    arrivals = [(t * 0.1, 0) for t in range(170)] + [(18.0, 1)]
    arrivals.sort()
    res = drive(eng, arrivals)
    assert eng.rank.evictions >= 1
    assert any(t[2] == 1 for t in drops(res))
    assert not any(t[2] == 1 for t in dispatches(res))


def test_inform_candidate_none_unregisters():
    policy = PolicyConfig("deferred")
    eng = make_engine(UNIT_ROWS, gpus=1)
    rank = eng.rank
    cand = BatchCandidate(2, 5 * MS, 6 * MS, 12 * MS, 1)
    rank.inform_candidate(0, cand, 0)
    rank.on_model_timer(0, rank.model_gen[0], 2, 5 * MS, 6 * MS, 5 * MS)
    # no free GPU early enough is impossible here (gpu free at 0), so force
    # a registration by marking the GPU busy first
    rank.inform_gpu(0, 100 * MS, 0)
    rank.inform_candidate(0, cand, 0)
    rank.on_model_timer(0, rank.model_gen[0], 2, 5 * MS, 6 * MS, 5 * MS)
    assert 0 in rank.mc
    rank.inform_candidate(0, None, 6 * MS)
    assert 0 not in rank.mc
    assert len(rank.mc_by_latest) == len(rank.mc_by_bs) == 0


def test_inform_unknown_ids_raise():
    eng = make_engine(UNIT_ROWS, gpus=1)
    with pytest.raises(ProtocolError):
        eng.rank.inform_gpu(5, 0, 0)
    with pytest.raises(ProtocolError):
        eng.rank.inform_candidate(3, None, 0)


def test_duplicate_request_id_rejected():
    eng = make_engine(UNIT_ROWS, gpus=1, check_invariants=True)
    eng._record_arrival(Request(1, 0, 0, 12 * MS))
    with pytest.raises(ProtocolError):
        eng._record_arrival(Request(1, 0, 0, 12 * MS))


def test_unknown_model_request_rejected():
    eng = make_engine(UNIT_ROWS, gpus=1)
    with pytest.raises(ProtocolError):
        drive(eng, [(0.0, 3)])


def test_stale_model_timer_ignored():
    eng = make_engine(UNIT_ROWS, gpus=1)
    rank = eng.rank
    gen = rank.model_gen[0]
    rank.on_model_timer(0, gen - 1, 1, 0, MS, 0)  # superseded: no effect
    assert rank.free_at[0] == 0 and 0 not in rank.mc


def test_boundary_inclusive_free_at_equals_exec():
    # GPU frees exactly at the candidate's exec moment: matched
    eng = make_engine(UNIT_ROWS, gpus=1, record_trace=True)
    res = drive(eng, [(0.0, 0), (0.75, 0), (1.5, 0), (2.25, 0),
                      (3.0, 0), (3.75, 0), (4.5, 0), (5.25, 0),
                      (6.0, 0), (6.75, 0), (7.5, 0), (8.25, 0)])
    d = dispatches(res)
    # single GPU serial batches; second batch starts exactly at first finish
    assert d[1][5] == d[0][6]


# -- handler complexity --------------------------------------------------------

def test_handlers_touch_ordered_structures_a_bounded_number_of_times():
    maxima = []
    for n_models, n_gpus in ((4, 4), (16, 32), (64, 128)):
        rows = [(1.0, 5.0, 25.0)] * n_models
        eng = make_engine(rows, gpus=n_gpus, record_trace=False)
        per_gpu_rps = 1000.0 / (n_models * n_gpus)
        arrivals = []
        t = 0.0
        for k in range(min(3000, 120 * n_models)):
            arrivals.append((t, k % n_models))
            t += 0.11
        drive(eng, arrivals)
        maxima.append(eng.handler_ops_max)
    # a handler performs O(1) ordered-structure operations (evictions are
    # amortized and excluded), independent of model/GPU counts
    assert max(maxima) <= 12
    assert maxima[-1] <= maxima[0] + 4


def test_eviction_count_amortized_by_registrations():
    rows = [(1.0, 5.0, 12.0)] * 4
    eng = make_engine(rows, gpus=1, record_trace=False)
    arrivals = [(t * 0.2, t % 4) for t in range(400)]
    drive(eng, arrivals)
    assert eng.rank.evictions <= eng.rank.registrations
