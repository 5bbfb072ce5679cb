"""Statistics, analytical throughput oracles, goodput search, flat-top
verification, and autoscaling advice.

Goodput is the highest aggregate request rate at which every model's p99
latency (with drops counted as infinite) still meets its SLO. It is found
by bisection on the offered rate; every probe is a full simulation run with
the same base seed, so the search is reproducible bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .profile import LatencyProfile
from .scenario import Scenario, run_scenario
from .simulator import (OUTCOME_COMPLETED, OUTCOME_DROPPED, OUTCOME_LATE,
                        RunResult)
from .units import NS_PER_S, s_to_ns


@dataclass(frozen=True)
class ModelStats:
    name: str
    arrivals: int
    completed: int
    late: int
    dropped: int
    p99_latency_ns: float  # inf when >1% of arrivals dropped
    batch_hist: dict[int, int]
    max_queueing_delay_ns: int
    median_batch: float


@dataclass(frozen=True)
class RunStats:
    window_ns: tuple[int, int]
    arrivals: int
    completed: int
    late: int
    dropped: int
    goodput_rps: float
    bad_rate: float
    gpu_idle_fraction: tuple[float, ...]
    mean_idle_fraction: float
    models: tuple[ModelStats, ...]

    def meets_slos(self, slo_ns: dict[str, int]) -> bool:
        return all(m.p99_latency_ns <= slo_ns[m.name] for m in self.models)


def p99_nearest_rank(samples: np.ndarray) -> float:
    """Nearest-rank p99 over the merged latency sample (drops arrive here
    already encoded as +inf)."""
    n = len(samples)
    if n == 0:
        return 0.0
    rank = max(1, math.ceil(0.99 * n))
    return float(np.partition(samples, rank - 1)[rank - 1])


def queueing_delay(result: RunResult) -> np.ndarray:
    """Dispatch start minus arrival, per completed request."""
    done = result.req_outcome != OUTCOME_DROPPED
    done &= result.req_start >= 0
    return result.req_start[done] - result.req_arrival[done]


def compute_stats(result: RunResult, warmup_s: float, cooldown_s: float,
                  duration_s: float | None = None) -> RunStats:
    dur = result.duration_ns if duration_s is None else s_to_ns(duration_s)
    lo = s_to_ns(warmup_s)
    hi = dur - s_to_ns(cooldown_s)
    if hi <= lo:
        raise ValueError("empty measurement window")
    window_len = hi - lo
    in_win = (result.req_arrival >= lo) & (result.req_arrival < hi)
    arrivals = int(np.count_nonzero(in_win))
    outcome = result.req_outcome[in_win]
    completed = int(np.count_nonzero(outcome == OUTCOME_COMPLETED))
    late = int(np.count_nonzero(outcome == OUTCOME_LATE))
    dropped = int(np.count_nonzero(outcome == OUTCOME_DROPPED))
    goodput = completed / (window_len / NS_PER_S)
    bad_rate = (dropped + late) / arrivals if arrivals else 0.0

    idle = []
    for log in result.gpu_logs:
        busy = 0
        for start, finish, _, _ in log:
            busy += max(0, min(finish, hi) - max(start, lo))
        idle.append(1.0 - busy / window_len)
    mean_idle = sum(idle) / len(idle) if idle else 1.0

    # one pass over the GPU logs: per-model dispatched batch sizes
    sizes_by_model: list[list[int]] = [[] for _ in result.model_names]
    for log in result.gpu_logs:
        for start, _, mid, size in log:
            if lo <= start < hi:
                sizes_by_model[mid].append(size)

    models = []
    latency = result.req_finish - result.req_arrival
    for midx, name in enumerate(result.model_names):
        sel = in_win & (result.req_model == midx)
        m_arr = int(np.count_nonzero(sel))
        m_out = result.req_outcome[sel]
        m_completed = int(np.count_nonzero(m_out == OUTCOME_COMPLETED))
        m_late = int(np.count_nonzero(m_out == OUTCOME_LATE))
        m_dropped = int(np.count_nonzero(m_out == OUTCOME_DROPPED))
        served = sel & (result.req_outcome != OUTCOME_DROPPED)
        lats = latency[served].astype(np.float64)
        merged = np.concatenate([lats, np.full(m_dropped, np.inf)])
        p99 = p99_nearest_rank(merged) if m_arr else 0.0
        qd = result.req_start[served] - result.req_arrival[served]
        max_qd = int(qd.max()) if len(qd) else 0
        sizes = sizes_by_model[midx]
        hist: dict[int, int] = {}
        for size in sizes:
            hist[size] = hist.get(size, 0) + 1
        models.append(ModelStats(
            name=name, arrivals=m_arr, completed=m_completed, late=m_late,
            dropped=m_dropped, p99_latency_ns=p99,
            batch_hist=dict(sorted(hist.items())),
            max_queueing_delay_ns=max_qd,
            median_batch=float(np.median(sizes)) if sizes else 0.0))
    return RunStats(window_ns=(lo, hi), arrivals=arrivals,
                    completed=completed, late=late, dropped=dropped,
                    goodput_rps=goodput, bad_rate=bad_rate,
                    gpu_idle_fraction=tuple(idle),
                    mean_idle_fraction=mean_idle, models=tuple(models))


def stats_for(scenario: Scenario, result: RunResult) -> RunStats:
    return compute_stats(result, scenario.warmup_s, scenario.cooldown_s,
                         scenario.duration_s)


# -- analytical staggered-execution oracle ----------------------------------

MODE_STAGGERED = "staggered"
MODE_NO_COORDINATION = "no_coordination"


@dataclass(frozen=True)
class StaggeredSolution:
    mode: str
    batch_size: int
    throughput_rps: float
    feasible: bool


def analytical_solution(profile: LatencyProfile, slo_ns: int, gpus: int,
                        mode: str) -> StaggeredSolution:
    """Closed-form batch size and throughput for uniform arrivals.

    With N GPUs running equal batches offset by l(b)/N, the worst queueing
    delay is l(b)/N, so feasibility is (1 + 1/N) * l(b) <= SLO. Without
    cross-GPU coordination the worst queueing delay is l(b), giving
    2 * l(b) <= SLO. Throughput is N * b / l(b).
    """
    if profile.kind != "linear":
        raise ValueError("analytical solution requires a linear profile")
    a, b0 = profile.alpha_ns, profile.beta_ns
    if mode == MODE_STAGGERED:
        # (N+1) * (a*b + b0) <= N * slo, exact in integer ticks
        num = gpus * slo_ns - (gpus + 1) * b0
        den = (gpus + 1) * a
    elif mode == MODE_NO_COORDINATION:
        num = slo_ns - 2 * b0
        den = 2 * a
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if den == 0:  # alpha == 0: latency independent of b
        bs = profile.max_batch if num >= 0 else 0
    else:
        bs = min(num // den, profile.max_batch) if num >= 0 else 0
    if bs < 1:
        return StaggeredSolution(mode, 0, 0.0, False)
    tpt = gpus * bs * NS_PER_S / profile.latency(bs)
    return StaggeredSolution(mode, int(bs), tpt, True)


def batching_ceiling_rps(profile: LatencyProfile, gpus: int) -> float:
    """Absolute per-model throughput ceiling: N * max_b b / l(b)."""
    best = max(b / profile.lat_ns[b - 1] for b in range(1, profile.max_batch + 1))
    return gpus * best * NS_PER_S


# -- goodput search -----------------------------------------------------------

@dataclass
class GoodputResult:
    rate_rps: float
    probes: list[tuple[float, bool]] = field(default_factory=list)
    stats_at_rate: RunStats | None = None

    @property
    def feasible_any(self) -> bool:
        return self.rate_rps > 0


def _default_bracket(scenario: Scenario) -> float:
    """Twice a hard upper bound on achievable goodput, so the infeasible
    side of the bisection bracket is guaranteed.

    Single model: twice the staggered analytical throughput. Mixtures: the
    cluster is work-conserving, so the expected GPU time per request,
    sum_m w_m * min_b l_m(b)/b with w the popularity weights, bounds the
    aggregate rate by N / that expectation (per-model ceilings would each
    assume the whole cluster and overshoot by a factor of the model count).
    """
    from .workload import popularity_weights

    if len(scenario.models) == 1 and scenario.models[0].profile.kind == "linear":
        spec = scenario.models[0]
        sol = analytical_solution(spec.profile, spec.slo_ns,
                                  scenario.gpu_count, MODE_STAGGERED)
        if sol.feasible:
            return 2.0 * sol.throughput_rps
    weights = popularity_weights(scenario.workload, len(scenario.models))
    per_req_s = 0.0
    for w, spec in zip(weights, scenario.models):
        occ = min(spec.profile.lat_ns[b - 1] / b
                  for b in range(1, spec.profile.max_batch + 1))
        per_req_s += float(w) * occ / NS_PER_S
    return 2.0 * scenario.gpu_count / per_req_s


def probe_feasible(scenario: Scenario, rate_rps: float) -> tuple[bool, RunStats]:
    probe = scenario.with_rate(rate_rps)
    stats = stats_for(probe, run_scenario(probe))
    slos = {m.name: m.slo_ns for m in scenario.models}
    return stats.meets_slos(slos), stats


def goodput_search(scenario: Scenario, rel_tol: float = 0.005,
                   max_iters: int = 24, hi: float | None = None,
                   keep_stats: bool = False) -> GoodputResult:
    """Bisect the offered rate for the largest p99-feasible value."""
    if hi is None:
        hi = _default_bracket(scenario)
    lo = 0.0
    res = GoodputResult(0.0)
    ok_hi, stats = probe_feasible(scenario, hi)
    res.probes.append((hi, ok_hi))
    if ok_hi:
        res.rate_rps = hi  # bracket did not contain the knee
        res.stats_at_rate = stats if keep_stats else None
        return res
    best_stats = None
    for _ in range(max_iters):
        mid = (lo + hi) / 2.0
        ok, stats = probe_feasible(scenario, mid)
        res.probes.append((mid, ok))
        if ok:
            lo = mid
            best_stats = stats
        else:
            hi = mid
        if hi - lo <= rel_tol * max(hi, 1e-9):
            break
    res.rate_rps = lo
    res.stats_at_rate = best_stats if keep_stats else None
    return res


# -- flat-top verification ----------------------------------------------------

@dataclass(frozen=True)
class FlatTopRow:
    offered_rps: float
    offered_over_peak: float
    goodput_rps: float
    bad_rate: float
    expected_bad_rate: float
    mean_idle_fraction: float
    expected_idle_fraction: float
    median_batch: float

    def within(self, eps: float) -> bool:
        if self.offered_over_peak > 1.0:
            return abs(self.bad_rate - self.expected_bad_rate) <= eps
        return abs(self.mean_idle_fraction - self.expected_idle_fraction) <= eps


def flat_top_check(scenario: Scenario, peak_rps: float,
                   offered_rps: list[float], eps: float = 0.10
                   ) -> list[FlatTopRow]:
    """Measure goodput stability (overload) and load-proportional idling
    (underload) against a known peak goodput."""
    rows = []
    for o in offered_rps:
        probe = scenario.with_rate(o)
        stats = stats_for(probe, run_scenario(probe))
        frac = o / peak_rps
        exp_bad = max(0.0, (o - peak_rps) / o)
        exp_idle = max(0.0, (peak_rps - o) / peak_rps)
        med = float(np.median([m.median_batch for m in stats.models]))
        rows.append(FlatTopRow(o, frac, stats.goodput_rps, stats.bad_rate,
                               exp_bad, stats.mean_idle_fraction, exp_idle,
                               med))
    return rows


# -- autoscaling advice -------------------------------------------------------

def autoscale_advice(bad_rate: float, idle_fraction: float, gpus: int,
                     bad_rate_threshold: float = 0.01,
                     idle_threshold: float = 0.05) -> int:
    """Signed GPU delta: grow by ceil(N*r/(1-r)) under overload, shrink by
    floor(N*f) when idle, never below one GPU."""
    if not 0.0 <= bad_rate < 1.0:
        raise ValueError("bad rate must be in [0, 1)")
    if not 0.0 <= idle_fraction <= 1.0:
        raise ValueError("idle fraction must be in [0, 1]")
    if bad_rate > bad_rate_threshold:
        return math.ceil(gpus * bad_rate / (1.0 - bad_rate))
    if idle_fraction > idle_threshold:
        return -min(math.floor(gpus * idle_fraction), gpus - 1)
    return 0
