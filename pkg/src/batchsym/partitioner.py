"""Sub-cluster partitioning: spread models across dispatcher sub-clusters.

Each model i has a request rate r_i, a static memory footprint s_i, and a
dynamic (runtime) memory peak d_i. An assignment places every model in
exactly one of l sub-clusters. The objective minimizes the worst deviation
from the per-sub-cluster averages,

    minimize  max_j |rate_j - mean_rate|  +  w * max_j |mem_j - mean_mem|

subject to per-sub-cluster caps: rate_j <= rate_cap and
mem_j + max(d_i over members) <= mem_cap, plus an optional bound on the
total load/unload cost of moving away from a current assignment.

Solving this exactly is NP-hard, so `solve` runs randomized greedy
construction plus first-improvement local search (single-model moves and
pairwise swaps) with restarts under a wall-clock budget. `brute_force`
enumerates small instances and serves as the independent optimality oracle;
`random_solver` is the sampling baseline.
"""

from __future__ import annotations

import csv
import io
import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .workload import substream

INF = float("inf")


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class PartitionProblem:
    names: tuple[str, ...]
    rates: tuple[float, ...]
    static_mem: tuple[float, ...]
    dynamic_mem: tuple[float, ...]
    subclusters: int
    rate_cap: float = INF
    mem_cap: float = INF
    weight: float | None = None  # None -> mean_rate / mean_mem
    current: tuple[int, ...] | None = None
    change_cost: tuple[tuple[float, ...], ...] | None = None  # c[i][j]
    change_budget: float = INF

    def __post_init__(self) -> None:
        m = len(self.names)
        if m == 0:
            raise PartitionError("no models")
        for fld in (self.rates, self.static_mem, self.dynamic_mem):
            if len(fld) != m:
                raise PartitionError("per-model arrays must align")
            if any(v < 0 for v in fld):
                raise PartitionError("negative model quantity")
        if self.subclusters < 1:
            raise PartitionError("need at least one sub-cluster")
        if self.current is not None:
            if len(self.current) != m:
                raise PartitionError("current assignment length mismatch")
            if any(not 0 <= j < self.subclusters for j in self.current):
                raise PartitionError("current assignment out of range")
        if self.change_cost is not None and len(self.change_cost) != m:
            raise PartitionError("change cost matrix must be m x l")

    @property
    def n_models(self) -> int:
        return len(self.names)

    @property
    def mean_rate(self) -> float:
        return sum(self.rates) / self.subclusters

    @property
    def mean_mem(self) -> float:
        return sum(self.static_mem) / self.subclusters

    def effective_weight(self) -> float:
        if self.weight is not None:
            return self.weight
        return self.mean_rate / self.mean_mem if self.mean_mem > 0 else 1.0

    def cost_of(self, i: int, j: int) -> float:
        if self.change_cost is None:
            return 1.0
        return self.change_cost[i][j]

    def move_cost(self, i: int, j_from: int, j_to: int) -> float:
        # one unload plus one load; y counts both flipped entries
        if j_from == j_to:
            return 0.0
        return self.cost_of(i, j_from) + self.cost_of(i, j_to)


@dataclass(frozen=True)
class Evaluation:
    objective: float
    rate_dev: float
    mem_dev: float
    feasible: bool
    violations: tuple[str, ...]
    change_cost: float


def evaluate(problem: PartitionProblem, assignment) -> Evaluation:
    m, l = problem.n_models, problem.subclusters
    if len(assignment) != m or any(not 0 <= j < l for j in assignment):
        raise PartitionError("malformed assignment")
    rate = [0.0] * l
    mem = [0.0] * l
    dyn = [0.0] * l
    for i, j in enumerate(assignment):
        rate[j] += problem.rates[i]
        mem[j] += problem.static_mem[i]
        if problem.dynamic_mem[i] > dyn[j]:
            dyn[j] = problem.dynamic_mem[i]
    r_bar, s_bar = problem.mean_rate, problem.mean_mem
    d_rate = max(abs(r - r_bar) for r in rate)
    d_mem = max(abs(s - s_bar) for s in mem)
    violations = []
    for j in range(l):
        if rate[j] > problem.rate_cap:
            violations.append(f"subcluster {j}: rate {rate[j]:.3f} "
                              f"> cap {problem.rate_cap:.3f}")
        if mem[j] + dyn[j] > problem.mem_cap:
            violations.append(f"subcluster {j}: memory {mem[j] + dyn[j]:.3f} "
                              f"> cap {problem.mem_cap:.3f}")
    ccost = 0.0
    if problem.current is not None:
        for i, j in enumerate(assignment):
            ccost += problem.move_cost(i, problem.current[i], j)
        if ccost > problem.change_budget:
            violations.append(f"change cost {ccost:.3f} "
                              f"> budget {problem.change_budget:.3f}")
    obj = d_rate + problem.effective_weight() * d_mem
    return Evaluation(obj, d_rate, d_mem, not violations,
                      tuple(violations), ccost)


def imbalance_factor(problem: PartitionProblem, assignment
                     ) -> tuple[float, float]:
    """(max - min) / avg of per-sub-cluster rate and static-memory sums."""
    l = problem.subclusters
    rate = [0.0] * l
    mem = [0.0] * l
    for i, j in enumerate(assignment):
        rate[j] += problem.rates[i]
        mem[j] += problem.static_mem[i]
    out = []
    for sums in (rate, mem):
        avg = sum(sums) / l
        if avg <= 0:
            raise PartitionError("imbalance factor undefined for zero average")
        out.append((max(sums) - min(sums)) / avg)
    return out[0], out[1]


@dataclass
class SolveResult:
    assignment: tuple[int, ...]
    evaluation: Evaluation
    restarts: int = 0
    improvements: int = 0

    @property
    def feasible(self) -> bool:
        return self.evaluation.feasible


# -- incremental search state -------------------------------------------------

class _State:
    """Assignment plus per-sub-cluster aggregates for O(l) rescoring.

    Per-sub-cluster dynamic-memory peaks live in sorted lists so removing a
    member costs O(log m). Infeasibility w.r.t. the rate/memory caps is
    folded into a lexicographic score (violation, objective); the change
    budget is enforced as a hard move filter.
    """

    def __init__(self, problem: PartitionProblem, assignment: list[int]):
        self.p = problem
        self.x = assignment
        l = problem.subclusters
        self.rate = [0.0] * l
        self.mem = [0.0] * l
        self.dyn: list[list[float]] = [[] for _ in range(l)]
        for i, j in enumerate(assignment):
            self.rate[j] += problem.rates[i]
            self.mem[j] += problem.static_mem[i]
            self.dyn[j].append(problem.dynamic_mem[i])
        for d in self.dyn:
            d.sort()
        self.ccost = 0.0
        if problem.current is not None:
            for i, j in enumerate(assignment):
                self.ccost += problem.move_cost(i, problem.current[i], j)

    def score(self) -> tuple[float, float]:
        p = self.p
        viol = 0.0
        for j in range(p.subclusters):
            viol += max(0.0, self.rate[j] - p.rate_cap)
            peak = self.dyn[j][-1] if self.dyn[j] else 0.0
            viol += max(0.0, self.mem[j] + peak - p.mem_cap)
        r_bar, s_bar = p.mean_rate, p.mean_mem
        d_rate = max(abs(r - r_bar) for r in self.rate)
        d_mem = max(abs(s - s_bar) for s in self.mem)
        return (viol, d_rate + p.effective_weight() * d_mem)

    def budget_left(self) -> float:
        return self.p.change_budget - self.ccost

    def move_budget_delta(self, i: int, j_to: int) -> float:
        p = self.p
        if p.current is None:
            return 0.0
        cur = p.current[i]
        return p.move_cost(i, cur, j_to) - p.move_cost(i, cur, self.x[i])

    def apply_move(self, i: int, j_to: int) -> None:
        p = self.p
        j_from = self.x[i]
        self.ccost += self.move_budget_delta(i, j_to)
        self.rate[j_from] -= p.rates[i]
        self.rate[j_to] += p.rates[i]
        self.mem[j_from] -= p.static_mem[i]
        self.mem[j_to] += p.static_mem[i]
        d = p.dynamic_mem[i]
        src = self.dyn[j_from]
        src.pop(_bisect_index(src, d))
        dst = self.dyn[j_to]
        dst.insert(_bisect_left(dst, d), d)
        self.x[i] = j_to


def _bisect_left(a: list[float], v: float) -> int:
    lo, hi = 0, len(a)
    while lo < hi:
        mid = (lo + hi) // 2
        if a[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo


def _bisect_index(a: list[float], v: float) -> int:
    i = _bisect_left(a, v)
    if i >= len(a) or a[i] != v:
        raise PartitionError("aggregate lists out of sync")
    return i


def _greedy_construct(problem: PartitionProblem, rng) -> list[int]:
    """Heaviest-first placement onto the least-loaded feasible sub-cluster,
    with seeded tie noise so restarts explore different regions."""
    m, l = problem.n_models, problem.subclusters
    order = sorted(range(m), key=lambda i: (-problem.rates[i],
                                            -problem.static_mem[i], i))
    x = [0] * m
    rate = [0.0] * l
    mem = [0.0] * l
    dyn = [0.0] * l
    noise = rng.random(m * l) * 1e-9
    r_bar = problem.mean_rate
    w = problem.effective_weight()
    for i in order:
        best_j, best_key = 0, None
        for j in range(l):
            nr = rate[j] + problem.rates[i]
            nm = mem[j] + problem.static_mem[i]
            nd = max(dyn[j], problem.dynamic_mem[i])
            pen = max(0.0, nr - problem.rate_cap) + \
                max(0.0, nm + nd - problem.mem_cap)
            key = (pen, nr - r_bar + w * nm + noise[i * l + j])
            if best_key is None or key < best_key:
                best_key, best_j = key, j
        x[i] = best_j
        rate[best_j] += problem.rates[i]
        mem[best_j] += problem.static_mem[i]
        dyn[best_j] = max(dyn[best_j], problem.dynamic_mem[i])
    return x


def _local_search(state: _State, rng, deadline: float) -> int:
    """First-improvement over single moves and pairwise swaps until a local
    optimum or the deadline. Returns the number of improving steps."""
    p = state.p
    m, l = p.n_models, p.subclusters
    steps = 0
    improved = True
    while improved:
        improved = False
        cur = state.score()
        scan = rng.permutation(m)
        for i in scan:
            i = int(i)
            j_from = state.x[i]
            for j_to in range(l):
                if j_to == j_from:
                    continue
                if state.move_budget_delta(i, j_to) > state.budget_left():
                    continue
                state.apply_move(i, j_to)
                new = state.score()
                if new < cur:
                    cur = new
                    improved = True
                    steps += 1
                    break
                state.apply_move(i, j_from)
            if time.monotonic() >= deadline:
                return steps
        if improved:
            continue
        # pairwise swaps, randomized scan, first improvement
        pairs = rng.permutation(m)
        for a_ in pairs:
            a = int(a_)
            ja = state.x[a]
            for b in range(m):
                jb = state.x[b]
                if jb == ja:
                    continue
                delta = (state.move_budget_delta(a, jb) +
                         state.move_budget_delta(b, ja))
                # apply_move(a) changes nothing in b's delta: different rows
                if delta > state.budget_left():
                    continue
                state.apply_move(a, jb)
                state.apply_move(b, ja)
                new = state.score()
                if new < cur:
                    cur = new
                    improved = True
                    steps += 1
                    break
                state.apply_move(b, jb)
                state.apply_move(a, ja)
            if improved or time.monotonic() >= deadline:
                break
        if time.monotonic() >= deadline:
            break
    return steps


def solve(problem: PartitionProblem, time_budget_s: float,
          seed: int) -> SolveResult:
    """Best feasible assignment found by randomized greedy construction and
    local search with restarts until the budget expires. Falls back to the
    least-infeasible assignment seen when nothing feasible was found."""
    if time_budget_s <= 0:
        raise PartitionError("time budget must be > 0")
    deadline = time.monotonic() + time_budget_s
    rng = substream(seed, 0)
    best_x: list[int] | None = None
    best_score: tuple[float, float] | None = None
    restarts = 0
    improvements = 0
    first = True
    while True:
        if first and problem.current is not None:
            x = list(problem.current)
        else:
            x = _greedy_construct(problem, rng)
        first = False
        state = _State(problem, x)
        if state.budget_left() < 0:
            # construction overshot the change budget: start from current
            state = _State(problem, list(problem.current))
        improvements += _local_search(state, rng, deadline)
        score = state.score()
        if best_score is None or score < best_score:
            best_score = score
            best_x = list(state.x)
        restarts += 1
        if time.monotonic() >= deadline:
            break
    assert best_x is not None
    return SolveResult(tuple(best_x), evaluate(problem, best_x), restarts,
                       improvements)


def random_solver(problem: PartitionProblem, time_budget_s: float,
                  seed: int) -> SolveResult:
    """Uniform random assignments; keeps the feasible one with the least
    objective (least violation when nothing feasible shows up)."""
    if time_budget_s <= 0:
        raise PartitionError("time budget must be > 0")
    deadline = time.monotonic() + time_budget_s
    rng = substream(seed, 1)
    m, l = problem.n_models, problem.subclusters
    best_x = None
    best_key = None
    tried = 0
    while True:
        draws = rng.integers(0, l, size=(256, m))
        for row in draws:
            x = [int(v) for v in row]
            ev = evaluate(problem, x)
            key = (0.0 if ev.feasible else 1.0, ev.objective)
            if best_key is None or key < best_key:
                best_key = key
                best_x = x
            tried += 1
            if time.monotonic() >= deadline:
                return SolveResult(tuple(best_x), evaluate(problem, best_x),
                                   tried, 0)
        if time.monotonic() >= deadline:
            return SolveResult(tuple(best_x), evaluate(problem, best_x),
                               tried, 0)


def brute_force(problem: PartitionProblem) -> SolveResult:
    """Exhaustive optimum over l^m assignments. Oracle for small instances."""
    m, l = problem.n_models, problem.subclusters
    if l ** m > 4_000_000:
        raise PartitionError(f"instance too large to enumerate: {l}^{m}")
    best_x = None
    best_key = None
    for x in itertools.product(range(l), repeat=m):
        ev = evaluate(problem, x)
        key = (0.0 if ev.feasible else 1.0, ev.objective)
        if best_key is None or key < best_key:
            best_key = key
            best_x = x
    return SolveResult(tuple(best_x), evaluate(problem, best_x), 0, 0)


# -- instances and file formats ------------------------------------------------

def random_instance(n_models: int, subclusters: int, seed: int,
                    mean_rate: float = 100.0,
                    rate_cap_slack: float = 1.5,
                    mem_cap_slack: float = 1.5) -> PartitionProblem:
    """Synthetic instance with exponentially distributed request rates."""
    rng = substream(seed, 2)
    rates = rng.exponential(mean_rate, size=n_models)
    static = rng.uniform(50.0, 2000.0, size=n_models)
    dynamic = rng.uniform(0.0, 500.0, size=n_models)
    rate_cap = rate_cap_slack * float(rates.sum()) / subclusters
    mem_cap = mem_cap_slack * (float(static.sum()) / subclusters +
                               float(dynamic.max()))
    return PartitionProblem(
        names=tuple(f"m{i}" for i in range(n_models)),
        rates=tuple(round(float(r), 6) for r in rates),
        static_mem=tuple(round(float(s), 6) for s in static),
        dynamic_mem=tuple(round(float(d), 6) for d in dynamic),
        subclusters=subclusters, rate_cap=rate_cap, mem_cap=mem_cap)


def parse_problem(text: str, source: str = "<problem>") -> PartitionProblem:
    """Problem file: '# key=value' config lines, then the CSV
    model,rate_rps,static_mem_mb,dynamic_mem_mb."""
    config: dict[str, str] = {}
    csv_lines = []
    for line in text.splitlines():
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                k, v = body.split("=", 1)
                config[k.strip()] = v.strip()
        elif line.strip():
            csv_lines.append(line)
    reader = csv.reader(io.StringIO("\n".join(csv_lines)))
    header = next(reader, None)
    if header != ["model", "rate_rps", "static_mem_mb", "dynamic_mem_mb"]:
        raise PartitionError(
            f"{source}: expected header model,rate_rps,static_mem_mb,dynamic_mem_mb")
    names, rates, static, dynamic = [], [], [], []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != 4:
            raise PartitionError(f"{source}:{lineno}: expected 4 fields")
        try:
            names.append(row[0])
            rates.append(float(row[1]))
            static.append(float(row[2]))
            dynamic.append(float(row[3]))
        except ValueError as exc:
            raise PartitionError(f"{source}:{lineno}: {exc}") from None
    if "l" not in config:
        raise PartitionError(f"{source}: missing '# l=' config line")

    def num(key, default):
        if key not in config or config[key] == "":
            return default
        return float(config[key])

    return PartitionProblem(
        names=tuple(names), rates=tuple(rates), static_mem=tuple(static),
        dynamic_mem=tuple(dynamic), subclusters=int(config["l"]),
        rate_cap=num("R_max", INF), mem_cap=num("S_max", INF),
        weight=(float(config["w"]) if config.get("w") else None),
        change_budget=num("C_max", INF))


def load_problem(path: str) -> PartitionProblem:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_problem(fh.read(), source=path)


def assignment_csv(problem: PartitionProblem, assignment) -> str:
    lines = ["model,subcluster"]
    for name, j in zip(problem.names, assignment):
        lines.append(f"{name},{j}")
    return "\n".join(lines) + "\n"
