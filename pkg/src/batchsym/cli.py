"""Command-line entry point.

Subcommands: simulate, goodput, sweep, trace, partition, scale-bench,
analytic. Exit codes: 0 ok, 1 runtime failure, 2 usage/validation error.
Outputs are written atomically; reruns with identical inputs produce
byte-identical files. BATCHSYM_THREADS bounds sweep fan-out.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import outputs
from .metrics import (MODE_NO_COORDINATION, MODE_STAGGERED,
                      analytical_solution, goodput_search, stats_for)
from .partitioner import (PartitionError, assignment_csv, evaluate,
                          imbalance_factor, load_problem, random_solver,
                          solve)
from .profile import LatencyProfile, ProfileError, load_model_zoo
from .scalebench import scale_bench
from .scenario import (BUNDLED_SCENARIOS, Scenario, ScenarioError,
                       load_scenario, run_scenario)
from .sweeps import DIMENSIONS, run_sweep
from .units import ms_to_ns
from .workload import WorkloadError

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _load_scenario_arg(path: str, policy: str | None, seed: int | None
                       ) -> Scenario:
    sc = load_scenario(path)
    if policy is not None:
        from dataclasses import replace
        sc = sc.with_policy(replace(sc.policy, kind=policy))
    if seed is not None:
        sc = sc.with_seed(seed)
    return sc


def cmd_simulate(args) -> int:
    sc = _load_scenario_arg(args.scenario, args.policy, args.seed)
    result = run_scenario(sc, record_trace=True)
    stats = stats_for(sc, result)
    outputs.write_run_outputs(args.out, sc.name, sc.seed, result, stats)
    print(f"{sc.name}: {stats.arrivals} arrivals, "
          f"goodput {stats.goodput_rps:.1f} r/s, "
          f"bad rate {stats.bad_rate:.4f}, outputs in {args.out}")
    return EXIT_OK


def cmd_trace(args) -> int:
    sc = _load_scenario_arg(args.scenario, args.policy, args.seed)
    result = run_scenario(sc, record_trace=True)
    text = outputs.trace_csv(result)
    if args.out:
        outputs.atomic_write_text(os.path.join(args.out, "trace.csv"), text)
        print(os.path.join(args.out, "trace.csv"))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_goodput(args) -> int:
    sc = _load_scenario_arg(args.scenario, args.policy, args.seed)
    res = goodput_search(sc, rel_tol=args.rel_tol, keep_stats=True)
    if args.out:
        lines = ["rate_rps,feasible"]
        lines += [f"{r:.3f},{int(ok)}" for r, ok in res.probes]
        lines.append(f"# goodput_rps={res.rate_rps:.3f}")
        outputs.atomic_write_text(os.path.join(args.out, "goodput.csv"),
                                  "\n".join(lines) + "\n")
    print(f"{sc.name}: goodput {res.rate_rps:.1f} r/s "
          f"({len(res.probes)} probes)")
    return EXIT_OK


def _parse_grid(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_sweep(args) -> int:
    sc = _load_scenario_arg(args.scenario, None, args.seed)
    policies = args.policies.split(",") if args.policies else None
    grid = _parse_grid(args.grid)
    rows = run_sweep(args.dimension, sc, grid, policies,
                     peak_rps=args.peak_rps)
    text = outputs.sweep_rows_csv(rows)
    if args.out:
        path = os.path.join(args.out, f"sweep_{args.dimension}.csv")
        outputs.atomic_write_text(path, text)
        print(path)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_analytic(args) -> int:
    if args.model and args.zoo:
        zoo = load_model_zoo(args.zoo)
        rows = [z for z in zoo if z.name == args.model]
        if not rows:
            print(f"model {args.model!r} not in zoo {args.zoo}",
                  file=sys.stderr)
            return EXIT_USAGE
        alpha, beta = rows[0].alpha_ms, rows[0].beta_ms
        slo_ms = args.slo if args.slo is not None else rows[0].slo_ms
        name = args.model
    elif args.alpha is not None and args.beta is not None:
        alpha, beta = args.alpha, args.beta
        if args.slo is None:
            print("--slo required with --alpha/--beta", file=sys.stderr)
            return EXIT_USAGE
        slo_ms = args.slo
        name = args.model or "model"
    else:
        print("need either --model with --zoo, or --alpha and --beta",
              file=sys.stderr)
        return EXIT_USAGE
    profile = LatencyProfile.linear(alpha, beta)
    lines = ["model,mode,batch_size,throughput_rps"]
    for mode in (MODE_NO_COORDINATION, MODE_STAGGERED):
        sol = analytical_solution(profile, ms_to_ns(slo_ms), args.gpus, mode)
        if not sol.feasible:
            print(f"{name} {mode}: infeasible SLO")
            lines.append(f"{name},{mode},0,0")
            continue
        print(f"{name} {mode}: batch size {sol.batch_size}, "
              f"{sol.throughput_rps:.0f} r/s")
        lines.append(f"{name},{mode},{sol.batch_size},"
                     f"{sol.throughput_rps:.3f}")
    if args.out:
        outputs.atomic_write_text(os.path.join(args.out, "analytic.csv"),
                                  "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_partition(args) -> int:
    problem = load_problem(args.problem)
    if args.baseline == "random":
        res = random_solver(problem, args.budget, args.seed)
    else:
        res = solve(problem, args.budget, args.seed)
    ev = res.evaluation
    if ev.feasible:
        rate_if, mem_if = imbalance_factor(problem, res.assignment)
        print(f"objective {ev.objective:.4f} "
              f"(rate dev {ev.rate_dev:.4f}, mem dev {ev.mem_dev:.4f}); "
              f"imbalance rate {rate_if:.4f}, mem {mem_if:.4f}")
    else:
        print("no feasible assignment found; best violations:",
              file=sys.stderr)
        for v in ev.violations:
            print(f"  {v}", file=sys.stderr)
    if args.out:
        outputs.atomic_write_text(os.path.join(args.out, "assignment.csv"),
                                  assignment_csv(problem, res.assignment))
    return EXIT_OK if ev.feasible else EXIT_RUNTIME


def cmd_scale_bench(args) -> int:
    workers = [int(w) for w in args.workers.split(",")]
    gpus = [int(g) for g in args.gpus.split(",")]
    res = scale_bench(workers, gpus, args.duration)
    lines = ["kind,workers,gpus,models,requests,elapsed_s,throughput_rps,"
             "cost_per_decision_us"]
    for p in res["workers"]:
        print(f"workers={p.workers}: {p.throughput_rps:,.0f} decisions/s")
        lines.append(f"workers,{p.workers},{p.gpus},{p.models},{p.requests},"
                     f"{p.elapsed_s:.3f},{p.throughput_rps:.1f},"
                     f"{p.cost_per_decision_us:.3f}")
    for p in res["gpus"]:
        print(f"gpus={p.gpus}: {p.cost_per_decision_us:.2f} us/decision")
        lines.append(f"gpus,{p.workers},{p.gpus},{p.models},{p.requests},"
                     f"{p.elapsed_s:.3f},{p.throughput_rps:.1f},"
                     f"{p.cost_per_decision_us:.3f}")
    if args.out:
        outputs.atomic_write_text(os.path.join(args.out, "scale_bench.csv"),
                                  "\n".join(lines) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="batchsym",
        description="Deadline-aware batch scheduling: simulator and tools. "
                    f"Bundled scenarios: {', '.join(BUNDLED_SCENARIOS)}")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_flags(p, need_out=False):
        p.add_argument("--scenario", required=True,
                       help="scenario file or bundled name")
        p.add_argument("--policy", choices=["deferred", "eager", "timeout"],
                       help="override the scenario's policy kind")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--out", required=need_out, help="output directory")

    p = sub.add_parser("simulate", help="run one scenario, write result files")
    scenario_flags(p, need_out=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("trace", help="run one scenario, emit the event trace")
    scenario_flags(p)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("goodput", help="binary-search the p99-feasible rate")
    scenario_flags(p)
    p.add_argument("--rel-tol", type=float, default=0.005)
    p.set_defaults(func=cmd_goodput)

    p = sub.add_parser("sweep", help="grid experiment over one dimension")
    scenario_flags(p)
    p.add_argument("--dimension", required=True, choices=DIMENSIONS)
    p.add_argument("--grid", required=True,
                   help="comma-separated grid values")
    p.add_argument("--policies",
                   help="comma-separated policies (deferred, eager, "
                        "timeout:<pct>)")
    p.add_argument("--peak-rps", type=float,
                   help="peak goodput for offered_load grids (searched "
                        "when omitted)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analytic", help="closed-form batch size/throughput")
    p.add_argument("--model", help="model name (requires --zoo)")
    p.add_argument("--zoo", help="bundled zoo name or CSV path")
    p.add_argument("--alpha", type=float, help="per-item cost, ms")
    p.add_argument("--beta", type=float, help="fixed invocation cost, ms")
    p.add_argument("--slo", type=float, help="latency SLO, ms")
    p.add_argument("--gpus", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analytic)

    p = sub.add_parser("partition", help="solve a sub-cluster partitioning "
                                         "problem")
    p.add_argument("--problem", required=True)
    p.add_argument("--budget", type=float, required=True,
                   help="time budget, seconds")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--baseline", choices=["random"],
                   help="run the random baseline instead of the solver")
    p.add_argument("--out")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("scale-bench", help="wall-clock scheduler throughput")
    p.add_argument("--workers", default="1,8",
                   help="comma-separated worker counts")
    p.add_argument("--gpus", default="64,4096",
                   help="comma-separated GPU stub counts")
    p.add_argument("--duration", type=float, default=5.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_scale_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, ProfileError, WorkloadError, PartitionError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
