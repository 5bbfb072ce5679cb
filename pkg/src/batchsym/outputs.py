"""Machine-readable result files.

Every file is written atomically (temp file in the target directory, then
rename) and contains nothing run-dependent beyond the simulation itself
(no timestamps, no host info), so re-running with identical inputs yields
byte-identical outputs.
"""

from __future__ import annotations

import json
import os
import tempfile

from .metrics import RunStats
from .simulator import OUTCOME_NAMES, RunResult
from .units import ns_to_ms


def atomic_write_text(path: str, content: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def summary_json(stats: RunStats, scenario_name: str, seed: int,
                 extra: dict | None = None) -> str:
    doc = {
        "scenario": scenario_name,
        "seed": seed,
        "window_ns": list(stats.window_ns),
        "cluster": {
            "arrivals": stats.arrivals,
            "completed": stats.completed,
            "late": stats.late,
            "dropped": stats.dropped,
            "goodput_rps": round(stats.goodput_rps, 6),
            "bad_rate": round(stats.bad_rate, 9),
            "mean_idle_fraction": round(stats.mean_idle_fraction, 9),
            "gpu_idle_fraction": [round(f, 9) for f in stats.gpu_idle_fraction],
        },
        "models": [
            {
                "name": m.name,
                "arrivals": m.arrivals,
                "completed": m.completed,
                "late": m.late,
                "dropped": m.dropped,
                "p99_latency_ms": (round(ns_to_ms(m.p99_latency_ns), 6)
                                   if m.p99_latency_ns != float("inf")
                                   else "inf"),
                "median_batch": m.median_batch,
                "max_queueing_delay_ms": round(
                    ns_to_ms(m.max_queueing_delay_ns), 6),
            }
            for m in stats.models
        ],
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def requests_csv(result: RunResult) -> str:
    lines = ["request_id,model,arrival_ns,dispatch_ns,start_ns,finish_ns,"
             "batch_size,outcome"]
    names = result.model_names
    for i in range(result.n_requests):
        outcome = OUTCOME_NAMES[result.req_outcome[i]] \
            if result.req_outcome[i] >= 0 else ""
        if result.req_outcome[i] == 2:  # dropped: no dispatch fields
            lines.append(f"{i + 1},{names[result.req_model[i]]},"
                         f"{result.req_arrival[i]},,,,,{outcome}")
        else:
            lines.append(
                f"{i + 1},{names[result.req_model[i]]},"
                f"{result.req_arrival[i]},{result.req_dispatch[i]},"
                f"{result.req_start[i]},{result.req_finish[i]},"
                f"{result.req_batch[i]},{outcome}")
    return "\n".join(lines) + "\n"


def trace_csv(result: RunResult) -> str:
    lines = ["event_time_ns,event_kind,model,gpu,batch_size,start_ns,"
             "finish_ns,request_ids"]
    names = result.model_names
    for (t, kind, mid, gid, size, start, finish, rids) in result.trace:
        gpu = "" if gid < 0 else str(gid)
        s = "" if start < 0 else str(start)
        f = "" if finish < 0 else str(finish)
        lines.append(f"{t},{kind},{names[mid]},{gpu},{size},{s},{f},"
                     f"{';'.join(str(r) for r in rids)}")
    return "\n".join(lines) + "\n"


def batch_hist_csv(stats: RunStats) -> str:
    lines = ["model,batch_size,count"]
    for m in stats.models:
        for size, count in m.batch_hist.items():
            lines.append(f"{m.name},{size},{count}")
    return "\n".join(lines) + "\n"


def latency_csv(result: RunResult) -> str:
    """Per served request: queueing delay and total latency."""
    lines = ["model,request_id,queueing_delay_ns,latency_ns"]
    names = result.model_names
    for i in range(result.n_requests):
        if result.req_outcome[i] in (0, 1):
            qd = result.req_start[i] - result.req_arrival[i]
            lat = result.req_finish[i] - result.req_arrival[i]
            lines.append(f"{names[result.req_model[i]]},{i + 1},{qd},{lat}")
    return "\n".join(lines) + "\n"


def utilization_csv(result: RunResult, stats: RunStats) -> str:
    lines = ["gpu,busy_ns,idle_ns"]
    lo, hi = stats.window_ns
    window = hi - lo
    for gid, log in enumerate(result.gpu_logs):
        busy = sum(max(0, min(f, hi) - max(s, lo)) for s, f, _, _ in log)
        lines.append(f"{gid},{busy},{window - busy}")
    return "\n".join(lines) + "\n"


SWEEP_HEADER = ("dimension,value,policy,goodput_rps,bad_rate,idle_fraction,"
                "median_batch_size")


def sweep_rows_csv(rows: list[dict]) -> str:
    lines = [SWEEP_HEADER]
    for r in rows:
        lines.append(f"{r['dimension']},{r['value']},{r['policy']},"
                     f"{r['goodput_rps']:.3f},{r['bad_rate']:.6f},"
                     f"{r['idle_fraction']:.6f},{r['median_batch_size']:.1f}")
    return "\n".join(lines) + "\n"


def write_run_outputs(out_dir: str, scenario_name: str, seed: int,
                      result: RunResult, stats: RunStats,
                      extra: dict | None = None) -> list[str]:
    files = {
        "summary.json": summary_json(stats, scenario_name, seed, extra),
        "requests.csv": requests_csv(result),
        "trace.csv": trace_csv(result),
        "batch_hist.csv": batch_hist_csv(stats),
        "latency.csv": latency_csv(result),
        "utilization.csv": utilization_csv(result, stats),
    }
    written = []
    for name, content in files.items():
        path = os.path.join(out_dir, name)
        atomic_write_text(path, content)
        written.append(path)
    return written
