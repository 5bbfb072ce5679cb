"""Grid experiments over scenario dimensions.

Each sweep rewrites one dimension of a base scenario per grid point and
reports one row per (point, policy): the searched goodput (or the measured
goodput for offered-load points), bad rate, mean idle fraction, and median
batch size. Rows feed the sweep CSV consumed by the plotting frontend.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .metrics import goodput_search, run_scenario, stats_for
from .profile import LatencyProfile, ModelSpec
from .scenario import Scenario
from .scheduler import PolicyConfig
from .units import ms_to_ns

DIMENSIONS = ("beta_ratio", "timeout", "offered_load", "slo")


def _policy(base: PolicyConfig, name: str) -> PolicyConfig:
    """Policy override by name: 'deferred', 'eager', 'timeout:<frac>' with
    frac a percentage of each model's SLO."""
    if name == "deferred" or name == "eager":
        return replace(base, kind=name, timeout_ns=0, timeout_slo_frac=None)
    if name.startswith("timeout:"):
        frac = float(name.split(":", 1)[1]) / 100.0
        return replace(base, kind="timeout", timeout_ns=0,
                       timeout_slo_frac=frac)
    raise ValueError(f"unknown policy {name!r}")


def _with_linear_models(scenario: Scenario, alpha_ms: float, beta_ms: float,
                        slo_ms: float) -> Scenario:
    models = tuple(
        ModelSpec(m.model_id, m.name,
                  LatencyProfile.linear(alpha_ms, beta_ms,
                                        m.profile.max_batch),
                  ms_to_ns(slo_ms))
        for m in scenario.models)
    return replace(scenario, models=models)


def _with_slo(scenario: Scenario, slo_ms: float) -> Scenario:
    models = tuple(ModelSpec(m.model_id, m.name, m.profile, ms_to_ns(slo_ms))
                   for m in scenario.models)
    return replace(scenario, models=models)


def _row(dimension, value, policy_name, goodput, stats) -> dict:
    return {
        "dimension": dimension,
        "value": value,
        "policy": policy_name,
        "goodput_rps": goodput,
        "bad_rate": stats.bad_rate if stats else 0.0,
        "idle_fraction": stats.mean_idle_fraction if stats else 0.0,
        "median_batch_size": (float(np.median([m.median_batch
                                               for m in stats.models]))
                              if stats else 0.0),
    }


def sweep_beta_ratio(base: Scenario, grid: list[float],
                     policies: list[str]) -> list[dict]:
    """Batching-effect sweep: alpha = 1 ms, beta = ratio * alpha,
    SLO = 2 * l(8). Goodput searched per point and policy."""
    rows = []
    for ratio in grid:
        alpha = 1.0
        beta = ratio * alpha
        slo = 2.0 * (8 * alpha + beta)
        point = _with_linear_models(base, alpha, beta, slo)
        for pname in policies:
            sc = point.with_policy(_policy(base.policy, pname))
            res = goodput_search(sc, keep_stats=True)
            rows.append(_row("beta_ratio", ratio, pname, res.rate_rps,
                             res.stats_at_rate))
    return rows


def sweep_timeout(base: Scenario, grid: list[float]) -> list[dict]:
    """Timeout sweep: grid values are timeout percentages of each model's
    SLO; a deferred reference row is always included."""
    rows = []
    res = goodput_search(base.with_policy(_policy(base.policy, "deferred")),
                         keep_stats=True)
    rows.append(_row("timeout", "deferred", "deferred", res.rate_rps,
                     res.stats_at_rate))
    for pct in grid:
        sc = base.with_policy(_policy(base.policy, f"timeout:{pct}"))
        res = goodput_search(sc, keep_stats=True)
        rows.append(_row("timeout", pct, f"timeout:{pct}", res.rate_rps,
                         res.stats_at_rate))
    return rows


def sweep_offered_load(base: Scenario, grid: list[float],
                       peak_rps: float | None = None) -> list[dict]:
    """Offered-load sweep: grid values are fractions of the peak goodput
    (searched once when not given). Runs fixed-rate simulations."""
    if peak_rps is None:
        peak_rps = goodput_search(base).rate_rps
    rows = []
    for frac in grid:
        rate = frac * peak_rps
        probe = base.with_rate(rate)
        stats = stats_for(probe, run_scenario(probe))
        rows.append(_row("offered_load", frac, base.policy.kind,
                         stats.goodput_rps, stats))
    return rows


def sweep_slo(base: Scenario, grid: list[float],
              policies: list[str]) -> list[dict]:
    rows = []
    for slo_ms in grid:
        point = _with_slo(base, slo_ms)
        for pname in policies:
            sc = point.with_policy(_policy(base.policy, pname))
            res = goodput_search(sc, keep_stats=True)
            rows.append(_row("slo", slo_ms, pname, res.rate_rps,
                             res.stats_at_rate))
    return rows


def run_sweep(dimension: str, base: Scenario, grid: list[float],
              policies: list[str] | None = None,
              peak_rps: float | None = None) -> list[dict]:
    policies = policies or [base.policy.kind]
    if dimension == "beta_ratio":
        return sweep_beta_ratio(base, grid, policies)
    if dimension == "timeout":
        return sweep_timeout(base, grid)
    if dimension == "offered_load":
        return sweep_offered_load(base, grid, peak_rps)
    if dimension == "slo":
        return sweep_slo(base, grid, policies)
    raise ValueError(f"unknown sweep dimension {dimension!r}")
