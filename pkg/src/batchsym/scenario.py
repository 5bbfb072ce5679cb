"""Scenario files: everything one experiment needs, in one YAML document.

Fixed key names: models[], gpus, policy{kind,timeout_ms,d_ctrl_us,
d_data_us_per_req}, workload{...}, duration_s, warmup_s, cooldown_s, seed.
Model entries are either inline profiles (name/alpha_ms/beta_ms/slo_ms or a
latency table) or references into a bundled model zoo. All validation
errors are collected and reported together before any work starts.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from importlib import resources

import yaml

from .network import DelayDist, NetworkModel
from .profile import (DEFAULT_MAX_BATCH, LatencyProfile, ModelSpec,
                      ProfileError, load_model_zoo)
from .scheduler import PolicyConfig
from .units import ms_to_ns, us_to_ns
from .workload import WorkloadSpec, WorkloadError

BUNDLED_SCENARIOS = (
    "fig6_stagger",
    "fig7_skip",
    "table2_resnet50",
    "table2_inceptionresnet",
    "fig2_flattop",
    "fig4a_beta_sweep",
    "fig4b_timeout_sweep",
    "fig4b_timeout_zoo",
)


class ScenarioError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid scenario:\n  " + "\n  ".join(problems))


@dataclass(frozen=True)
class Scenario:
    name: str
    models: tuple[ModelSpec, ...]
    gpu_count: int
    policy: PolicyConfig
    workload: WorkloadSpec
    duration_s: float
    warmup_s: float
    cooldown_s: float
    seed: int
    network: NetworkModel = field(default_factory=NetworkModel.zero)

    def with_rate(self, rate_rps: float) -> "Scenario":
        return replace(self, workload=self.workload.with_rate(rate_rps))

    def with_policy(self, policy: PolicyConfig) -> "Scenario":
        return replace(self, policy=policy)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)


def _build_models(raw, problems, base_dir) -> tuple[ModelSpec, ...]:
    specs: list[ModelSpec] = []
    if not isinstance(raw, list) or not raw:
        problems.append("models[] must be a non-empty list")
        return ()
    entries = []
    for k, m in enumerate(raw):
        if not isinstance(m, dict):
            problems.append(f"models[{k}]: expected a mapping")
            continue
        if "zoo" in m:
            try:
                zoo_ref = str(m["zoo"])
                if zoo_ref not in ("1080ti", "a100"):
                    zoo_ref = os.path.join(base_dir, zoo_ref)
                zoo = load_model_zoo(zoo_ref)
            except (ProfileError, OSError) as exc:
                problems.append(f"models[{k}]: {exc}")
                continue
            if "name" in m:
                rows = [z for z in zoo if z.name == m["name"]]
                if not rows:
                    problems.append(
                        f"models[{k}]: {m['name']!r} not in zoo {m['zoo']}")
                    continue
            else:
                rows = zoo
            mb = int(m.get("max_batch", DEFAULT_MAX_BATCH))
            slo_override = m.get("slo_ms")
            for z in rows:
                entries.append((z.name, z.alpha_ms, z.beta_ms,
                                slo_override if slo_override is not None
                                else z.slo_ms, mb, None,
                                int(m.get("count", 1)), k))
        else:
            missing = [f for f in ("name", "slo_ms") if f not in m]
            table = m.get("table_ms")
            if table is None:
                missing += [f for f in ("alpha_ms", "beta_ms") if f not in m]
            if missing:
                problems.append(f"models[{k}]: missing {', '.join(missing)}")
                continue
            entries.append((str(m["name"]), m.get("alpha_ms"),
                            m.get("beta_ms"), m["slo_ms"],
                            int(m.get("max_batch", DEFAULT_MAX_BATCH)),
                            table, int(m.get("count", 1)), k))
    names = set()
    for name, alpha, beta, slo, max_batch, table, count, k in entries:
        if count < 1:
            problems.append(f"models[{k}]: count must be >= 1")
            continue
        for rep in range(count):
            mname = name if count == 1 else f"{name}_{rep}"
            if mname in names:
                problems.append(f"models[{k}]: duplicate model name {mname!r}")
                continue
            names.add(mname)
            try:
                if table is not None:
                    prof = LatencyProfile.table(
                        {int(b): float(v) for b, v in dict(table).items()}
                        if isinstance(table, dict) else [float(v) for v in table],
                        max_batch=max_batch if isinstance(table, dict) else None)
                else:
                    prof = LatencyProfile.linear(float(alpha), float(beta),
                                                 max_batch)
                specs.append(ModelSpec(len(specs), mname, prof,
                                       ms_to_ns(float(slo))))
            except (ProfileError, TypeError, ValueError) as exc:
                problems.append(f"models[{k}] ({mname}): {exc}")
    return tuple(specs)


def _build_policy(raw, problems) -> PolicyConfig:
    if not isinstance(raw, dict):
        problems.append("policy must be a mapping")
        return PolicyConfig("deferred")
    kind = raw.get("kind", "deferred")
    try:
        return PolicyConfig(
            kind=kind,
            timeout_ns=ms_to_ns(float(raw.get("timeout_ms", 0.0))),
            timeout_slo_frac=(float(raw["timeout_slo_frac"])
                              if "timeout_slo_frac" in raw else None),
            d_ctrl_ns=us_to_ns(float(raw.get("d_ctrl_us", 0.0))),
            d_data_ns=us_to_ns(float(raw.get("d_data_us_per_req", 0.0))),
            gather=raw.get("gather", "prefix"),
            target_batch=int(raw.get("target_batch", 0)),
        )
    except (ValueError, TypeError) as exc:
        problems.append(f"policy: {exc}")
        return PolicyConfig("deferred")


def _build_workload(raw, problems, base_dir) -> WorkloadSpec:
    if not isinstance(raw, dict):
        problems.append("workload must be a mapping")
        return WorkloadSpec(rate_rps=1.0)
    trace = raw.get("trace")
    if trace is not None and not os.path.isabs(trace):
        trace = os.path.join(base_dir, trace)
    try:
        return WorkloadSpec(
            arrival=raw.get("arrival", "poisson"),
            rate_rps=float(raw.get("rate_rps", 0.0)),
            gamma_shape=float(raw.get("gamma_shape", 1.0)),
            trace_path=trace,
            segments=tuple((float(s), float(r))
                           for s, r in raw.get("segments", [])),
            popularity=raw.get("popularity", "uniform"),
            zipf_shape=float(raw.get("zipf_shape", 0.0)),
            weights=tuple(float(w) for w in raw.get("weights", [])),
        )
    except (WorkloadError, ValueError, TypeError) as exc:
        problems.append(f"workload: {exc}")
        return WorkloadSpec(rate_rps=1.0)


def _build_delay_dist(raw, problems, label) -> DelayDist:
    try:
        if raw.get("kind", "constant") == "constant":
            return DelayDist.constant(us_to_ns(float(raw.get("value_us", 0.0))))
        return DelayDist.histogram(
            [us_to_ns(float(v)) for v in raw["values_us"]],
            raw["weights"],
            plan_percentile=float(raw.get("plan_percentile", 0.9999)))
    except (KeyError, ValueError, TypeError) as exc:
        problems.append(f"network.{label}: {exc}")
        return DelayDist.constant(0)


def scenario_from_dict(doc: dict, name: str = "<inline>",
                       base_dir: str = ".") -> Scenario:
    problems: list[str] = []
    if not isinstance(doc, dict):
        raise ScenarioError(["scenario document must be a mapping"])
    for key in ("models", "gpus", "workload", "duration_s", "seed"):
        if key not in doc:
            problems.append(f"missing required key {key!r}")
    if problems:
        raise ScenarioError(problems)
    models = _build_models(doc["models"], problems, base_dir)
    policy = _build_policy(doc.get("policy", {}), problems)
    workload = _build_workload(doc["workload"], problems, base_dir)
    gpus = doc["gpus"]
    if not isinstance(gpus, int) or gpus < 1:
        problems.append("gpus must be a positive integer")
        gpus = 1
    duration = float(doc["duration_s"])
    warmup = float(doc.get("warmup_s", 0.1 * duration))
    cooldown = float(doc.get("cooldown_s", 0.1 * duration))
    if duration <= 0:
        problems.append("duration_s must be > 0")
    if warmup < 0 or cooldown < 0 or duration <= warmup + cooldown:
        problems.append("need duration_s > warmup_s + cooldown_s >= 0")
    seed = doc["seed"]
    if not isinstance(seed, int):
        problems.append("seed must be an integer")
        seed = 0
    net_raw = doc.get("network")
    if net_raw is not None:
        network = NetworkModel(
            _build_delay_dist(net_raw.get("d_ctrl", {}), problems, "d_ctrl"),
            _build_delay_dist(net_raw.get("d_data", {}), problems, "d_data"))
        # the planning bounds come from the distributions
        policy = replace(policy, d_ctrl_ns=network.plan_ctrl_ns,
                         d_data_ns=network.plan_data_ns)
    else:
        network = NetworkModel.constant(policy.d_ctrl_ns, policy.d_data_ns)
    if not problems and workload.popularity == "explicit" \
            and len(workload.weights) != len(models):
        problems.append(f"workload: {len(workload.weights)} weights for "
                        f"{len(models)} models")
    if problems:
        raise ScenarioError(problems)
    return Scenario(name=name, models=models, gpu_count=gpus, policy=policy,
                    workload=workload, duration_s=duration, warmup_s=warmup,
                    cooldown_s=cooldown, seed=seed, network=network)


def load_scenario(path_or_name: str) -> Scenario:
    """Load a scenario YAML from a path or by bundled name."""
    if path_or_name in BUNDLED_SCENARIOS:
        root = resources.files("batchsym") / "scenarios"
        text = (root / f"{path_or_name}.yaml").read_text()
        base_dir = str(root)
        name = path_or_name
    else:
        if not os.path.exists(path_or_name):
            raise FileNotFoundError(f"no such scenario: {path_or_name}")
        with open(path_or_name, "r", encoding="utf-8") as fh:
            text = fh.read()
        base_dir = os.path.dirname(os.path.abspath(path_or_name))
        name = os.path.splitext(os.path.basename(path_or_name))[0]
    doc = yaml.safe_load(text)
    return scenario_from_dict(doc, name=name, base_dir=base_dir)


def run_scenario(scenario: Scenario, record_trace: bool = False,
                 check_invariants: bool = False):
    """Validate-and-run helper: one deterministic simulation."""
    from .simulator import Engine

    engine = Engine(list(scenario.models), scenario.gpu_count,
                    scenario.policy, scenario.network, seed=scenario.seed,
                    record_trace=record_trace,
                    check_invariants=check_invariants)
    return engine.run(scenario.workload, scenario.duration_s, scenario.seed)
