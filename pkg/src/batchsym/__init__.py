"""Deadline-aware batch scheduling for GPU inference clusters.

The package couples a deterministic discrete-event simulator with a
deferred-dispatch batch scheduler (plus eager and timeout policy variants),
analytical throughput oracles, goodput search and flat-top verification,
an autoscaling advisor, and a sub-cluster partitioning solver.
"""

from .metrics import (analytical_solution, autoscale_advice, flat_top_check,
                      goodput_search, stats_for)
from .profile import (LatencyProfile, ModelSpec, Window, exec_latency,
                      load_model_zoo, max_feasible_batch, schedulable_window)
from .scenario import Scenario, load_scenario, run_scenario
from .scheduler import PolicyConfig

__version__ = "0.1.0"

__all__ = [
    "LatencyProfile", "ModelSpec", "Window", "PolicyConfig", "Scenario",
    "exec_latency", "schedulable_window", "max_feasible_batch",
    "load_model_zoo", "load_scenario", "run_scenario", "stats_for",
    "analytical_solution", "goodput_search", "flat_top_check",
    "autoscale_advice", "__version__",
]
