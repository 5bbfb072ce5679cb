import numpy as np
import pytest

from batchsym.network import NetworkModel
from batchsym.profile import LatencyProfile, ModelSpec
from batchsym.scheduler import PolicyConfig
from batchsym.simulator import Engine
from batchsym.units import ms_to_ns


def make_models(*rows, max_batch=16):
    """rows: (alpha_ms, beta_ms, slo_ms) per model."""
    return [ModelSpec(i, f"m{i}", LatencyProfile.linear(a, b, max_batch),
                      ms_to_ns(s))
            for i, (a, b, s) in enumerate(rows)]


def make_engine(rows, gpus, policy=None, max_batch=16, network=None, **kw):
    policy = policy or PolicyConfig("deferred")
    return Engine(make_models(*rows, max_batch=max_batch), gpus, policy,
                  network or NetworkModel.zero(), **kw)


def drive(engine, arrivals_ms, duration_s=1.0):
    """arrivals_ms: list of (t_ms, model_idx)."""
    ticks = np.array([ms_to_ns(t) for t, _ in arrivals_ms], dtype=np.int64)
    midx = np.array([m for _, m in arrivals_ms], dtype=np.int64)
    return engine.run_stream(ticks, midx, duration_s)


def dispatches(result):
    return [t for t in result.trace if t[1] == "dispatch"]


def drops(result):
    return [t for t in result.trace if t[1] == "drop"]


@pytest.fixture
def unit_policy():
    return PolicyConfig("deferred")
