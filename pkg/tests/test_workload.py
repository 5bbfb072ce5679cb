import numpy as np
import pytest
from scipy import stats as sps

from batchsym.workload import (WorkloadError, WorkloadSpec, generate_arrivals,
                               load_replay_trace, popularity_weights,
                               substream)

MODELS = ["m0", "m1", "m2"]


def test_deterministic_streams():
    spec = WorkloadSpec(arrival="poisson", rate_rps=500.0)
    a1 = generate_arrivals(spec, MODELS, 2.0, seed=7)
    a2 = generate_arrivals(spec, MODELS, 2.0, seed=7)
    assert np.array_equal(a1[0], a2[0]) and np.array_equal(a1[1], a2[1])
    a3 = generate_arrivals(spec, MODELS, 2.0, seed=8)
    assert not np.array_equal(a1[0], a3[0])


def test_empirical_rate_within_one_percent():
    for spec in (WorkloadSpec(arrival="poisson", rate_rps=2000.0),
                 WorkloadSpec(arrival="gamma", rate_rps=2000.0,
                              gamma_shape=0.3)):
        ticks, _ = generate_arrivals(spec, MODELS, 60.0, seed=123)
        rate = len(ticks) / 60.0
        assert abs(rate - 2000.0) / 2000.0 < 0.01


def test_gamma_shape_one_is_exponential():
    # same family: gap samples from gamma(1.0) pass a KS test against the
    # exponential distribution at the generated empirical scale
    spec = WorkloadSpec(arrival="gamma", rate_rps=1000.0, gamma_shape=1.0)
    ticks, _ = generate_arrivals(spec, MODELS, 30.0, seed=5)
    gaps = np.diff(ticks) / 1e9
    ks = sps.kstest(gaps, "expon", args=(0, gaps.mean()))
    assert ks.pvalue > 0.01


def test_gamma_burstier_than_poisson():
    pois = WorkloadSpec(arrival="poisson", rate_rps=1000.0)
    burst = WorkloadSpec(arrival="gamma", rate_rps=1000.0, gamma_shape=0.1)
    tp, _ = generate_arrivals(pois, MODELS, 30.0, seed=5)
    tb, _ = generate_arrivals(burst, MODELS, 30.0, seed=5)
    cv_p = np.std(np.diff(tp)) / np.mean(np.diff(tp))
    cv_b = np.std(np.diff(tb)) / np.mean(np.diff(tb))
    assert cv_b > 2.0 * cv_p  # shape 0.1 has cv ~ sqrt(10)


def test_popularity_weights():
    spec = WorkloadSpec(arrival="poisson", rate_rps=1.0, popularity="zipf",
                        zipf_shape=0.9)
    w = popularity_weights(spec, 4)
    assert w[0] > w[1] > w[2] > w[3]
    assert w[1] == pytest.approx(w[0] / 2 ** 0.9)
    expl = WorkloadSpec(arrival="poisson", rate_rps=1.0,
                        popularity="explicit", weights=(1.0, 3.0))
    assert popularity_weights(expl, 2)[1] == pytest.approx(0.75)


def test_piecewise_segments():
    spec = WorkloadSpec(arrival="piecewise",
                        segments=((0.0, 100.0), (1.0, 1000.0)))
    ticks, _ = generate_arrivals(spec, MODELS, 2.0, seed=3)
    first = np.count_nonzero(ticks < 1_000_000_000)
    second = len(ticks) - first
    assert second > 5 * first


def test_replay_roundtrip(tmp_path):
    p = tmp_path / "trace.csv"
    p.write_text("arrival_ns,model_name\n0,m0\n500,m2\n1500,m1\n")
    ticks, idx = load_replay_trace(str(p), MODELS)
    assert list(ticks) == [0, 500, 1500]
    assert list(idx) == [0, 2, 1]


def test_replay_errors_carry_line_numbers(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("arrival_ns,model_name\n0,m0\nxyz,m1\n")
    with pytest.raises(WorkloadError, match=":3"):
        load_replay_trace(str(p), MODELS)
    p.write_text("arrival_ns,model_name\n0,nope\n")
    with pytest.raises(WorkloadError, match="unknown model"):
        load_replay_trace(str(p), MODELS)
    p.write_text("arrival_ns,model_name\n100,m0\n50,m1\n")
    with pytest.raises(WorkloadError, match="not sorted"):
        load_replay_trace(str(p), MODELS)


def test_spec_validation():
    with pytest.raises(WorkloadError):
        WorkloadSpec(arrival="poisson", rate_rps=0.0)
    with pytest.raises(WorkloadError):
        WorkloadSpec(arrival="gamma", rate_rps=1.0, gamma_shape=0.0)
    with pytest.raises(WorkloadError):
        WorkloadSpec(arrival="replay")
    with pytest.raises(WorkloadError):
        WorkloadSpec(arrival="poisson", rate_rps=1.0, popularity="zipf",
                     zipf_shape=0.0)


def test_substreams_independent():
    # drawing from one stream never perturbs another
    a = substream(1, 0).random(4)
    substream(1, 1).random(1000)
    b = substream(1, 0).random(4)
    assert np.array_equal(a, b)
