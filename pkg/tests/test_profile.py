import pytest
from hypothesis import given, strategies as st

from batchsym.profile import (InvalidBatchSize, LatencyProfile, ModelSpec,
                              ProfileError, exec_latency, load_model_zoo,
                              max_feasible_batch, schedulable_window)
from batchsym.units import ms_to_ns

UNIT = LatencyProfile.linear(1.0, 5.0, max_batch=16)  # l(b) = b + 5 ms
RESNET50 = LatencyProfile.linear(1.053, 5.072)
INCEPTIONRESNET = LatencyProfile.linear(5.090, 18.368)


def test_exec_latency_values():
    assert exec_latency(UNIT, 4) == ms_to_ns(9.0)
    assert exec_latency(RESNET50, 16) == ms_to_ns(21.920)
    assert exec_latency(LatencyProfile.linear(0.054, 10.546), 1) == ms_to_ns(10.600)


def test_exec_latency_range_errors():
    with pytest.raises(InvalidBatchSize):
        exec_latency(UNIT, 0)
    with pytest.raises(InvalidBatchSize):
        exec_latency(UNIT, 17)


def test_schedulable_window_values():
    w = schedulable_window(UNIT, ms_to_ns(12.0), 4)
    assert (w.frontrun, w.latest) == (ms_to_ns(2.0), ms_to_ns(3.0))
    flat = LatencyProfile.linear(0.0, 7.0, max_batch=8)
    w = schedulable_window(flat, ms_to_ns(20.0), 3)
    assert w.frontrun == w.latest == ms_to_ns(13.0)
    w = schedulable_window(RESNET50, ms_to_ns(25.0), 7)
    assert (w.frontrun, w.latest) == (ms_to_ns(11.504), ms_to_ns(12.557))


def test_window_collapses_at_max_batch():
    w = schedulable_window(UNIT, ms_to_ns(30.0), 16)
    assert w.frontrun == w.latest


def test_max_feasible_batch_values():
    assert max_feasible_batch(UNIT, ms_to_ns(12.0)) == 7
    assert max_feasible_batch(RESNET50, ms_to_ns(12.5)) == 7
    assert max_feasible_batch(INCEPTIONRESNET, ms_to_ns(62.222)) == 8
    assert max_feasible_batch(UNIT, ms_to_ns(5.0)) == 0


@given(st.integers(1, 15))
def test_window_width_equals_marginal_latency(b):
    d = ms_to_ns(100.0)
    w = schedulable_window(UNIT, d, b)
    assert w.latest - w.frontrun == UNIT.latency_grown(b) - UNIT.latency(b)
    if b < UNIT.max_batch:
        assert w.latest - w.frontrun == UNIT.alpha_ns
    assert w.frontrun <= w.latest


@given(st.integers(0, 20), st.integers(0, 20))
def test_max_feasible_batch_monotonicity(o1, o2):
    slo = ms_to_ns(25.0)
    lo, hi = sorted((ms_to_ns(float(o1)), ms_to_ns(float(o2))))
    assert max_feasible_batch(RESNET50, slo, hi) <= \
        max_feasible_batch(RESNET50, slo, lo)
    assert max_feasible_batch(RESNET50, slo + ms_to_ns(5.0), lo) >= \
        max_feasible_batch(RESNET50, slo, lo)


def test_latency_monotone_checked_at_load():
    prof = LatencyProfile.table({1: 5.0, 4: 8.0, 8: 12.0})
    assert all(a <= b for a, b in zip(prof.lat_ns, prof.lat_ns[1:]))
    with pytest.raises(ProfileError):
        LatencyProfile.table({1: 5.0, 4: 3.0})


def test_table_interpolation():
    prof = LatencyProfile.table({1: 1.0, 5: 5.0})
    assert [prof.latency(b) for b in range(1, 6)] == \
        [ms_to_ns(float(v)) for v in (1, 2, 3, 4, 5)]
    assert prof.max_batch == 5


def test_table_from_list():
    prof = LatencyProfile.table([2.0, 3.0, 4.5])
    assert prof.latency(2) == ms_to_ns(3.0)
    assert prof.max_batch == 3


def test_linear_validation():
    with pytest.raises(ProfileError):
        LatencyProfile.linear(-1.0, 5.0)
    with pytest.raises(ProfileError):
        LatencyProfile.linear(1.0, 0.0)


def test_model_spec_requires_feasible_singleton():
    with pytest.raises(ProfileError):
        ModelSpec(0, "bad", UNIT, ms_to_ns(5.0))  # l(1) = 6 ms > SLO


def test_bundled_zoos():
    ti = load_model_zoo("1080ti")
    a100 = load_model_zoo("a100")
    assert len(ti) == 35
    assert len(a100) == 37
    r50 = next(z for z in ti if z.name == "ResNet50")
    assert (r50.alpha_ms, r50.beta_ms, r50.slo_ms) == (2.050, 5.378, 27)
    d121 = next(z for z in a100 if z.name == "DenseNet121")
    assert (d121.alpha_ms, d121.beta_ms, d121.slo_ms) == (0.054, 10.546, 21)


def test_zoo_file_errors(tmp_path):
    p = tmp_path / "zoo.csv"
    p.write_text("name,alpha\nfoo,1\n")
    with pytest.raises(ProfileError):
        load_model_zoo(str(p))
