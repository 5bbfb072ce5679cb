"""Synthetic and replayed request streams.

Inter-arrival gaps are drawn i.i.d. (exponential for poisson, gamma with
scale 1/(rate*shape) for gamma so the mean rate stays fixed across
burstiness sweeps), converted to integer nanoseconds, and accumulated in
integer arithmetic. Each random concern (arrival gaps, model popularity,
network jitter) draws from its own counter-based substream, so adding or
removing one stream never perturbs another.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .units import s_to_ns

STREAM_ARRIVALS = 0
STREAM_POPULARITY = 1
STREAM_NETWORK = 2

_CHUNK = 8192


class WorkloadError(ValueError):
    pass


def substream(seed: int, stream: int) -> np.random.Generator:
    """Named Philox substream: independent per (seed, stream)."""
    key = np.random.SeedSequence(
        entropy=seed, spawn_key=(stream,)).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class WorkloadSpec:
    arrival: str = "poisson"  # poisson | gamma | replay | piecewise
    rate_rps: float = 0.0
    gamma_shape: float = 1.0
    trace_path: str | None = None
    segments: tuple[tuple[float, float], ...] = ()  # (start_s, rate_rps)
    popularity: str = "uniform"  # uniform | zipf | explicit
    zipf_shape: float = 0.0
    weights: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.arrival not in ("poisson", "gamma", "replay", "piecewise"):
            raise WorkloadError(f"unknown arrival kind {self.arrival!r}")
        if self.arrival in ("poisson", "gamma") and self.rate_rps <= 0:
            raise WorkloadError("arrival rate must be > 0")
        if self.arrival == "gamma" and self.gamma_shape <= 0:
            raise WorkloadError("gamma shape must be > 0")
        if self.arrival == "replay" and not self.trace_path:
            raise WorkloadError("replay workload needs a trace file")
        if self.arrival == "piecewise":
            if not self.segments:
                raise WorkloadError("piecewise workload needs segments")
            starts = [s for s, _ in self.segments]
            if starts != sorted(starts) or starts[0] != 0.0:
                raise WorkloadError("segments must start at 0 and ascend")
            if any(r <= 0 for _, r in self.segments):
                raise WorkloadError("segment rates must be > 0")
        if self.popularity not in ("uniform", "zipf", "explicit"):
            raise WorkloadError(f"unknown popularity {self.popularity!r}")
        if self.popularity == "zipf" and self.zipf_shape <= 0:
            raise WorkloadError("zipf shape must be > 0")
        if self.popularity == "explicit":
            if not self.weights or any(w < 0 for w in self.weights):
                raise WorkloadError("explicit popularity needs weights >= 0")
            if sum(self.weights) <= 0:
                raise WorkloadError("explicit weights sum to zero")

    def with_rate(self, rate_rps: float) -> "WorkloadSpec":
        return WorkloadSpec(self.arrival, rate_rps, self.gamma_shape,
                            self.trace_path, self.segments, self.popularity,
                            self.zipf_shape, self.weights)


def popularity_weights(spec: WorkloadSpec, n_models: int) -> np.ndarray:
    if spec.popularity == "uniform":
        w = np.ones(n_models)
    elif spec.popularity == "zipf":
        w = 1.0 / np.arange(1, n_models + 1, dtype=np.float64) ** spec.zipf_shape
    else:
        if len(spec.weights) != n_models:
            raise WorkloadError(
                f"{len(spec.weights)} weights for {n_models} models")
        w = np.asarray(spec.weights, dtype=np.float64)
    return w / w.sum()


def _gap_sampler(spec: WorkloadSpec, rng: np.random.Generator, rate: float):
    if spec.arrival == "poisson" or (spec.arrival == "piecewise"):
        return lambda n: rng.exponential(1.0 / rate, size=n)
    k = spec.gamma_shape
    return lambda n: rng.gamma(k, 1.0 / (rate * k), size=n)


def _generate_gaps(spec: WorkloadSpec, rng, rate: float, start_ns: int,
                   end_ns: int) -> np.ndarray:
    """Arrival ticks in [start_ns, end_ns) at the given mean rate."""
    sample = _gap_sampler(spec, rng, rate)
    out = []
    t = start_ns
    while t < end_ns:
        gaps = np.rint(sample(_CHUNK) * 1e9).astype(np.int64)
        ticks = t + np.cumsum(gaps)
        t = int(ticks[-1])
        out.append(ticks)
    ticks = np.concatenate(out)
    return ticks[ticks < end_ns]


def generate_arrivals(spec: WorkloadSpec, model_names: list[str],
                      duration_s: float, seed: int
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Time-ordered request stream: (arrival ticks, model indices).

    Deterministic for a fixed (spec, duration, seed).
    """
    if spec.arrival == "replay":
        return load_replay_trace(spec.trace_path, model_names)
    end_ns = s_to_ns(duration_s)
    rng = substream(seed, STREAM_ARRIVALS)
    if spec.arrival == "piecewise":
        parts = []
        bounds = [s_to_ns(s) for s, _ in spec.segments] + [end_ns]
        for (seg_start, rate), lo, hi in zip(spec.segments, bounds, bounds[1:]):
            if lo >= hi:
                continue
            parts.append(_generate_gaps(spec, rng, rate, lo, hi))
        ticks = np.concatenate(parts) if parts else np.empty(0, np.int64)
    else:
        ticks = _generate_gaps(spec, rng, spec.rate_rps, 0, end_ns)
    n = len(ticks)
    if n == 0:
        return ticks, np.empty(0, np.int64)
    p = popularity_weights(spec, len(model_names))
    rng_pop = substream(seed, STREAM_POPULARITY)
    idx = rng_pop.choice(len(model_names), size=n, p=p).astype(np.int64)
    return ticks, idx


def load_replay_trace(path: str, model_names: list[str]
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Replay trace CSV: arrival_ns,model_name (header required)."""
    name_to_idx = {n: i for i, n in enumerate(model_names)}
    ticks: list[int] = []
    idx: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["arrival_ns", "model_name"]:
            raise WorkloadError(f"{path}:1: expected header arrival_ns,model_name")
        prev = -1
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise WorkloadError(f"{path}:{lineno}: expected 2 fields")
            try:
                t = int(row[0])
            except ValueError:
                raise WorkloadError(
                    f"{path}:{lineno}: bad arrival_ns {row[0]!r}") from None
            if t < prev:
                raise WorkloadError(f"{path}:{lineno}: arrivals not sorted")
            if row[1] not in name_to_idx:
                raise WorkloadError(
                    f"{path}:{lineno}: unknown model {row[1]!r}")
            prev = t
            ticks.append(t)
            idx.append(name_to_idx[row[1]])
    return np.asarray(ticks, dtype=np.int64), np.asarray(idx, dtype=np.int64)
