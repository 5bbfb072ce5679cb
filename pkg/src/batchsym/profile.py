"""Latency profiles, model specs, and schedulable-window arithmetic.

A latency profile maps batch size b to execution duration. Linear profiles
use a per-item cost plus a fixed invocation cost; table profiles carry
measured durations. Both kinds precompute a dense monotone lookup so the
scheduler hot path is a tuple index.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources

from .units import ms_to_ns

DEFAULT_MAX_BATCH = 256

BUNDLED_ZOOS = {
    "1080ti": "model_zoo_1080ti.csv",
    "a100": "model_zoo_a100.csv",
}


class ProfileError(ValueError):
    """Raised for malformed profile parameters or zoo files."""


class InvalidBatchSize(ValueError):
    """Batch size outside [1, max_batch]."""


@dataclass(frozen=True)
class LatencyProfile:
    kind: str  # "linear" | "table"
    max_batch: int
    alpha_ns: int  # per-item cost; 0 for table profiles
    beta_ns: int   # fixed invocation cost; 0 for table profiles
    lat_ns: tuple[int, ...]  # lat_ns[b-1] = duration of batch size b

    @staticmethod
    def linear(alpha_ms: float, beta_ms: float,
               max_batch: int = DEFAULT_MAX_BATCH) -> "LatencyProfile":
        alpha = ms_to_ns(alpha_ms)
        beta = ms_to_ns(beta_ms)
        if alpha < 0:
            raise ProfileError(f"alpha must be >= 0, got {alpha_ms}")
        if beta <= 0:
            raise ProfileError(f"beta must be > 0, got {beta_ms}")
        if max_batch < 1:
            raise ProfileError(f"max_batch must be >= 1, got {max_batch}")
        lat = tuple(alpha * b + beta for b in range(1, max_batch + 1))
        return LatencyProfile("linear", max_batch, alpha, beta, lat)

    @staticmethod
    def table(durations_ms: dict[int, float] | list[float],
              max_batch: int | None = None) -> "LatencyProfile":
        """Build from measured durations.

        Accepts either a list (index 0 is batch size 1) or a sparse
        {batch_size: ms} mapping. Gaps are filled by linear interpolation
        between the nearest measured sizes; decreasing tables are rejected.
        """
        if isinstance(durations_ms, dict):
            points = sorted(durations_ms.items())
        else:
            points = list(enumerate(durations_ms, start=1))
        if not points:
            raise ProfileError("empty latency table")
        if points[0][0] != 1:
            raise ProfileError("latency table must start at batch size 1")
        for b, ms in points:
            if b < 1 or ms <= 0:
                raise ProfileError(f"bad table entry ({b}, {ms})")
        cap = max_batch if max_batch is not None else points[-1][0]
        if cap < points[-1][0]:
            points = [(b, ms) for b, ms in points if b <= cap]
        ns_points = [(b, ms_to_ns(ms)) for b, ms in points]
        lat: list[int] = []
        for (b0, v0), (b1, v1) in zip(ns_points, ns_points[1:]):
            if v1 < v0:
                raise ProfileError(
                    f"latency table decreases between b={b0} and b={b1}")
            for b in range(b0, b1):
                lat.append(v0 + (v1 - v0) * (b - b0) // (b1 - b0))
        lat.append(ns_points[-1][1])
        # extend a short table flat up to an explicit larger cap
        while len(lat) < cap:
            lat.append(lat[-1])
        return LatencyProfile("table", cap, 0, 0, tuple(lat))

    def latency(self, b: int) -> int:
        if b < 1 or b > self.max_batch:
            raise InvalidBatchSize(
                f"batch size {b} outside [1, {self.max_batch}]")
        return self.lat_ns[b - 1]

    def latency_grown(self, b: int) -> int:
        """Duration of a one-larger batch; a full batch gains nothing by
        waiting, so this collapses to latency(max_batch) at the cap."""
        if b < 1 or b > self.max_batch:
            raise InvalidBatchSize(
                f"batch size {b} outside [1, {self.max_batch}]")
        return self.lat_ns[b] if b < self.max_batch else self.lat_ns[-1]


@dataclass(frozen=True)
class Window:
    """Dispatch interval for a batch: holding the batch past `frontrun`
    cannot grow it without breaking the deadline; starting after `latest`
    breaks the deadline outright."""
    frontrun: int
    latest: int


@dataclass(frozen=True)
class ModelSpec:
    model_id: int
    name: str
    profile: LatencyProfile
    slo_ns: int

    def __post_init__(self) -> None:
        if self.slo_ns <= self.profile.lat_ns[0]:
            raise ProfileError(
                f"model {self.name}: SLO {self.slo_ns}ns does not admit even "
                f"a single-request batch ({self.profile.lat_ns[0]}ns)")


def exec_latency(profile: LatencyProfile, b: int) -> int:
    return profile.latency(b)


def schedulable_window(profile: LatencyProfile, deadline: int, b: int) -> Window:
    return Window(frontrun=deadline - profile.latency_grown(b),
                  latest=deadline - profile.latency(b))


def max_feasible_batch(profile: LatencyProfile, slo_ns: int,
                       start_offset_ns: int = 0) -> int:
    """Largest b with start_offset + latency(b) <= slo; 0 if none fits."""
    budget = slo_ns - start_offset_ns
    lat = profile.lat_ns
    if not lat or lat[0] > budget:
        return 0
    lo, hi = 1, profile.max_batch  # invariant: lat[lo-1] <= budget
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if lat[mid - 1] <= budget:
            lo = mid
        else:
            hi = mid - 1
    return lo


@dataclass(frozen=True)
class ZooModel:
    name: str
    alpha_ms: float
    beta_ms: float
    slo_ms: float


def parse_model_zoo(text: str, source: str = "<zoo>") -> list[ZooModel]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != ["name", "alpha_ms", "beta_ms", "slo_ms"]:
        raise ProfileError(f"{source}: expected header name,alpha_ms,beta_ms,slo_ms")
    rows = []
    seen = set()
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise ProfileError(f"{source}:{lineno}: expected 4 fields")
        name, a, b, s = row
        try:
            entry = ZooModel(name, float(a), float(b), float(s))
        except ValueError as exc:
            raise ProfileError(f"{source}:{lineno}: {exc}") from None
        if name in seen:
            raise ProfileError(f"{source}:{lineno}: duplicate model {name}")
        seen.add(name)
        rows.append(entry)
    if not rows:
        raise ProfileError(f"{source}: no models")
    return rows


def load_model_zoo(name_or_path: str) -> list[ZooModel]:
    """Load a model zoo CSV, either a bundled name ('1080ti', 'a100') or a
    filesystem path."""
    if name_or_path in BUNDLED_ZOOS:
        text = (resources.files("batchsym") / "data" /
                BUNDLED_ZOOS[name_or_path]).read_text()
        return parse_model_zoo(text, source=name_or_path)
    with open(name_or_path, "r", encoding="utf-8") as fh:
        return parse_model_zoo(fh.read(), source=name_or_path)
