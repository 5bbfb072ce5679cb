"""Control/data-plane delay modeling.

The scheduler plans against a high-percentile bound of the per-message
delay (so dispatch decisions are made early enough), while actual message
delivery samples from the configured distribution. A dispatch of b requests
costs d_ctrl + d_data * b: one control message plus per-request input
fetches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_PLAN_PERCENTILE = 0.9999


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class DelayDist:
    """Constant or empirical-histogram delay, in ns."""
    kind: str  # "constant" | "histogram"
    value_ns: int = 0
    values_ns: tuple[int, ...] = ()
    weights: tuple[float, ...] = ()
    plan_percentile: float = DEFAULT_PLAN_PERCENTILE
    plan_bound_ns: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        if self.kind == "constant":
            if self.value_ns < 0:
                raise NetworkError("negative constant delay")
            object.__setattr__(self, "plan_bound_ns", self.value_ns)
        elif self.kind == "histogram":
            if not self.values_ns or len(self.values_ns) != len(self.weights):
                raise NetworkError("histogram needs matching values/weights")
            if any(v < 0 for v in self.values_ns) or any(w < 0 for w in self.weights):
                raise NetworkError("histogram bins must be non-negative")
            if sum(self.weights) <= 0:
                raise NetworkError("histogram weights sum to zero")
            order = np.argsort(self.values_ns, kind="stable")
            vals = np.asarray(self.values_ns, dtype=np.int64)[order]
            wts = np.asarray(self.weights, dtype=np.float64)[order]
            cdf = np.cumsum(wts) / wts.sum()
            idx = int(np.searchsorted(cdf, self.plan_percentile, side="left"))
            idx = min(idx, len(vals) - 1)
            object.__setattr__(self, "plan_bound_ns", int(vals[idx]))
        else:
            raise NetworkError(f"unknown delay kind {self.kind!r}")

    @staticmethod
    def constant(value_ns: int) -> "DelayDist":
        return DelayDist("constant", value_ns=value_ns)

    @staticmethod
    def histogram(values_ns, weights, plan_percentile=DEFAULT_PLAN_PERCENTILE) -> "DelayDist":
        return DelayDist("histogram", values_ns=tuple(int(v) for v in values_ns),
                         weights=tuple(float(w) for w in weights),
                         plan_percentile=plan_percentile)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def sampler(self, rng: np.random.Generator):
        """Returns a zero-arg callable drawing one delay in ns."""
        if self.kind == "constant":
            v = self.value_ns
            return lambda: v
        vals = np.asarray(self.values_ns, dtype=np.int64)
        wts = np.asarray(self.weights, dtype=np.float64)
        p = wts / wts.sum()
        return lambda: int(rng.choice(vals, p=p))


@dataclass(frozen=True)
class NetworkModel:
    d_ctrl: DelayDist
    d_data: DelayDist  # per request in the batch

    @staticmethod
    def zero() -> "NetworkModel":
        return NetworkModel(DelayDist.constant(0), DelayDist.constant(0))

    @staticmethod
    def constant(d_ctrl_ns: int, d_data_ns: int) -> "NetworkModel":
        return NetworkModel(DelayDist.constant(d_ctrl_ns),
                            DelayDist.constant(d_data_ns))

    @property
    def plan_ctrl_ns(self) -> int:
        return self.d_ctrl.plan_bound_ns

    @property
    def plan_data_ns(self) -> int:
        return self.d_data.plan_bound_ns

    @property
    def jitterless(self) -> bool:
        return self.d_ctrl.is_constant and self.d_data.is_constant
