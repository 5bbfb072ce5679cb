"""Time base: integer nanosecond ticks.

All internal time points and durations are non-negative integers counting
nanoseconds. Config files speak milliseconds (or microseconds for network
delays); conversion happens exactly once at ingestion so event ordering is
exact integer arithmetic with no float drift.
"""

NS_PER_US = 1_000
NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000

# Sentinels for time comparisons. TIME_INF marks "unreachable"; NEG_INF is
# the identity for max() floors. Both stay well inside int64 range so they
# survive arithmetic with real tick values.
TIME_INF = 1 << 62
NEG_INF = -(1 << 62)


def ms_to_ns(ms: float) -> int:
    return int(round(ms * NS_PER_MS))


def us_to_ns(us: float) -> int:
    return int(round(us * NS_PER_US))


def s_to_ns(s: float) -> int:
    return int(round(s * NS_PER_S))


def ns_to_ms(ns: int) -> float:
    return ns / NS_PER_MS


def ns_to_s(ns: int) -> float:
    return ns / NS_PER_S
