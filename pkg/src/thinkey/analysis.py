"""Quantitative models and run metrics: QoS, efficiency, scalability,
speedup, and trace summaries.

Estimators are deliberately plain: arithmetic mean, nearest-rank
percentiles, sample standard deviation. Report rows use a fixed column
order so reruns are byte-comparable.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass
from typing import Iterable, Sequence

REPORT_COLUMNS = ["shard_count", "tps", "mean_confirm_ms", "p95_confirm_ms",
                  "cross_ratio", "epoch_ms"]


@dataclass(frozen=True)
class PerfSample:
    window: tuple[float, float]  # (t_start, t_end) in simulated ms
    requests_completed: int
    confirmation_times: tuple[float, ...]

    def __post_init__(self):
        if len(self.confirmation_times) != self.requests_completed:
            raise ValueError("one confirmation time per completed request")
        if self.window[1] <= self.window[0]:
            raise ValueError("window must have positive duration")


def qos(mean_confirm_ms: float, target_confirm_ms: float) -> float:
    """Normalized quality of service: target / (actual + target), in (0, 1]."""
    if mean_confirm_ms < 0 or target_confirm_ms <= 0:
        raise ValueError("confirmation times must be nonnegative, target positive")
    return target_confirm_ms / (mean_confirm_ms + target_confirm_ms)


def efficiency(throughput: float, qos_value: float, cost: float) -> float:
    """Performance per cost unit: T * Q / S."""
    if cost <= 0:
        raise ValueError("cost must be positive")
    return throughput * qos_value / cost


def scalability(f_scaled: float, f_base: float) -> float:
    """Efficiency ratio of a scaled configuration over the base one."""
    if f_base <= 0:
        raise ValueError("base efficiency must be positive")
    return f_scaled / f_base


def is_perfectly_scalable(psi: float) -> bool:
    return psi >= 1.0


def node_gain(r: float, f: str) -> float:
    """Per-node performance gain from r budget units: sqrt(r) or ln(r)."""
    if f == "sqrt":
        return math.sqrt(r)
    if f == "log":
        value = math.log(r)
        if value <= 0:
            raise ValueError("log gain needs r > 1 (r >= e keeps the gain >= 1)")
        return value
    raise ValueError(f"unknown node-scaling function {f!r}")


def speedup(p: float, k: float, r: float, f: str = "sqrt") -> float:
    """System speedup from k budget units, r of them per node.

    1 / ((1-p)/f(r) + p*r/(f(r)*k)) where p is the parallel workload
    fraction. Fully parallel with r=1 gives k; fully serial gives f(r).
    """
    if not 0 <= p <= 1:
        raise ValueError("parallel fraction must be in [0, 1]")
    if not 1 <= r <= k:
        raise ValueError("need 1 <= r <= k")
    gain = node_gain(r, f)
    return 1.0 / ((1.0 - p) / gain + (p * r) / (gain * k))


def speedup_scalability(p: float, k: float, r: float, f: str = "sqrt") -> float:
    """The scalability approximation speedup/k that accompanies the formula."""
    return speedup(p, k, r, f) / k


def percentile(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile; q in (0, 100]."""
    if not values:
        raise ValueError("empty input")
    ordered = sorted(values)
    rank = max(1, math.ceil(q / 100.0 * len(ordered)))
    return ordered[rank - 1]


@dataclass(frozen=True)
class Summary:
    tps: float
    requests: int
    mean_confirm_ms: float
    p50_confirm_ms: float
    p95_confirm_ms: float


def summarize(samples: Sequence[PerfSample]) -> Summary:
    """Aggregate windows: requests per second plus confirmation percentiles."""
    if not samples:
        raise ValueError("no samples")
    t_start = min(s.window[0] for s in samples)
    t_end = max(s.window[1] for s in samples)
    requests = sum(s.requests_completed for s in samples)
    times = [t for s in samples for t in s.confirmation_times]
    mean_ms = statistics.fmean(times) if times else 0.0
    return Summary(
        tps=requests / (t_end - t_start) * 1000.0,
        requests=requests,
        mean_confirm_ms=mean_ms,
        p50_confirm_ms=percentile(times, 50) if times else 0.0,
        p95_confirm_ms=percentile(times, 95) if times else 0.0,
    )


def block_time_stats(commit_times: Sequence[float]) -> dict:
    """Mean/std/extremes of the gaps between consecutive block commits."""
    gaps = [b - a for a, b in zip(commit_times, commit_times[1:])]
    if not gaps:
        raise ValueError("need at least two commits")
    mean = statistics.fmean(gaps)
    std = statistics.pstdev(gaps) if len(gaps) > 1 else 0.0
    return {"mean_ms": mean, "std_ms": std, "min_ms": min(gaps), "max_ms": max(gaps),
            "count": len(gaps)}


def report_rows_to_csv(rows: Iterable[dict]) -> str:
    """Serialize report rows with the fixed column order."""
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({col: _fmt(row.get(col)) for col in REPORT_COLUMNS})
    return buffer.getvalue()


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)
