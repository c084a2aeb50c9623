"""Service-level objective evaluation from a metrics snapshot."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .metrics import HistogramSnapshot, MetricsSnapshot


@dataclass(frozen=True)
class SLOTargets:
    availability: float = 0.999
    p99_latency_ms: float = 200.0
    error_rate: float = 0.001


@dataclass
class SLOSignal:
    name: str
    value: float | None
    target: str
    passed: bool | None


@dataclass
class SLOReport:
    status: str  # "pass", "fail" or "insufficient data"
    availability: float | None
    error_rate: float | None
    p99_predict_ms: float | None
    p99_explain_ms: float | None
    drift_alert: bool
    signals: list[SLOSignal] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    @property
    def failing(self) -> list[str]:
        return [s.name for s in self.signals if s.passed is False]

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "availability": self.availability,
            "error_rate": self.error_rate,
            "p99_predict_ms": self.p99_predict_ms,
            "p99_explain_ms": self.p99_explain_ms,
            "drift_alert": self.drift_alert,
            "signals": [s.__dict__ for s in self.signals],
            "failing": self.failing,
        }


def histogram_quantile(h: HistogramSnapshot, q: float) -> float | None:
    """Linear interpolation inside the first bucket reaching rank q * count.

    Returns +inf when the rank falls in the overflow bucket.
    """
    if h.count == 0:
        return None
    rank = q * h.count
    prev_bound, prev_cum = 0.0, 0
    for bound, cum in zip(list(h.bounds) + [math.inf], h.cumulative()):
        if cum >= rank:
            if math.isinf(bound):
                return math.inf
            in_bucket = cum - prev_cum
            if in_bucket == 0:
                return prev_bound
            return prev_bound + (bound - prev_bound) * (rank - prev_cum) / in_bucket
        prev_bound, prev_cum = bound, cum
    return math.inf


def evaluate_slo(snapshot: MetricsSnapshot, targets: SLOTargets = SLOTargets(), drift_alert: bool | None = None) -> SLOReport:
    """Availability counts only server errors (5xx); client errors are excluded."""
    total = snapshot.total_requests
    if drift_alert is None:
        drift_alert = any(v > 0 for (name, _), v in snapshot.gauges.items() if name.endswith("_alert"))
    if total == 0:
        return SLOReport("insufficient data", None, None, None, None, drift_alert)
    server_errors = snapshot.status_count(lambda s: s >= 500)
    error_rate = server_errors / total
    availability = 1.0 - error_rate
    p99 = {e: histogram_quantile(snapshot.latency[e], 0.99) if e in snapshot.latency else None for e in ("predict", "explain")}
    signals = [
        SLOSignal("availability", availability, f">= {targets.availability}", availability >= targets.availability),
        SLOSignal("error_rate", error_rate, f"<= {targets.error_rate}", error_rate <= targets.error_rate),
    ]
    for e in ("predict", "explain"):
        v = p99[e]
        signals.append(SLOSignal(f"p99_{e}_latency_ms", v, f"<= {targets.p99_latency_ms}", None if v is None else v <= targets.p99_latency_ms))
    signals.append(SLOSignal("drift", float(drift_alert), "no alert", not drift_alert))
    status = "fail" if any(s.passed is False for s in signals) else "pass"
    return SLOReport(status, availability, error_rate, p99["predict"], p99["explain"], drift_alert, signals)
