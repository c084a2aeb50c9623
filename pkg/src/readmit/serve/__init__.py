from .metrics import LATENCY_BUCKETS_MS, MetricsRegistry, MetricsSnapshot, parse_exposition, snapshot_from_exposition
from .service import DEFAULT_THRESHOLD, ReadmissionService, ServeConfig
from .slo import SLOReport, SLOTargets, evaluate_slo, histogram_quantile

__all__ = [
    "DEFAULT_THRESHOLD",
    "LATENCY_BUCKETS_MS",
    "MetricsRegistry",
    "MetricsSnapshot",
    "ReadmissionService",
    "SLOReport",
    "SLOTargets",
    "ServeConfig",
    "evaluate_slo",
    "histogram_quantile",
    "parse_exposition",
    "snapshot_from_exposition",
]
