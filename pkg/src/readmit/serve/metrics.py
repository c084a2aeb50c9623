"""In-process metrics registry with text exposition (format 0.0.4)."""

from __future__ import annotations

import math
import re
import threading
from dataclasses import dataclass, field

LATENCY_BUCKETS_MS = (1.0, 2.5, 5.0, 10.0, 25.0, 50.0, 100.0, 200.0, 500.0, 1000.0)
CONTENT_TYPE = "text/plain; version=0.0.4; charset=utf-8"


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "+Inf" if v > 0 else "-Inf"
    if math.isnan(v):
        return "NaN"
    if float(v).is_integer() and abs(v) < 2**53:
        return str(int(v))
    return repr(float(v))


def _escape(v: str) -> str:
    return v.replace("\\", "\\\\").replace("\n", "\\n").replace('"', '\\"')


def _labels(pairs) -> str:
    if not pairs:
        return ""
    return "{" + ",".join(f'{k}="{_escape(str(v))}"' for k, v in pairs) + "}"


@dataclass
class HistogramSnapshot:
    bounds: tuple[float, ...]
    counts: list[int]  # per bucket, last entry is the +Inf overflow
    total: float
    count: int

    def cumulative(self) -> list[int]:
        out, c = [], 0
        for k in self.counts:
            c += k
            out.append(c)
        return out


@dataclass
class MetricsSnapshot:
    requests: dict[tuple[str, str], int]
    latency: dict[str, HistogramSnapshot]
    gauges: dict[tuple[str, tuple], float] = field(default_factory=dict)

    @property
    def total_requests(self) -> int:
        return sum(self.requests.values())

    def status_count(self, predicate) -> int:
        return sum(v for (_, status), v in self.requests.items() if predicate(int(status)))


class MetricsRegistry:
    """Counters, per-endpoint latency histograms and gauges behind one lock."""

    def __init__(self, buckets=LATENCY_BUCKETS_MS):
        self.buckets = tuple(float(b) for b in buckets)
        self._lock = threading.Lock()
        self._requests: dict[tuple[str, str], int] = {}
        self._hist: dict[str, list] = {}
        self._gauges: dict[tuple[str, tuple], float] = {}
        self._gauge_help: dict[str, str] = {}

    def observe_request(self, endpoint: str, status: int, latency_ms: float) -> None:
        # first bucket whose upper bound holds the observation
        k = len(self.buckets)
        for i, b in enumerate(self.buckets):
            if latency_ms <= b:
                k = i
                break
        with self._lock:
            key = (endpoint, str(int(status)))
            self._requests[key] = self._requests.get(key, 0) + 1
            h = self._hist.get(endpoint)
            if h is None:
                h = self._hist[endpoint] = [[0] * (len(self.buckets) + 1), 0.0, 0]
            h[0][k] += 1
            h[1] += latency_ms
            h[2] += 1

    def set_gauge(self, name: str, value: float, labels: dict | None = None, help: str = "") -> None:
        key = (name, tuple(sorted((labels or {}).items())))
        with self._lock:
            self._gauges[key] = float(value)
            if help:
                self._gauge_help[name] = help

    def snapshot(self) -> MetricsSnapshot:
        with self._lock:
            return MetricsSnapshot(
                requests=dict(self._requests),
                latency={e: HistogramSnapshot(self.buckets, list(h[0]), h[1], h[2]) for e, h in self._hist.items()},
                gauges=dict(self._gauges),
            )

    def render(self) -> str:
        snap = self.snapshot()
        lines = [
            "# HELP requests_total Requests handled, by endpoint and HTTP status.",
            "# TYPE requests_total counter",
        ]
        for (endpoint, status), v in sorted(snap.requests.items()):
            lines.append(f"requests_total{_labels([('endpoint', endpoint), ('status', status)])} {v}")
        lines += [
            "# HELP request_latency_ms Request handling latency in milliseconds.",
            "# TYPE request_latency_ms histogram",
        ]
        for endpoint, h in sorted(snap.latency.items()):
            cum = h.cumulative()
            for bound, c in zip(list(h.bounds) + [math.inf], cum):
                lines.append(f"request_latency_ms_bucket{_labels([('endpoint', endpoint), ('le', _fmt(bound))])} {c}")
            lines.append(f"request_latency_ms_sum{_labels([('endpoint', endpoint)])} {_fmt(h.total)}")
            lines.append(f"request_latency_ms_count{_labels([('endpoint', endpoint)])} {h.count}")
        names = sorted({name for name, _ in snap.gauges})
        for name in names:
            lines.append(f"# HELP {name} {self._gauge_help.get(name, name.replace('_', ' '))}")
            lines.append(f"# TYPE {name} gauge")
            for (n, labels), v in sorted(snap.gauges.items()):
                if n == name:
                    lines.append(f"{name}{_labels(labels)} {_fmt(v)}")
        return "\n".join(lines) + "\n"


_NAME = r"[a-zA-Z_:][a-zA-Z0-9_:]*"
_LABEL = r'[a-zA-Z_][a-zA-Z0-9_]*="(?:[^"\\\n]|\\[\\"n])*"'
_VALUE = r"(?:[+-]?(?:\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|[+-]?Inf|NaN)"
SAMPLE_RE = re.compile(rf"^({_NAME})(\{{(?:{_LABEL}(?:,{_LABEL})*)?,?\}})?[ \t]+({_VALUE})(?:[ \t]+-?\d+)?$")
LABEL_RE = re.compile(r'([a-zA-Z_][a-zA-Z0-9_]*)="((?:[^"\\\n]|\\[\\"n])*)"')
META_RE = re.compile(rf"^#[ \t]+(HELP|TYPE)[ \t]+({_NAME})(?:[ \t]+(.*))?$")


def parse_exposition(text: str) -> list[tuple[str, dict[str, str], float]]:
    """Strictly parse exposition text into (name, labels, value) samples."""
    samples = []
    types: dict[str, str] = {}
    for n, line in enumerate(text.split("\n"), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            m = META_RE.match(line)
            if m and m.group(1) == "TYPE":
                if m.group(3) not in ("counter", "gauge", "histogram", "summary", "untyped"):
                    raise ValueError(f"line {n}: unknown metric type {m.group(3)!r}")
                if m.group(2) in types:
                    raise ValueError(f"line {n}: duplicate TYPE for {m.group(2)}")
                types[m.group(2)] = m.group(3)
            continue
        m = SAMPLE_RE.match(line)
        if not m:
            raise ValueError(f"line {n}: not a valid sample: {line!r}")
        labels = dict(LABEL_RE.findall(m.group(2) or ""))
        samples.append((m.group(1), labels, float(m.group(3).replace("Inf", "inf"))))
    return samples


def snapshot_from_exposition(text: str) -> MetricsSnapshot:
    """Rebuild request counters and histograms from scraped text."""
    requests: dict[tuple[str, str], int] = {}
    cum: dict[str, dict[float, int]] = {}
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    gauges: dict[tuple[str, tuple], float] = {}
    for name, labels, value in parse_exposition(text):
        if name == "requests_total":
            requests[(labels["endpoint"], labels["status"])] = int(value)
        elif name == "request_latency_ms_bucket":
            cum.setdefault(labels["endpoint"], {})[float(labels["le"].replace("Inf", "inf"))] = int(value)
        elif name == "request_latency_ms_sum":
            sums[labels["endpoint"]] = value
        elif name == "request_latency_ms_count":
            counts[labels["endpoint"]] = int(value)
        else:
            gauges[(name, tuple(sorted(labels.items())))] = value
    latency = {}
    for endpoint, by_bound in cum.items():
        bounds = sorted(by_bound)
        c = [by_bound[b] for b in bounds]
        per = [c[0]] + [c[i] - c[i - 1] for i in range(1, len(c))]
        latency[endpoint] = HistogramSnapshot(tuple(b for b in bounds if not math.isinf(b)), per, sums[endpoint], counts[endpoint])
    return MetricsSnapshot(requests, latency, gauges)
