"""Feature-distribution drift (KL) and rolling prediction-mean drift."""

from __future__ import annotations

import json
import math
import os
import threading
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cohort.schema import FEATURE_NAMES, NUMERIC_FIELDS, N_FEATURES
from .errors import ConfigurationError

EPSILON = 1e-6
KL_THRESHOLD = 0.05
DEFAULT_WINDOW = 1000
N_NUMERIC = len(NUMERIC_FIELDS)


def smooth(counts: np.ndarray, eps: float = EPSILON) -> np.ndarray:
    """Laplace-smoothed probabilities from bin counts."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    freq = counts / total if total > 0 else np.full(len(counts), 1.0 / len(counts))
    return (freq + eps) / (1.0 + eps * len(counts))


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats for two probability vectors with full support."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("histograms must have the same bins")
    if np.array_equal(p, q):
        return 0.0
    m = p > 0
    return max(float(np.sum(p[m] * np.log(p[m] / q[m]))), 0.0)


@dataclass
class FeatureBins:
    """Interior cut points (numeric) or category values (binary)."""

    name: str
    kind: str
    edges: np.ndarray
    probs: np.ndarray
    constant: bool = False

    @property
    def n_bins(self) -> int:
        return len(self.edges) + 1 if self.kind == "numeric" else len(self.edges)

    def bin_counts(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)
        v = v[~np.isnan(v)]
        if self.kind == "numeric":
            idx = np.searchsorted(self.edges, v, side="right")
        else:
            idx = np.searchsorted(self.edges, v)
            ok = (idx < len(self.edges)) & (self.edges[np.minimum(idx, len(self.edges) - 1)] == v)
            idx = idx[ok]
        return np.bincount(idx, minlength=self.n_bins)[: self.n_bins]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "edges": [float(e) for e in self.edges],
            "probs": [float(p) for p in self.probs],
            "constant": bool(self.constant),
        }


@dataclass
class DriftReference:
    features: list[FeatureBins]
    mu: float
    sigma: float
    window: int = DEFAULT_WINDOW
    epsilon: float = EPSILON
    kl_threshold: float = KL_THRESHOLD
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mu": self.mu,
            "sigma": self.sigma,
            "window": self.window,
            "epsilon": self.epsilon,
            "kl_threshold": self.kl_threshold,
            "features": [f.to_dict() for f in self.features],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DriftReference":
        feats = [
            FeatureBins(f["name"], f["kind"], np.asarray(f["edges"], dtype=np.float64), np.asarray(f["probs"]), bool(f["constant"]))
            for f in d["features"]
        ]
        return cls(
            feats, float(d["mu"]), float(d["sigma"]), int(d["window"]), float(d["epsilon"]), float(d["kl_threshold"]),
            d.get("metadata", {}),
        )

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "DriftReference":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def decile_edges(values: np.ndarray) -> np.ndarray:
    v = values[~np.isnan(values)]
    if len(v) == 0 or v.min() == v.max():
        return np.zeros(0)
    return np.unique(np.quantile(v, np.arange(1, 10) / 10.0))


def fit_reference(
    train_X: np.ndarray, val_predictions, window: int = DEFAULT_WINDOW, eps: float = EPSILON
) -> DriftReference:
    train_X = np.atleast_2d(np.asarray(train_X, dtype=np.float64))
    preds = np.asarray(val_predictions, dtype=np.float64).ravel()
    if train_X.shape[0] == 0 or train_X.shape[1] != N_FEATURES or len(preds) == 0:
        raise ConfigurationError(f"drift reference needs non-empty (n, {N_FEATURES}) features and predictions")
    if window < 1:
        raise ConfigurationError("window must be >= 1")
    feats = []
    constants = []
    for j, name in enumerate(FEATURE_NAMES):
        col = train_X[:, j]
        if j < N_NUMERIC:
            edges = decile_edges(col)
            fb = FeatureBins(name, "numeric", edges, np.zeros(0), constant=len(edges) == 0)
        else:
            obs = col[~np.isnan(col)]
            constant = len(obs) == 0 or obs.min() == obs.max()
            fb = FeatureBins(name, "categorical", np.array([0.0, 1.0]), np.zeros(0), constant=constant)
        fb.probs = smooth(fb.bin_counts(col), eps)
        if fb.constant:
            constants.append(name)
        feats.append(fb)
    mu = math.fsum(preds.tolist()) / len(preds)
    sigma = math.sqrt(math.fsum(((preds - mu) ** 2).tolist()) / len(preds))
    return DriftReference(
        features=feats,
        mu=mu,
        sigma=sigma,
        window=int(window),
        epsilon=eps,
        metadata={"constant_features": constants, "n_train": int(train_X.shape[0]), "n_predictions": int(len(preds))},
    )


def feature_kl(ref: DriftReference, batch: np.ndarray) -> dict[str, float]:
    """KL(current || reference) per feature, both sides smoothed."""
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    out = {}
    for j, fb in enumerate(ref.features):
        if fb.constant and fb.kind == "numeric":
            out[fb.name] = 0.0
            continue
        out[fb.name] = kl_divergence(smooth(fb.bin_counts(batch[:, j]), ref.epsilon), fb.probs)
    return out


@dataclass
class DriftVerdict:
    kl: dict[str, float]
    kl_alerts: list[str]
    window_mean: float | None
    prediction_alert: bool
    fill: int
    window: int
    gate: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def prediction_drift_check(ref: DriftReference, window_values) -> tuple[float | None, bool, int]:
    """(window mean, alert, fill) for the most recent ``ref.window`` values."""
    values = list(window_values)[-ref.window :]
    fill = len(values)
    if fill == 0:
        return None, False, 0
    mean = math.fsum(values) / fill
    if fill < ref.window:
        return mean, False, fill
    gap = abs(mean - ref.mu)
    if ref.sigma == 0.0:
        return mean, gap > 0.0, fill
    return mean, gap > 2.0 * ref.sigma / math.sqrt(ref.window), fill


def drift_verdict(ref: DriftReference, batch=None, window_values=()) -> DriftVerdict:
    kl = feature_kl(ref, batch) if batch is not None and len(batch) else {}
    mean, alert, fill = prediction_drift_check(ref, window_values)
    return DriftVerdict(
        kl=kl,
        kl_alerts=[k for k, v in kl.items() if v > ref.kl_threshold],
        window_mean=mean,
        prediction_alert=alert,
        fill=fill,
        window=ref.window,
        gate=2.0 * ref.sigma / math.sqrt(ref.window),
    )


class DriftMonitor:
    """Thread-safe rolling prediction window plus feature bin counts."""

    def __init__(self, ref: DriftReference):
        self.ref = ref
        self._lock = threading.Lock()
        self._window: deque[float] = deque(maxlen=ref.window)
        self._counts = [np.zeros(fb.n_bins, dtype=np.int64) for fb in ref.features]
        self._observed = 0

    def observe(self, x: np.ndarray, prediction: float) -> None:
        x = np.asarray(x, dtype=np.float64)
        bins = [fb.bin_counts(x[j : j + 1]) for j, fb in enumerate(self.ref.features)]
        with self._lock:
            self._window.append(float(prediction))
            for acc, b in zip(self._counts, bins):
                acc += b
            self._observed += 1

    def snapshot(self) -> tuple[list[float], list[np.ndarray], int]:
        with self._lock:
            return list(self._window), [c.copy() for c in self._counts], self._observed

    def verdict(self) -> DriftVerdict:
        window, counts, observed = self.snapshot()
        kl = {}
        if observed:
            for fb, c in zip(self.ref.features, counts):
                kl[fb.name] = 0.0 if (fb.constant and fb.kind == "numeric") else kl_divergence(
                    smooth(c, self.ref.epsilon), fb.probs
                )
        mean, alert, fill = prediction_drift_check(self.ref, window)
        return DriftVerdict(
            kl=kl,
            kl_alerts=[k for k, v in kl.items() if v > self.ref.kl_threshold],
            window_mean=mean,
            prediction_alert=alert,
            fill=fill,
            window=self.ref.window,
            gate=2.0 * self.ref.sigma / math.sqrt(self.ref.window),
        )
