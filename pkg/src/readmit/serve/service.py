"""Framework-free request handling; the HTTP layer only moves bytes.

Handlers return ``(status, body)`` so they can be exercised directly in
tests and wrapped by any server.
"""

from __future__ import annotations

import math
import os
import time
import uuid
from dataclasses import dataclass, fields

import numpy as np
from scipy.special import expit

from ..cohort.schema import MISSABLE_FIELDS, MISSABLE_SLOTS, PatientRecord, encode_record
from ..config import read_kv_file
from ..drift import DriftMonitor, DriftReference
from ..errors import ConfigurationError, ValidationError
from ..explain import shap_values, waterfall_report
from ..explain.shap import ShapExplanation
from ..model import LinearModel, model_from_dict, predict_margin
from ..model.io import load_model_document
from .metrics import CONTENT_TYPE, MetricsRegistry

DEFAULT_THRESHOLD = 0.2285
DEFAULT_K = 10


@dataclass
class ServeConfig:
    model_path: str | None = None
    threshold: float = DEFAULT_THRESHOLD
    host: str = "127.0.0.1"
    port: int = 8000
    window: int = 1000
    k: int = DEFAULT_K
    drift_reference: str | None = None

    ENV_PREFIX = "READMIT_"

    @classmethod
    def load(cls, path: str | os.PathLike | None = None, env=None, overrides: dict | None = None) -> "ServeConfig":
        """File values, then ``READMIT_*`` environment, then explicit overrides."""
        env = os.environ if env is None else env
        raw: dict[str, object] = {}
        if path:
            raw.update(read_kv_file(path))
        for f in fields(cls):
            key = cls.ENV_PREFIX + f.name.upper()
            if key in env:
                raw[f.name] = env[key]
        raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
        unknown = set(raw) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown serve settings: {sorted(unknown)}")
        cfg = cls()
        try:
            for f in fields(cls):
                if f.name in raw:
                    v = raw[f.name]
                    caster = {"threshold": float, "port": int, "window": int, "k": int}.get(f.name, str)
                    setattr(cfg, f.name, caster(v))
        except ValueError as exc:
            raise ConfigurationError(f"bad serve setting: {exc}") from None
        if not 0.0 <= cfg.threshold <= 1.0:
            raise ConfigurationError("threshold must lie in [0, 1]")
        if cfg.k < 1 or cfg.window < 1:
            raise ConfigurationError("k and window must be >= 1")
        return cfg


class ReadmissionService:
    """Scoring, explanation, health and metrics for one immutable model."""

    def __init__(
        self,
        model=None,
        threshold: float = DEFAULT_THRESHOLD,
        medians: dict[str, float] | None = None,
        k: int = DEFAULT_K,
        drift_reference: DriftReference | None = None,
        registry: MetricsRegistry | None = None,
    ):
        self.model = model
        self.threshold = float(threshold)
        self.k = int(k)
        self.medians = dict(medians) if medians else None
        self.registry = registry or MetricsRegistry()
        self.monitor = DriftMonitor(drift_reference) if drift_reference is not None else None
        self.started = time.monotonic()
        if model is not None:
            self._warm_up()

    @classmethod
    def from_config(cls, cfg: ServeConfig) -> "ReadmissionService":
        model, medians = None, None
        if cfg.model_path:
            doc = load_model_document(cfg.model_path)
            model = model_from_dict(doc)
            medians = doc.get("imputation")
        ref = DriftReference.load(cfg.drift_reference) if cfg.drift_reference else None
        if ref is not None and ref.window != cfg.window:
            ref.window = cfg.window
        return cls(model, cfg.threshold, medians, cfg.k, ref)

    @property
    def model_version(self) -> str | None:
        return None if self.model is None else self.model.model_version

    def _warm_up(self) -> None:
        # compile kernels and build attribution tables before traffic arrives
        x = np.zeros((1, self.model.n_features))
        predict_margin(self.model, x)
        shap_values(self.model, x)

    def _encode(self, body) -> np.ndarray:
        if isinstance(body, dict) and "label" in body:
            raise ValidationError({"label": "labels are not accepted by the scoring API"})
        rec = PatientRecord.from_mapping(body, require_ids=False)
        x = encode_record(rec)
        if self.medians:
            for j, name in zip(MISSABLE_SLOTS, MISSABLE_FIELDS):
                if np.isnan(x[j]):
                    x[j] = self.medians[name]
        elif isinstance(self.model, LinearModel):
            nan = np.isnan(x)
            x[nan] = self.model.means[nan]
        return x

    def _timed(self, endpoint: str, fn, body):
        t0 = time.perf_counter()
        try:
            status, payload = fn(body)
        except ValidationError as exc:
            status, payload = 422, {"detail": exc.errors}
        except Exception as exc:  # noqa: BLE001 - reported as a server error
            status, payload = 500, {"detail": f"internal error: {type(exc).__name__}"}
        self.registry.observe_request(endpoint, status, (time.perf_counter() - t0) * 1000.0)
        return status, payload

    def _score(self, body):
        if self.model is None:
            return 503, {"detail": "model not loaded"}, None, None
        x = self._encode(body)
        margin = float(predict_margin(self.model, x))
        prob = float(expit(margin))
        if self.monitor is not None:
            self.monitor.observe(x, prob)
        out = {
            "probability": prob,
            "risk_flag": prob >= self.threshold,
            "threshold": self.threshold,
            "model_version": self.model_version,
            "request_id": uuid.uuid4().hex,
        }
        return 200, out, x, margin

    def _predict(self, body):
        status, out, _, _ = self._score(body)
        return status, out

    def _explain(self, body):
        status, out, x, margin = self._score(body)
        if status != 200:
            return status, out
        base, phi = shap_values(self.model, x[None, :])
        report = waterfall_report(ShapExplanation(base, phi[0], margin), x, self.k)
        out.update(
            {
                "base_value": report.base_value,
                "margin": margin,
                "contributions": [e.to_dict() for e in report.entries],
                "remainder_phi": report.remainder,
            }
        )
        return 200, out

    def reject(self, endpoint: str, errors: dict) -> tuple[int, dict]:
        """Account for a request rejected before reaching a handler."""
        self.registry.observe_request(endpoint, 422, 0.0)
        return 422, {"detail": errors}

    def handle_predict(self, body) -> tuple[int, dict]:
        return self._timed("predict", self._predict, body)

    def handle_explain(self, body) -> tuple[int, dict]:
        return self._timed("explain", self._explain, body)

    def handle_health(self) -> tuple[int, dict]:
        loaded = self.model is not None
        body = {
            "status": "ok" if loaded else "unavailable",
            "model_loaded": loaded,
            "model_version": self.model_version,
            "uptime_seconds": time.monotonic() - self.started,
        }
        return (200 if loaded else 503), body

    def _refresh_gauges(self) -> None:
        reg = self.registry
        reg.set_gauge("model_loaded", 1.0 if self.model is not None else 0.0, help="Whether a model is loaded.")
        if self.monitor is None:
            return
        v = self.monitor.verdict()
        for name, kl in v.kl.items():
            reg.set_gauge("drift_feature_kl", kl, {"feature": name}, help="KL(current || reference) per feature, nats.")
            reg.set_gauge("drift_feature_alert", float(name in v.kl_alerts), {"feature": name}, help="Feature KL above gate.")
        reg.set_gauge("prediction_window_mean", math.nan if v.window_mean is None else v.window_mean, help="Rolling mean prediction.")
        reg.set_gauge("prediction_window_fill", v.fill, help="Predictions in the rolling window.")
        reg.set_gauge("drift_prediction_alert", float(v.prediction_alert), help="Window mean outside the 2 sigma gate.")

    def render_metrics(self) -> tuple[int, str, str]:
        self._refresh_gauges()
        return 200, self.registry.render(), CONTENT_TYPE
