"""Population importance, per-patient waterfalls and the beeswarm table."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ..cohort.schema import FEATURE_NAMES, N_FEATURES
from .shap import ShapExplanation

DIRECTION_CUTOFF = 0.1
BEESWARM_COLUMNS = ("patient_id", "feature", "value", "phi")


@dataclass
class GlobalImportance:
    mean_abs_phi: np.ndarray
    ranking: list[int]
    direction: list[str]
    correlation: np.ndarray
    feature_names: tuple[str, ...] = FEATURE_NAMES

    def rows(self) -> list[dict]:
        return [
            {
                "rank": r + 1,
                "feature": self.feature_names[j],
                "mean_abs_phi": float(self.mean_abs_phi[j]),
                "direction": self.direction[j],
            }
            for r, j in enumerate(self.ranking)
        ]

    def to_dict(self) -> dict:
        return {"features": self.rows()}


def _phi_matrix(explanations) -> np.ndarray:
    if isinstance(explanations, np.ndarray):
        phi = np.atleast_2d(explanations)
    else:
        explanations = list(explanations)
        if not explanations:
            raise ValueError("no explanations to aggregate")
        phi = np.vstack([e.phi for e in explanations])
    if phi.size == 0 or phi.shape[1] != N_FEATURES:
        raise ValueError(f"explanations must be non-empty with {N_FEATURES} attributions each")
    return phi


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    ok = ~(np.isnan(a) | np.isnan(b))
    a, b = a[ok], b[ok]
    if len(a) < 2:
        return 0.0
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a @ a) * (b @ b))
    return float(a @ b / denom) if denom > 0 else 0.0


def global_importance(explanations, values) -> GlobalImportance:
    """Mean |phi| per feature, ranked; direction from corr(value, phi)."""
    phi = _phi_matrix(explanations)
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if values.shape != phi.shape:
        raise ValueError(f"values shape {values.shape} does not match attributions {phi.shape}")
    mean_abs = np.abs(phi).mean(axis=0)
    # stable sort on the negated value keeps ties in feature order
    ranking = [int(j) for j in np.argsort(-mean_abs, kind="stable")]
    corr = np.array([_pearson(values[:, j], phi[:, j]) for j in range(N_FEATURES)])
    direction = [
        "varies" if abs(r) < DIRECTION_CUTOFF else ("increases risk" if r > 0 else "decreases risk") for r in corr
    ]
    return GlobalImportance(mean_abs_phi=mean_abs, ranking=ranking, direction=direction, correlation=corr)


@dataclass
class WaterfallEntry:
    feature: str
    value: float | None
    phi: float

    def to_dict(self) -> dict:
        return {"feature": self.feature, "value": self.value, "phi": self.phi}


@dataclass
class WaterfallReport:
    base_value: float
    entries: list[WaterfallEntry]
    remainder: float
    margin: float
    probability: float
    remainder_features: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "base_value": self.base_value,
            "contributions": [e.to_dict() for e in self.entries],
            "remainder_phi": self.remainder,
            "remainder_features": list(self.remainder_features),
            "margin": self.margin,
            "probability": self.probability,
        }


def waterfall_report(explanation: ShapExplanation, record, k: int = 10, feature_names=FEATURE_NAMES) -> WaterfallReport:
    """Top-k attributions by magnitude plus one aggregated remainder row.

    The remainder is defined as ``margin - base - sum(listed)`` so the three
    parts reconstruct the margin exactly in floating point.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    k = min(k, N_FEATURES)
    values = np.asarray(record, dtype=np.float64)
    phi = np.asarray(explanation.phi, dtype=np.float64)
    order = np.argsort(-np.abs(phi), kind="stable")
    top, rest = order[:k], order[k:]
    entries = [
        WaterfallEntry(
            feature=feature_names[j],
            value=None if np.isnan(values[j]) else float(values[j]),
            phi=float(phi[j]),
        )
        for j in top
    ]
    listed = explanation.base_value + sum(e.phi for e in entries)
    remainder = float(explanation.margin - listed) if len(rest) else 0.0
    return WaterfallReport(
        base_value=float(explanation.base_value),
        entries=entries,
        remainder=remainder,
        margin=float(explanation.margin),
        probability=float(expit(explanation.margin)),
        remainder_features=[feature_names[j] for j in rest],
    )


def beeswarm_rows(explanations, values, patient_ids=None, importance: GlobalImportance | None = None):
    phi = _phi_matrix(explanations)
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if values.shape != phi.shape:
        raise ValueError(f"{len(values)} value rows for {len(phi)} explanations")
    n = len(phi)
    ids = np.arange(1, n + 1) if patient_ids is None else np.asarray(patient_ids)
    if len(ids) != n:
        raise ValueError("patient_ids must align with explanations")
    if importance is None:
        importance = global_importance(phi, values)
    for j in importance.ranking:
        for i in range(n):
            v = values[i, j]
            yield (int(ids[i]), FEATURE_NAMES[j], None if np.isnan(v) else float(v), float(phi[i, j]))


def beeswarm_export(explanations, values, path: str | os.PathLike, patient_ids=None) -> int:
    """Long-format CSV, features in global-importance order. Returns row count."""
    from ..cohort.io import format_number

    count = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BEESWARM_COLUMNS)
        for pid, name, value, phi in beeswarm_rows(explanations, values, patient_ids):
            w.writerow([pid, name, "" if value is None else format_number(value), repr(phi)])
            count += 1
    return count
