"""Subgroup audit against equity gates and equalized-odds post-processing."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .cohort.dataset import Cohort
from .cohort.schema import (
    AGE_GROUP_SLOTS,
    AGE_GROUPS,
    FEATURE_INDEX,
    GENDERS,
    INSURANCE_SLOTS,
    INSURANCES,
    MALE_SLOT,
    RACE_SLOTS,
    RACES,
    age_groups,
)
from .errors import ValidationError
from .evaluation import auc_roc, confusion_at_threshold, roc_points

logger = logging.getLogger(__name__)

DIMENSIONS: dict[str, tuple[str, ...]] = {
    "race": RACES,
    "age_group": AGE_GROUPS,
    "gender": GENDERS,
    "insurance": INSURANCES,
}
DEFAULT_GATES = (0.05, 0.10)
MIN_GROUP_SIZE = 50
PASS = "pass"
TRIGGER = "trigger_postprocess"


class SubgroupKey(NamedTuple):
    dimension: str
    label: str

    def __str__(self) -> str:
        return f"{self.dimension}={self.label}"


def _one_hot_labels(X: np.ndarray, slots: slice, labels, dim: str, ids) -> np.ndarray:
    block = X[:, slots]
    ok = (np.sum(block == 1.0, axis=1) == 1) & (np.sum(block == 0.0, axis=1) == block.shape[1] - 1)
    if not ok.all():
        i = int(np.argmin(ok))
        who = f"admission_id {ids[i]}" if ids is not None else f"row {i}"
        raise ValidationError({dim: f"{who} has no single {dim} category"})
    return np.argmax(block, axis=1)


def group_codes(X: np.ndarray, ids=None) -> dict[str, np.ndarray]:
    """Category index per record for each dimension."""
    X = np.atleast_2d(X)
    age = X[:, FEATURE_INDEX["age"]]
    if np.isnan(age).any():
        raise ValidationError({"age": "age is required for subgroup slicing"})
    male = X[:, MALE_SLOT]
    if not np.isin(male, (0.0, 1.0)).all():
        i = int(np.argmax(~np.isin(male, (0.0, 1.0))))
        raise ValidationError({"gender": f"row {i if ids is None else ids[i]} has an invalid gender flag"})
    codes = {
        "race": _one_hot_labels(X, RACE_SLOTS, RACES, "race", ids),
        "age_group": age_groups(age),
        "gender": np.where(male == 1.0, GENDERS.index("male"), GENDERS.index("female")),
        "insurance": _one_hot_labels(X, INSURANCE_SLOTS, INSURANCES, "insurance", ids),
    }
    encoded_age = _one_hot_labels(X, AGE_GROUP_SLOTS, AGE_GROUPS, "age_group", ids)
    if (encoded_age != codes["age_group"]).any():
        i = int(np.argmax(encoded_age != codes["age_group"]))
        raise ValidationError({"age_group": f"row {i if ids is None else ids[i]}: age group disagrees with age"})
    return codes


def subgroup_masks(X: np.ndarray, ids=None) -> dict[SubgroupKey, np.ndarray]:
    codes = group_codes(X, ids)
    return {
        SubgroupKey(dim, label): codes[dim] == k for dim, labels in DIMENSIONS.items() for k, label in enumerate(labels)
    }


def slice_subgroups(cohort: Cohort) -> dict[SubgroupKey, np.ndarray]:
    """Index set of every subgroup; each record lands in one group per dimension."""
    return {key: np.flatnonzero(m) for key, m in subgroup_masks(cohort.X, cohort.ids).items()}


def group_labels(cohort_or_X, dimension: str) -> np.ndarray:
    X = cohort_or_X.X if isinstance(cohort_or_X, Cohort) else cohort_or_X
    codes = group_codes(X)[dimension]
    return np.asarray(DIMENSIONS[dimension], dtype=object)[codes]


@dataclass
class GroupMetrics:
    dimension: str
    group: str
    n: int
    n_positive: int
    auc: float | None
    fnr: float | None
    ppv: float | None
    evaluable: bool
    note: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class DimensionGaps:
    dimension: str
    delta_auc: float | None
    delta_fnr: float | None
    evaluable_groups: int
    passes: bool | None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class FairnessAudit:
    threshold: float
    gates: tuple[float, float]
    min_group_size: int
    groups: list[GroupMetrics]
    gaps: list[DimensionGaps]
    verdict: str
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        dims = []
        for g in self.gaps:
            dims.append(
                {
                    "dimension": g.dimension,
                    "rows": [m.to_dict() for m in self.groups if m.dimension == g.dimension],
                    "gaps": g.to_dict(),
                }
            )
        return {
            "threshold": self.threshold,
            "gates": {"delta_auc": self.gates[0], "delta_fnr": self.gates[1]},
            "min_group_size": self.min_group_size,
            "dimensions": dims,
            "exclusions": [f"{m.dimension}={m.group}: {m.note}" for m in self.groups if not m.evaluable],
            "verdict": self.verdict,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dimension", "group", "n", "auc", "fnr", "ppv", "evaluable"])
            for m in self.groups:
                w.writerow(
                    [m.dimension, m.group, m.n]
                    + ["" if v is None else repr(float(v)) for v in (m.auc, m.fnr, m.ppv)]
                    + [int(m.evaluable)]
                )


def dimension_passes(delta_auc: float, delta_fnr: float, gates=DEFAULT_GATES) -> bool:
    return delta_auc <= gates[0] and delta_fnr <= gates[1]


def verdict_from_gaps(gaps: list[DimensionGaps]) -> str:
    """Pass iff every dimension with a verdict passes; excluded ones are ignored."""
    return PASS if all(g.passes is not False for g in gaps) else TRIGGER


def _spread(values: list[float]) -> float:
    return float(max(values) - min(values))


def audit_fairness(
    scores,
    labels,
    groups: dict,
    threshold: float,
    gates: tuple[float, float] = DEFAULT_GATES,
    min_group_size: int = MIN_GROUP_SIZE,
) -> FairnessAudit:
    """Per-group AUC/FNR/PPV at one global threshold and per-dimension gaps.

    ``groups`` maps ``SubgroupKey`` (or ``(dimension, label)``) to an index
    array or boolean mask.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int8)
    rows: list[GroupMetrics] = []
    warnings: list[str] = []
    for key, index in groups.items():
        dim, label = key
        idx = np.flatnonzero(index) if np.asarray(index).dtype == bool else np.asarray(index, dtype=np.int64)
        s, y = scores[idx], labels[idx]
        n, n_pos = len(idx), int(y.sum())
        note = ""
        if n < min_group_size:
            note = f"n={n} below minimum {min_group_size}"
        elif n_pos == 0 or n_pos == n:
            note = "single class"
        if note:
            conf = confusion_at_threshold(s, y, t=threshold) if n else None
            rows.append(
                GroupMetrics(dim, label, n, n_pos, None, conf.fnr if conf else None, conf.ppv if conf else None, False, note)
            )
            continue
        conf = confusion_at_threshold(s, y, t=threshold)
        rows.append(GroupMetrics(dim, label, n, n_pos, auc_roc(s, y), conf.fnr, conf.ppv, True))

    gaps = []
    for dim in dict.fromkeys(m.dimension for m in rows):
        ok = [m for m in rows if m.dimension == dim and m.evaluable]
        if len(ok) < 2:
            msg = f"{dim}: fewer than 2 evaluable groups; excluded from the verdict"
            logger.warning(msg)
            warnings.append(msg)
            gaps.append(DimensionGaps(dim, None, None, len(ok), None))
            continue
        d_auc = _spread([m.auc for m in ok])
        d_fnr = _spread([m.fnr for m in ok])
        gaps.append(DimensionGaps(dim, d_auc, d_fnr, len(ok), dimension_passes(d_auc, d_fnr, gates)))
    return FairnessAudit(
        threshold=float(threshold),
        gates=tuple(gates),
        min_group_size=min_group_size,
        groups=rows,
        gaps=gaps,
        verdict=verdict_from_gaps(gaps),
        warnings=warnings,
    )


# --- equalized odds -------------------------------------------------------


def upper_hull(fpr: np.ndarray, tpr: np.ndarray) -> np.ndarray:
    """Indices of the upper convex hull of ROC points, left to right."""
    order = np.lexsort((-tpr, fpr))
    hull: list[int] = []
    for i in order:
        if hull and fpr[hull[-1]] == fpr[i]:
            continue  # same fpr, lower tpr
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (fpr[b] - fpr[a]) * (tpr[i] - tpr[a]) - (tpr[b] - tpr[a]) * (fpr[i] - fpr[a])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(int(i))
    return np.asarray(hull)


@dataclass
class GroupROC:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    hull: np.ndarray

    @classmethod
    def fit(cls, scores, labels) -> "GroupROC":
        fpr, tpr, thr = roc_points(scores, labels)
        return cls(fpr, tpr, thr, upper_hull(fpr, tpr))

    def hull_at(self, f) -> np.ndarray:
        return np.interp(f, self.fpr[self.hull], self.tpr[self.hull])


@dataclass
class GroupRule:
    t_lo: float
    t_hi: float
    p: float
    fpr: float
    tpr: float

    def to_dict(self) -> dict:
        enc = lambda t: None if np.isinf(t) else float(t)  # noqa: E731
        return {"t_lo": enc(self.t_lo), "t_hi": enc(self.t_hi), "p": self.p, "fpr": self.fpr, "tpr": self.tpr}

    @classmethod
    def from_dict(cls, d: dict) -> "GroupRule":
        dec = lambda t: np.inf if t is None else float(t)  # noqa: E731
        return cls(dec(d["t_lo"]), dec(d["t_hi"]), float(d["p"]), float(d["fpr"]), float(d["tpr"]))


@dataclass
class EqualizedOddsPolicy:
    """Per-group threshold pairs; threshold +inf means "never positive"."""

    dimension: str
    rules: dict[str, GroupRule]
    target_fpr: float
    target_tpr: float
    mode: str = "randomized"
    global_threshold: float | None = None
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "mode": self.mode,
            "target": {"fpr": self.target_fpr, "tpr": self.target_tpr},
            "global_threshold": self.global_threshold,
            "groups": {g: r.to_dict() for g, r in self.rules.items()},
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EqualizedOddsPolicy":
        return cls(
            dimension=d["dimension"],
            rules={g: GroupRule.from_dict(r) for g, r in d["groups"].items()},
            target_fpr=float(d["target"]["fpr"]),
            target_tpr=float(d["target"]["tpr"]),
            mode=d.get("mode", "randomized"),
            global_threshold=d.get("global_threshold"),
            warnings=list(d.get("warnings", [])),
        )


def _crossings(a: GroupROC, b: GroupROC) -> list[float]:
    xs = np.union1d(a.fpr[a.hull], b.fpr[b.hull])
    diff = a.hull_at(xs) - b.hull_at(xs)
    out = []
    for i in np.flatnonzero(np.sign(diff[:-1]) * np.sign(diff[1:]) < 0):
        x0, x1, d0, d1 = xs[i], xs[i + 1], diff[i], diff[i + 1]
        out.append(float(x0 + (x1 - x0) * d0 / (d0 - d1)))
    return out


def equalized_target(rocs: list[GroupROC]) -> tuple[float, float]:
    """Point maximizing TPR - FPR under every group's hull (ties: largest FPR)."""
    cands = set()
    for r in rocs:
        cands.update(float(f) for f in r.fpr[r.hull])
    for i in range(len(rocs)):
        for j in range(i + 1, len(rocs)):
            cands.update(_crossings(rocs[i], rocs[j]))
    xs = np.array(sorted(cands))
    floor = np.min([r.hull_at(xs) for r in rocs], axis=0)
    gain = floor - xs
    best = np.flatnonzero(gain == gain.max())[-1]
    return float(xs[best]), float(floor[best])


def _nearest_on_segments(ax, ay, bx, by, px, py):
    """Closest point on each segment A-B to P: (distance^2, lambda toward B)."""
    dx, dy = bx - ax, by - ay
    len2 = dx * dx + dy * dy
    with np.errstate(invalid="ignore", divide="ignore"):
        lam = np.where(len2 > 0, ((px - ax) * dx + (py - ay) * dy) / len2, 0.0)
    lam = np.clip(lam, 0.0, 1.0)
    qx, qy = ax + lam * dx, ay + lam * dy
    return (qx - px) ** 2 + (qy - py) ** 2, lam


def realize_point(roc: GroupROC, f: float, t: float, mode: str = "randomized") -> GroupRule:
    """Mix two threshold rules of one group to land on (or nearest to) (f, t).

    Randomized mode searches segments from every hull vertex to every ROC
    point (which include the hull edges and the fans from both corners).
    """
    if mode == "deterministic":
        d2 = (roc.fpr - f) ** 2 + (roc.tpr - t) ** 2
        i = int(np.argmin(d2))
        th = float(roc.thresholds[i])
        return GroupRule(th, th, 1.0, float(roc.fpr[i]), float(roc.tpr[i]))
    best = (np.inf, 0, 0, 0.0)
    for v in roc.hull:
        d2, lam = _nearest_on_segments(roc.fpr[v], roc.tpr[v], roc.fpr, roc.tpr, f, t)
        j = int(np.argmin(d2))
        if d2[j] < best[0] - 1e-18:
            best = (float(d2[j]), int(v), j, float(lam[j]))
    _, a, b, lam = best
    if lam == 0.0 or a == b:
        b, lam = a, 0.0
    ta, tb = float(roc.thresholds[a]), float(roc.thresholds[b])
    fx = (1 - lam) * roc.fpr[a] + lam * roc.fpr[b]
    ty = (1 - lam) * roc.tpr[a] + lam * roc.tpr[b]
    # rule A is used with probability 1 - lam
    if ta <= tb:
        return GroupRule(ta, tb, 1.0 - lam, float(fx), float(ty))
    return GroupRule(tb, ta, lam, float(fx), float(ty))


def fit_equalized_odds(
    scores,
    labels,
    groups,
    dimension: str = "group",
    mode: str = "randomized",
    global_threshold: float | None = None,
) -> EqualizedOddsPolicy:
    """Per-group rules reaching a common (FPR, TPR) operating point.

    ``groups`` is an array with one group label per record.
    """
    if mode not in ("randomized", "deterministic"):
        raise ValueError("mode must be 'randomized' or 'deterministic'")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int8)
    groups = np.asarray(groups)
    names = sorted(set(groups.tolist()), key=str)
    rocs = {}
    for g in names:
        m = groups == g
        y = labels[m]
        if y.min() == y.max():
            raise ValidationError({str(g): "group needs both classes to fit equalized odds"})
        rocs[g] = GroupROC.fit(scores[m], y)
    f, t = equalized_target(list(rocs.values()))
    warnings = []
    if t - f <= 0:
        warnings.append("group hulls share only the chance diagonal; falling back to the (0,0)-(1,1) chord")
        logger.warning(warnings[-1])
    rules = {str(g): realize_point(rocs[g], f, t, mode) for g in names}
    return EqualizedOddsPolicy(
        dimension=dimension,
        rules=rules,
        target_fpr=f,
        target_tpr=t,
        mode=mode,
        global_threshold=global_threshold,
        warnings=warnings,
    )


def record_uniform(seed: int, record_id) -> float:
    """Deterministic U[0, 1) draw for one (seed, record id) pair."""
    digest = hashlib.blake2b(f"{seed}:{record_id}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2.0**64


@dataclass
class Decisions:
    positive: np.ndarray
    fallback: np.ndarray


def apply_equalized_odds(policy: EqualizedOddsPolicy, scores, groups, record_ids, rng_seed: int = 0) -> Decisions:
    """Binary decisions; unknown groups use the global threshold and are flagged."""
    scores = np.atleast_1d(np.asarray(scores, dtype=np.float64))
    groups = np.atleast_1d(np.asarray(groups))
    record_ids = np.atleast_1d(np.asarray(record_ids))
    n = len(scores)
    if not len(groups) == len(record_ids) == n:
        raise ValueError("scores, groups and record_ids must align")
    positive = np.zeros(n, dtype=bool)
    fallback = np.zeros(n, dtype=bool)
    for i in range(n):
        rule = policy.rules.get(str(groups[i]))
        if rule is None:
            fallback[i] = True
            if policy.global_threshold is None:
                raise ValidationError({"group": f"unknown group {groups[i]!r} and no global threshold"})
            positive[i] = scores[i] >= policy.global_threshold
            continue
        if policy.mode == "deterministic" or rule.p >= 1.0:
            t = rule.t_lo
        elif rule.p <= 0.0:
            t = rule.t_hi
        else:
            t = rule.t_lo if record_uniform(rng_seed, record_ids[i]) < rule.p else rule.t_hi
        positive[i] = scores[i] >= t
    if fallback.any():
        logger.warning("%d records fell back to the global threshold (unknown group)", int(fallback.sum()))
    return Decisions(positive, fallback)


def group_rates(decisions, labels, groups) -> dict[str, tuple[float, float]]:
    """(TPR, FPR) of binary decisions per group."""
    decisions = np.asarray(decisions, dtype=bool)
    labels = np.asarray(labels).astype(bool)
    groups = np.asarray(groups)
    out = {}
    for g in sorted(set(groups.tolist()), key=str):
        m = groups == g
        y, d = labels[m], decisions[m]
        out[str(g)] = (float(d[y].mean()), float(d[~y].mean()))
    return out
