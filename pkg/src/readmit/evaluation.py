"""Discrimination, calibration, thresholds and bootstrap intervals.

Every metric takes ``(scores, labels)`` arrays. A record is flagged positive
iff ``score >= threshold`` throughout the package.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import UndefinedMetricError

logger = logging.getLogger(__name__)


@dataclass
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        self.labels = np.asarray(self.labels).ravel().astype(np.int8)
        if len(self.scores) == 0:
            raise ValueError("a scored set needs at least one record")
        if len(self.scores) != len(self.labels):
            raise ValueError(f"{len(self.scores)} scores but {len(self.labels)} labels")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        if not np.isfinite(self.scores).all():
            raise ValueError("scores must be finite")

    def __len__(self) -> int:
        return len(self.scores)

    def take(self, index) -> "ScoredSet":
        return ScoredSet(self.scores[index], self.labels[index])


def _scored(scores, labels) -> ScoredSet:
    return scores if isinstance(scores, ScoredSet) and labels is None else ScoredSet(scores, labels)


def _both_classes(s: ScoredSet, what: str) -> tuple[int, int]:
    pos = int(s.labels.sum())
    neg = len(s) - pos
    if pos == 0 or neg == 0:
        raise UndefinedMetricError(f"{what} needs both classes (positives={pos}, negatives={neg})")
    return pos, neg


def mann_whitney_u2(scores, labels=None) -> tuple[int, int, int]:
    """Twice the Mann-Whitney U (an exact integer), with class counts."""
    s = _scored(scores, labels)
    pos, neg = _both_classes(s, "AUC-ROC")
    uniq, inverse = np.unique(s.scores, return_inverse=True)
    neg_per = np.bincount(inverse[s.labels == 0], minlength=len(uniq)).astype(np.int64)
    neg_below = np.concatenate([[0], np.cumsum(neg_per)[:-1]])
    pos_idx = inverse[s.labels == 1]
    u2 = int(np.sum(2 * neg_below[pos_idx] + neg_per[pos_idx]))
    return u2, pos, neg


def auc_roc(scores, labels=None) -> float:
    """P(random positive outscores random negative), ties counted one half."""
    u2, pos, neg = mann_whitney_u2(scores, labels)
    return u2 / (2 * pos * neg)


def auc_prc(scores, labels=None) -> float:
    """Average precision, walking distinct scores from the top.

    Tied scores enter together: each group's positives are credited with the
    precision reached once the whole group is flagged.
    """
    s = _scored(scores, labels)
    total_pos = int(s.labels.sum())
    if total_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive")
    uniq, inverse = np.unique(-s.scores, return_inverse=True)
    pos_per = np.bincount(inverse, weights=s.labels, minlength=len(uniq))
    all_per = np.bincount(inverse, minlength=len(uniq))
    tp = np.cumsum(pos_per)
    flagged = np.cumsum(all_per)
    return float(np.sum(pos_per * (tp / flagged)) / total_pos)


def brier_score(scores, labels=None) -> float:
    s = _scored(scores, labels)
    if (s.scores < 0).any() or (s.scores > 1).any():
        raise ValueError("Brier score needs probabilities in [0, 1]")
    return float(np.mean((s.scores - s.labels) ** 2))


@dataclass
class Confusion:
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float | None
    recall: float | None
    f1: float | None
    fnr: float | None
    specificity: float | None
    no_predicted_positives: bool

    @property
    def ppv(self) -> float | None:
        return self.precision

    @property
    def fpr(self) -> float | None:
        return None if self.specificity is None else 1.0 - self.specificity

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ppv"] = self.ppv
        return out


def _ratio(a: int, b: int) -> float | None:
    return a / b if b else None


def confusion_from_counts(t: float, tp: int, fp: int, tn: int, fn: int) -> Confusion:
    recall = _ratio(tp, tp + fn)
    return Confusion(
        threshold=float(t),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        precision=_ratio(tp, tp + fp),
        recall=recall,
        f1=_ratio(2 * tp, 2 * tp + fp + fn),
        fnr=None if recall is None else fn / (tp + fn),
        specificity=_ratio(tn, tn + fp),
        no_predicted_positives=(tp + fp) == 0,
    )


def confusion_at_threshold(scores, labels=None, t: float = 0.5) -> Confusion:
    s = _scored(scores, labels)
    flagged = s.scores >= t
    pos = s.labels == 1
    tp = int(np.sum(flagged & pos))
    fp = int(np.sum(flagged & ~pos))
    fn = int(np.sum(~flagged & pos))
    tn = len(s) - tp - fp - fn
    return confusion_from_counts(t, tp, fp, tn, fn)


@dataclass
class CalibrationBin:
    lo: float
    hi: float
    count: int
    mean_predicted: float | None
    observed: float | None


@dataclass
class CalibrationBins:
    bins: list[CalibrationBin]

    @property
    def counts(self) -> np.ndarray:
        return np.array([b.count for b in self.bins])

    @property
    def occupied(self) -> list[CalibrationBin]:
        return [b for b in self.bins if b.count > 0]

    def to_rows(self) -> list[dict]:
        return [asdict(b) for b in self.bins]


def calibration_curve(scores, labels=None, bins: int = 10) -> CalibrationBins:
    """Equal-width bins on [0, 1]; the last bin includes 1.0."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    s = _scored(scores, labels)
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.searchsorted(edges, s.scores, side="right") - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    sums = np.bincount(idx, weights=s.scores, minlength=bins)
    hits = np.bincount(idx, weights=s.labels, minlength=bins)
    out = []
    for b in range(bins):
        c = int(counts[b])
        out.append(
            CalibrationBin(
                lo=float(edges[b]),
                hi=float(edges[b + 1]),
                count=c,
                mean_predicted=float(sums[b] / c) if c else None,
                observed=float(hits[b] / c) if c else None,
            )
        )
    return CalibrationBins(out)


def _counts_at(sorted_scores: np.ndarray, sorted_pos: np.ndarray, thresholds: np.ndarray):
    """tp and fp when flagging score >= t, for each t (scores sorted ascending)."""
    n = len(sorted_scores)
    cum_pos = np.concatenate([[0], np.cumsum(sorted_pos)])
    below = np.searchsorted(sorted_scores, thresholds, side="left")
    tp = cum_pos[-1] - cum_pos[below]
    fp = (n - below) - tp
    return tp.astype(np.int64), fp.astype(np.int64)


@dataclass
class YoudenResult:
    threshold: float
    J: float
    tpr: float
    fpr: float


def youden_threshold(scores, labels=None) -> YoudenResult:
    """Maximize TPR - FPR over the observed scores; ties go to the smallest."""
    s = _scored(scores, labels)
    pos, neg = _both_classes(s, "Youden J")
    order = np.argsort(s.scores, kind="stable")
    sorted_scores = s.scores[order]
    candidates = np.unique(sorted_scores)
    tp, fp = _counts_at(sorted_scores, s.labels[order], candidates)
    # J * pos * neg as an exact integer avoids float ties
    scaled = tp * neg - fp * pos
    best = int(np.argmax(scaled))
    return YoudenResult(
        threshold=float(candidates[best]),
        J=float(scaled[best] / (pos * neg)),
        tpr=float(tp[best] / pos),
        fpr=float(fp[best] / neg),
    )


def threshold_sweep(scores, labels=None, grid: int = 101) -> list[Confusion]:
    if grid < 2:
        raise ValueError("grid must have >= 2 points")
    s = _scored(scores, labels)
    order = np.argsort(s.scores, kind="stable")
    sorted_scores = s.scores[order]
    ts = np.linspace(0.0, 1.0, grid)
    tp, fp = _counts_at(sorted_scores, s.labels[order], ts)
    pos = int(s.labels.sum())
    neg = len(s) - pos
    return [
        confusion_from_counts(float(t), int(a), int(b), neg - int(b), pos - int(a)) for t, a, b in zip(ts, tp, fp)
    ]


def roc_points(scores, labels=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, threshold) from (0, 0) through each distinct score to (1, 1)."""
    s = _scored(scores, labels)
    pos, neg = _both_classes(s, "ROC curve")
    order = np.argsort(s.scores, kind="stable")
    sorted_scores = s.scores[order]
    cand = np.unique(sorted_scores)[::-1]
    tp, fp = _counts_at(sorted_scores, s.labels[order], cand)
    fpr = np.concatenate([[0.0], fp / neg])
    tpr = np.concatenate([[0.0], tp / pos])
    thr = np.concatenate([[np.inf], cand])
    return fpr, tpr, thr


def pr_points(scores, labels=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(recall, precision, threshold) at each distinct score, descending."""
    s = _scored(scores, labels)
    order = np.argsort(s.scores, kind="stable")
    sorted_scores = s.scores[order]
    cand = np.unique(sorted_scores)[::-1]
    tp, fp = _counts_at(sorted_scores, s.labels[order], cand)
    pos = max(int(s.labels.sum()), 1)
    return tp / pos, tp / (tp + fp), cand


METRICS: dict[str, Callable] = {
    "auc_roc": auc_roc,
    "auc_prc": auc_prc,
    "brier": brier_score,
}


@dataclass
class BootstrapResult:
    low: float
    high: float
    point: float
    level: float
    iters: int
    seed: int
    n_valid: int
    n_skipped: int
    n_redrawn: int

    def to_dict(self) -> dict:
        return asdict(self)


def _one_resample(s: ScoredSet, metric, seed: int, it: int, max_redraws: int):
    """Returns (value or None, redraws). The stream depends only on (seed, it)."""
    rng = np.random.default_rng([seed, it])
    n = len(s)
    for attempt in range(max_redraws + 1):
        idx = rng.integers(0, n, n)
        labels = s.labels[idx]
        k = int(labels.sum())
        if 0 < k < n:
            try:
                return float(metric(s.scores[idx], labels)), attempt
            except UndefinedMetricError:
                return None, attempt
    return None, max_redraws


def bootstrap_ci(
    scores,
    labels=None,
    metric: str | Callable = "auc_roc",
    iters: int = 1000,
    seed: int = 0,
    level: float = 0.95,
    n_jobs: int = 1,
    max_redraws: int = 10,
) -> BootstrapResult:
    """Percentile bootstrap interval.

    Iteration ``i`` draws from a generator seeded by ``(seed, i)``, so the
    result is the same for any ``n_jobs``. Single-class resamples are redrawn
    up to ``max_redraws`` times, then skipped.
    """
    if iters < 100:
        raise ValueError("iters must be >= 100")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    s = _scored(scores, labels)
    fn = METRICS[metric] if isinstance(metric, str) else metric
    point = float(fn(s.scores, s.labels))
    its = range(iters)
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(lambda i: _one_resample(s, fn, seed, i, max_redraws), its))
    else:
        results = [_one_resample(s, fn, seed, i, max_redraws) for i in its]
    values = np.array([v for v, _ in results if v is not None])
    skipped = iters - len(values)
    redrawn = sum(r for _, r in results)
    if skipped > iters / 2:
        raise UndefinedMetricError(f"metric undefined on {skipped} of {iters} resamples")
    if skipped:
        logger.warning("bootstrap skipped %d of %d resamples (undefined metric)", skipped, iters)
    alpha = (1.0 - level) / 2.0
    low, high = np.percentile(values, [100 * alpha, 100 * (1 - alpha)])
    return BootstrapResult(
        low=float(low),
        high=float(high),
        point=point,
        level=level,
        iters=iters,
        seed=seed,
        n_valid=len(values),
        n_skipped=skipped,
        n_redrawn=redrawn,
    )


@dataclass
class EvaluationReport:
    n: int
    prevalence: float
    auc_roc: float
    auc_roc_ci: BootstrapResult
    auc_prc: float
    brier: float
    threshold: float
    threshold_source: str
    confusion: Confusion
    calibration: CalibrationBins
    sweep: list[Confusion]
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        c = self.confusion
        return {
            "n": self.n,
            "prevalence": self.prevalence,
            "auc_roc": self.auc_roc,
            "auc_roc_ci": [self.auc_roc_ci.low, self.auc_roc_ci.high],
            "bootstrap": self.auc_roc_ci.to_dict(),
            "auc_prc": self.auc_prc,
            "brier": self.brier,
            "threshold": self.threshold,
            "threshold_source": self.threshold_source,
            "precision": c.precision,
            "recall": c.recall,
            "f1": c.f1,
            "fnr": c.fnr,
            "ppv": c.ppv,
            "specificity": c.specificity,
            "confusion": c.to_dict(),
            "calibration": self.calibration.to_rows(),
            "sweep": [_sweep_row(r) for r in self.sweep],
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"


def _sweep_row(c: Confusion) -> dict:
    return {"t": c.threshold, "precision": c.precision, "recall": c.recall, "f1": c.f1}


def evaluate(
    scores,
    labels=None,
    threshold: float | None = None,
    threshold_source: str | None = None,
    iters: int = 1000,
    seed: int = 0,
    bins: int = 10,
    grid: int = 101,
    n_jobs: int = 1,
) -> EvaluationReport:
    """Full report; without a supplied threshold, Youden on these scores is used."""
    s = _scored(scores, labels)
    if threshold is None:
        threshold = youden_threshold(s).threshold
        threshold_source = threshold_source or "youden(evaluation set)"
    return EvaluationReport(
        n=len(s),
        prevalence=float(s.labels.mean()),
        auc_roc=auc_roc(s),
        auc_roc_ci=bootstrap_ci(s, metric="auc_roc", iters=iters, seed=seed, n_jobs=n_jobs),
        auc_prc=auc_prc(s),
        brier=brier_score(s),
        threshold=float(threshold),
        threshold_source=threshold_source or "supplied",
        confusion=confusion_at_threshold(s, t=threshold),
        calibration=calibration_curve(s, bins=bins),
        sweep=threshold_sweep(s, grid=grid),
    )


def _cell(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_rows_csv(path: str | os.PathLike, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r[c]) for c in columns])


def write_sweep_csv(path, sweep: list[Confusion]) -> None:
    write_rows_csv(path, ["t", "precision", "recall", "f1"], [_sweep_row(r) for r in sweep])


def write_calibration_csv(path, bins: CalibrationBins) -> None:
    write_rows_csv(path, ["lo", "hi", "count", "mean_predicted", "observed"], bins.to_rows())


def write_roc_csv(path, scores, labels=None) -> None:
    fpr, tpr, thr = roc_points(scores, labels)
    rows = [{"fpr": float(a), "tpr": float(b), "threshold": float(c)} for a, b, c in zip(fpr, tpr, thr)]
    write_rows_csv(path, ["fpr", "tpr", "threshold"], rows)


def write_prc_csv(path, scores, labels=None) -> None:
    rec, prec, thr = pr_points(scores, labels)
    rows = [{"recall": float(a), "precision": float(b), "threshold": float(c)} for a, b, c in zip(rec, prec, thr)]
    write_rows_csv(path, ["recall", "precision", "threshold"], rows)
