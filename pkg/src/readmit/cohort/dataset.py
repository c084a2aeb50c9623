"""Columnar cohort container, chronological splitting and median imputation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

import numpy as np

from ..errors import ConfigurationError, ValidationError
from .schema import (
    AGE_GROUP_SLOTS,
    AGE_GROUPS,
    FEATURE_INDEX,
    FLAG_FIELDS,
    GENDERS,
    INSURANCE_SLOTS,
    INSURANCES,
    MALE_SLOT,
    MISSABLE_FIELDS,
    MISSABLE_SLOTS,
    N_FEATURES,
    NUMERIC_FIELDS,
    RACE_SLOTS,
    RACES,
    SCHEMA_VERSION,
    PatientRecord,
    age_groups,
    encode_record,
)

__all__ = [
    "Cohort",
    "SplitCohort",
    "apply_medians",
    "chronological_split",
    "fit_medians",
    "median_impute",
    "split_sizes",
]


@dataclass
class Cohort:
    """Records stored column-wise.

    ``X`` holds the encoded 26-wide features (NaN where a value is missing
    and not yet imputed); ``missing`` is the per-field sidecar for
    MISSABLE_FIELDS and survives imputation for auditing.
    """

    ids: np.ndarray
    times: np.ndarray
    X: np.ndarray
    missing: np.ndarray
    labels: np.ndarray | None = None
    schema_version: str = SCHEMA_VERSION

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.times = np.asarray(self.times, dtype=np.int64)
        self.X = np.asarray(self.X, dtype=np.float64)
        self.missing = np.asarray(self.missing, dtype=bool)
        n = len(self.ids)
        if self.X.shape != (n, N_FEATURES):
            raise ValidationError({"X": f"expected shape ({n}, {N_FEATURES}), got {self.X.shape}"})
        if self.missing.shape != (n, len(MISSABLE_FIELDS)):
            raise ValidationError({"missing": "sidecar shape mismatch"})
        if self.times.shape != (n,):
            raise ValidationError({"admission_time": "length mismatch"})
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int8)
            if self.labels.shape != (n,):
                raise ValidationError({"label": "length mismatch"})
        if len(np.unique(self.ids)) != n:
            raise ValidationError({"admission_id": "admission ids must be unique"})

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def y(self) -> np.ndarray:
        if self.labels is None:
            raise ValidationError({"label": "cohort is unlabeled"})
        return self.labels

    @classmethod
    def from_records(cls, records: Iterable[PatientRecord]) -> "Cohort":
        records = list(records)
        n = len(records)
        X = np.empty((n, N_FEATURES))
        missing = np.zeros((n, len(MISSABLE_FIELDS)), dtype=bool)
        for i, r in enumerate(records):
            X[i] = encode_record(r)
            missing[i] = [getattr(r, f) is None for f in MISSABLE_FIELDS]
        labels = None
        if n and all(r.label is not None for r in records):
            labels = np.array([int(r.label) for r in records], dtype=np.int8)
        elif any(r.label is not None for r in records):
            raise ValidationError({"label": "labels must be present on all records or none"})
        return cls(
            ids=np.array([r.admission_id for r in records], dtype=np.int64),
            times=np.array([r.admission_time for r in records], dtype=np.int64),
            X=X,
            missing=missing,
            labels=labels,
        )

    def record(self, i: int) -> PatientRecord:
        x = self.X[i]
        values = {}
        for j, name in enumerate(NUMERIC_FIELDS):
            # imputed values come back as values; the marker lives in self.missing
            values[name] = None if np.isnan(x[j]) else _numeric(name, x[j])
        for name in FLAG_FIELDS:
            values[name] = bool(x[FEATURE_INDEX[name]])
        return PatientRecord(
            admission_id=int(self.ids[i]),
            admission_time=int(self.times[i]),
            gender=GENDERS[0] if x[MALE_SLOT] == 1 else GENDERS[1],
            race=RACES[int(np.argmax(x[RACE_SLOTS]))],
            insurance=INSURANCES[int(np.argmax(x[INSURANCE_SLOTS]))],
            label=None if self.labels is None else bool(self.labels[i]),
            **values,
        )

    def records(self) -> Iterator[PatientRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def take(self, index: Sequence[int] | np.ndarray) -> "Cohort":
        index = np.asarray(index)
        return Cohort(
            ids=self.ids[index],
            times=self.times[index],
            X=self.X[index],
            missing=self.missing[index],
            labels=None if self.labels is None else self.labels[index],
            schema_version=self.schema_version,
        )

    def demographics(self) -> dict[str, np.ndarray]:
        """Integer category codes per audit dimension (index into the enum tuples)."""
        return {
            "race": np.argmax(self.X[:, RACE_SLOTS], axis=1),
            "age_group": np.argmax(self.X[:, AGE_GROUP_SLOTS], axis=1),
            "gender": np.where(self.X[:, MALE_SLOT] == 1, 0, 1),
            "insurance": np.argmax(self.X[:, INSURANCE_SLOTS], axis=1),
        }

    def check_invariants(self) -> None:
        """Raise if any one-hot block is malformed or an age band disagrees with age."""
        for name, sl in (("race", RACE_SLOTS), ("insurance", INSURANCE_SLOTS), ("age_group", AGE_GROUP_SLOTS)):
            block = self.X[:, sl]
            if not (np.isin(block, (0.0, 1.0)).all() and (block.sum(axis=1) == 1).all()):
                raise ValidationError({name: "one-hot block must sum to exactly 1"})
        if not np.isin(self.X[:, MALE_SLOT], (0.0, 1.0)).all():
            raise ValidationError({"gender": "male flag must be 0/1"})
        ages = self.X[:, 0]
        if np.isnan(ages).any() or (ages < 18).any():
            raise ValidationError({"age": "age must be present and >= 18"})
        if (np.argmax(self.X[:, AGE_GROUP_SLOTS], axis=1) != age_groups(ages)).any():
            raise ValidationError({"age_group": f"age band inconsistent with age ({', '.join(AGE_GROUPS)})"})


def _numeric(name, v):
    if name == "length_of_stay":
        return float(v)
    return int(v)


@dataclass
class SplitCohort:
    train: Cohort
    validation: Cohort
    test: Cohort
    sizes: tuple[int, int, int] = field(init=False)

    def __post_init__(self):
        self.sizes = (len(self.train), len(self.validation), len(self.test))


def split_sizes(n: int, fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)) -> tuple[int, int, int]:
    if n < 10:
        raise ConfigurationError(f"cohort of {n} records is too small to split (need >= 10)")
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise ConfigurationError("split fractions must be three positive numbers summing to 1")
    # exact rational arithmetic: 0.7 * n must not drift below an integer
    n_train = math.floor(Fraction(str(fractions[0])) * n)
    rest = n - n_train
    n_val = rest // 2
    return n_train, n_val, rest - n_val


def chronological_split(
    cohort: Cohort, fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)
) -> SplitCohort:
    """Sort by (admission_time, admission_id) and cut into train/validation/test.

    The remainder after the train cut is halved; validation takes the
    smaller half when it is odd. Only the train fraction is used to size
    the cut, the other two are checked for consistency.
    """
    n_train, n_val, _ = split_sizes(len(cohort), fractions)
    order = np.lexsort((cohort.ids, cohort.times))
    return SplitCohort(
        train=cohort.take(order[:n_train]),
        validation=cohort.take(order[n_train : n_train + n_val]),
        test=cohort.take(order[n_train + n_val :]),
    )


def fit_medians(train: Cohort) -> dict[str, float]:
    """Per-field medians over observed train values (even counts average the middle pair)."""
    if len(train) == 0:
        raise ConfigurationError("cannot compute medians on an empty cohort")
    medians = {}
    for j, name in zip(MISSABLE_SLOTS, MISSABLE_FIELDS):
        col = train.X[:, j]
        observed = col[~np.isnan(col)]
        if observed.size == 0:
            raise ConfigurationError(f"{name} is missing in every training row")
        medians[name] = float(np.median(observed))
    return medians


def apply_medians(target: Cohort, medians: dict[str, float]) -> Cohort:
    X = target.X.copy()
    for j, name in zip(MISSABLE_SLOTS, MISSABLE_FIELDS):
        col = X[:, j]
        col[np.isnan(col)] = medians[name]
    return Cohort(
        ids=target.ids,
        times=target.times,
        X=X,
        missing=target.missing | np.isnan(target.X[:, list(MISSABLE_SLOTS)]),
        labels=target.labels,
        schema_version=target.schema_version,
    )


def median_impute(train: Cohort, target: Cohort) -> Cohort:
    """Fill missing numeric fields in ``target`` with medians computed on ``train`` only."""
    return apply_medians(target, fit_medians(train))
