"""Cohort CSV format.

Line 1 is the schema tag ``schema=readmit-v1``; line 2 the column header;
then one row per admission. Missing values are empty cells. Row numbers in
error messages count data rows from 1.
"""

from __future__ import annotations

import csv
import io
import os
from pathlib import Path

import numpy as np

from ..errors import CohortIOError, ValidationError
from .dataset import Cohort
from .schema import (
    AGE_GROUP_SLOTS,
    FEATURE_NAMES,
    INSURANCE_SLOTS,
    INTEGER_FIELDS,
    MISSABLE_FIELDS,
    N_FEATURES,
    NUMERIC_FIELDS,
    RACE_SLOTS,
    SCHEMA_VERSION,
    age_groups,
)

ID_COLUMNS = ("admission_id", "admission_time", "label")
MISSING_COLUMNS = tuple(f"missing_{f}" for f in MISSABLE_FIELDS)
COLUMNS = ID_COLUMNS + FEATURE_NAMES + MISSING_COLUMNS


def format_number(v: float) -> str:
    if np.isnan(v):
        return ""
    if float(v).is_integer() and abs(v) < 2**53:
        return str(int(v))
    return repr(float(v))


def dumps_cohort(cohort: Cohort) -> str:
    out = io.StringIO()
    out.write(f"schema={cohort.schema_version}\n")
    out.write(",".join(COLUMNS) + "\n")
    labels = cohort.labels
    for i in range(len(cohort)):
        cells = [str(int(cohort.ids[i])), str(int(cohort.times[i]))]
        cells.append("" if labels is None else str(int(labels[i])))
        cells.extend(format_number(v) for v in cohort.X[i])
        cells.extend("1" if m else "0" for m in cohort.missing[i])
        out.write(",".join(cells) + "\n")
    return out.getvalue()


def save_cohort(cohort: Cohort, path: str | os.PathLike) -> None:
    cohort.check_invariants()
    Path(path).write_text(dumps_cohort(cohort), encoding="utf-8", newline="")


def _first_bad(cells, parse):
    for i, c in enumerate(cells):
        try:
            parse(c)
        except ValueError:
            return i
    return None


def _column_floats(name, cells, allow_empty):
    def parse(c):
        if c == "":
            if not allow_empty:
                raise ValueError
            return np.nan
        v = float(c)
        if not np.isfinite(v):
            raise ValueError
        return v

    try:
        return np.array([parse(c) for c in cells], dtype=np.float64)
    except ValueError:
        i = _first_bad(cells, parse)
        raise CohortIOError(f"{name}: cannot parse {cells[i]!r}", row=i + 1) from None


def _column_ints(name, cells):
    try:
        return np.array([int(c) for c in cells], dtype=np.int64)
    except ValueError:
        i = _first_bad(cells, int)
        raise CohortIOError(f"{name}: cannot parse {cells[i]!r} as an integer", row=i + 1) from None


def _column_binary(name, cells):
    for i, c in enumerate(cells):
        if c not in ("0", "1"):
            raise CohortIOError(f"{name}: expected 0 or 1, got {c!r}", row=i + 1)
    return np.array([c == "1" for c in cells], dtype=bool)


def loads_cohort(text: str) -> Cohort:
    reader = csv.reader(io.StringIO(text))
    try:
        tag = next(reader)
        header = next(reader)
    except StopIteration:
        raise CohortIOError("file is empty or lacks a header") from None
    tag = ",".join(tag).strip()
    if not tag.startswith("schema="):
        raise CohortIOError("first line must be the schema tag 'schema=...'")
    version = tag.split("=", 1)[1]
    if version != SCHEMA_VERSION:
        raise CohortIOError(f"unsupported schema version {version!r} (expected {SCHEMA_VERSION})")
    absent = [c for c in COLUMNS if c not in header]
    if absent:
        raise CohortIOError(f"missing column(s): {', '.join(absent)}")
    extra = [c for c in header if c not in COLUMNS]
    if extra:
        raise CohortIOError(f"unexpected column(s): {', '.join(extra)}")
    if len(set(header)) != len(header):
        raise CohortIOError("duplicate column names in header")
    rows = list(reader)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise CohortIOError(f"expected {len(header)} cells, found {len(row)}", row=i + 1)
    cols = {name: [r[k] for r in rows] for k, name in enumerate(header)}
    n = len(rows)

    ids = _column_ints("admission_id", cols["admission_id"])
    times = _column_ints("admission_time", cols["admission_time"])
    seen = {}
    for i, a in enumerate(ids.tolist()):
        if a in seen:
            raise CohortIOError(f"duplicate admission_id {a} (first seen in row {seen[a]})", row=i + 1)
        seen[a] = i + 1

    labels = None
    if n and any(c != "" for c in cols["label"]):
        labels = _column_binary("label", cols["label"]).astype(np.int8)

    X = np.empty((n, N_FEATURES))
    for j, name in enumerate(FEATURE_NAMES):
        X[:, j] = _column_floats(name, cols[name], allow_empty=name in MISSABLE_FIELDS)
        if name in INTEGER_FIELDS or j >= len(NUMERIC_FIELDS):
            col = X[:, j]
            bad = np.flatnonzero(~np.isnan(col) & (col != np.rint(col)))
            if bad.size:
                raise CohortIOError(f"{name}: expected an integer, got {cols[name][bad[0]]!r}", row=int(bad[0]) + 1)
        if j >= len(NUMERIC_FIELDS):
            bad = np.flatnonzero((X[:, j] != 0) & (X[:, j] != 1))
            if bad.size:
                raise CohortIOError(f"{name}: expected 0 or 1, got {cols[name][bad[0]]!r}", row=int(bad[0]) + 1)
    missing = np.empty((n, len(MISSABLE_FIELDS)), dtype=bool)
    for k, name in enumerate(MISSING_COLUMNS):
        missing[:, k] = _column_binary(name, cols[name])

    _check_rows(X)
    try:
        cohort = Cohort(ids=ids, times=times, X=X, missing=missing, labels=labels, schema_version=version)
        cohort.check_invariants()
    except ValidationError as exc:
        raise CohortIOError(str(exc)) from None
    return cohort


def _check_rows(X: np.ndarray) -> None:
    """Row-level range checks so errors can name the offending row."""
    age = X[:, 0]
    bad = np.flatnonzero(np.isnan(age) | (age < 18))
    if bad.size:
        raise CohortIOError("age: must be present and >= 18", row=int(bad[0]) + 1)
    bad = np.flatnonzero(X[:, 1] < 1)
    if bad.size:
        raise CohortIOError("length_of_stay: must be >= 1", row=int(bad[0]) + 1)
    for j, name in enumerate(NUMERIC_FIELDS[2:], start=2):
        bad = np.flatnonzero(X[:, j] < 0)
        if bad.size:
            raise CohortIOError(f"{name}: must be >= 0", row=int(bad[0]) + 1)
    for name, sl in (("race", RACE_SLOTS), ("insurance", INSURANCE_SLOTS), ("age_group", AGE_GROUP_SLOTS)):
        bad = np.flatnonzero(X[:, sl].sum(axis=1) != 1)
        if bad.size:
            raise CohortIOError(f"{name}: one-hot block must contain exactly one 1", row=int(bad[0]) + 1)
    bad = np.flatnonzero(np.argmax(X[:, AGE_GROUP_SLOTS], axis=1) != age_groups(age))
    if bad.size:
        raise CohortIOError("age_group: band does not match age", row=int(bad[0]) + 1)


def load_cohort(path: str | os.PathLike) -> Cohort:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CohortIOError(f"cannot read {path}: {exc}") from None
    return loads_cohort(text)
