"""Canonical 26-column feature layout and single-record encoding."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Any, Mapping

import numpy as np

from ..errors import ValidationError

SCHEMA_VERSION = "readmit-v1"

NUMERIC_FIELDS = (
    "age",
    "length_of_stay",
    "n_diagnoses",
    "n_procedures",
    "n_medications",
    "prior_admissions_12mo",
    "charlson_index",
)
FLAG_FIELDS = (
    "emergency_admission",
    "high_risk_med",
    "polypharmacy",
    "non_home_admission_source",
)
GENDERS = ("male", "female")
RACES = ("White", "Black", "Hispanic", "Asian", "OtherUnknown")
INSURANCES = ("Medicare", "Medicaid", "Private", "Other")
AGE_GROUPS = ("18-50", "51-65", "66-75", "76-85", "85+")

RACE_COLUMNS = ("race_white", "race_black", "race_hispanic", "race_asian", "race_other_unknown")
INSURANCE_COLUMNS = (
    "insurance_medicare",
    "insurance_medicaid",
    "insurance_private",
    "insurance_other",
)
AGE_GROUP_COLUMNS = ("age_18_50", "age_51_65", "age_66_75", "age_76_85", "age_85_plus")

FEATURE_NAMES: tuple[str, ...] = (
    NUMERIC_FIELDS + FLAG_FIELDS + ("male",) + RACE_COLUMNS + INSURANCE_COLUMNS + AGE_GROUP_COLUMNS
)
N_FEATURES = len(FEATURE_NAMES)
assert N_FEATURES == 26

FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}
MALE_SLOT = FEATURE_INDEX["male"]
RACE_SLOTS = slice(FEATURE_INDEX["race_white"], FEATURE_INDEX["race_other_unknown"] + 1)
INSURANCE_SLOTS = slice(FEATURE_INDEX["insurance_medicare"], FEATURE_INDEX["insurance_other"] + 1)
AGE_GROUP_SLOTS = slice(FEATURE_INDEX["age_18_50"], FEATURE_INDEX["age_85_plus"] + 1)

# Age is a registration field and always present; the rest may be absent.
MISSABLE_FIELDS = NUMERIC_FIELDS[1:]
MISSABLE_SLOTS = tuple(FEATURE_INDEX[f] for f in MISSABLE_FIELDS)

INTEGER_FIELDS = frozenset(NUMERIC_FIELDS) - {"length_of_stay"}

DISPLAY_NAMES = {
    "age": "Age",
    "length_of_stay": "Length of Stay (days)",
    "n_diagnoses": "Number of Diagnoses",
    "n_procedures": "Number of Procedures",
    "n_medications": "Number of Medications",
    "prior_admissions_12mo": "Prior Admissions (12 mo)",
    "charlson_index": "Charlson Comorbidity Index",
    "emergency_admission": "Emergency Admission",
    "high_risk_med": "High-Risk Medication Flag",
    "polypharmacy": "Polypharmacy",
    "non_home_admission_source": "Non-Home Admission Source",
    "male": "Male Gender",
    "race_white": "Race: White",
    "race_black": "Race: Black",
    "race_hispanic": "Race: Hispanic",
    "race_asian": "Race: Asian",
    "race_other_unknown": "Race: Other/Unknown",
    "insurance_medicare": "Insurance: Medicare",
    "insurance_medicaid": "Insurance: Medicaid",
    "insurance_private": "Insurance: Private",
    "insurance_other": "Insurance: Other",
    "age_18_50": "Age Group: 18-50",
    "age_51_65": "Age Group: 51-65",
    "age_66_75": "Age Group: 66-75",
    "age_76_85": "Age Group: 76-85",
    "age_85_plus": "Age Group: 85+",
}


def age_group(age: float) -> int:
    """Index into AGE_GROUPS; 85+ means strictly older than 85."""
    if age <= 50:
        return 0
    if age <= 65:
        return 1
    if age <= 75:
        return 2
    if age <= 85:
        return 3
    return 4


def age_groups(ages: np.ndarray) -> np.ndarray:
    return np.searchsorted(np.array([50, 65, 75, 85]), ages, side="left")


@dataclass(frozen=True)
class PatientRecord:
    admission_id: int
    admission_time: int
    age: int
    gender: str
    race: str
    insurance: str
    length_of_stay: float | None
    n_diagnoses: int | None
    n_procedures: int | None
    n_medications: int | None
    prior_admissions_12mo: int | None
    charlson_index: int | None
    emergency_admission: bool = False
    high_risk_med: bool = False
    polypharmacy: bool = False
    non_home_admission_source: bool = False
    label: bool | None = None

    def __post_init__(self):
        validate_record(self)

    @property
    def missing(self) -> dict[str, bool]:
        return {f: getattr(self, f) is None for f in MISSABLE_FIELDS}

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], *, require_ids: bool = True) -> "PatientRecord":
        """Parse a loosely typed mapping (JSON body, CSV row) into a record.

        Every problem is collected so the caller sees all bad fields at once.
        """
        if not isinstance(data, Mapping):
            raise ValidationError({"_": "expected a JSON object"})
        known = {f.name for f in fields(cls)}
        errors: dict[str, str] = {}
        for key in data:
            if key not in known:
                errors[key] = "unknown field"
        values: dict[str, Any] = {}

        def take(name, parse, required=True, default=None):
            if name not in data or data[name] is None:
                if required:
                    errors[name] = "field required"
                return default
            try:
                return parse(data[name])
            except (TypeError, ValueError) as exc:
                errors[name] = str(exc) or "invalid value"
                return default

        if require_ids:
            values["admission_id"] = take("admission_id", _parse_int)
            values["admission_time"] = take("admission_time", _parse_int)
        else:
            values["admission_id"] = take("admission_id", _parse_int, required=False, default=0)
            values["admission_time"] = take("admission_time", _parse_int, required=False, default=0)
        values["age"] = take("age", _parse_int)
        for name, choices in (("gender", GENDERS), ("race", RACES), ("insurance", INSURANCES)):
            values[name] = take(name, _choice(choices))
        values["length_of_stay"] = take("length_of_stay", _parse_float, required=False)
        for name in MISSABLE_FIELDS[1:]:
            values[name] = take(name, _parse_int, required=False)
        for name in FLAG_FIELDS:
            values[name] = take(name, _parse_bool, required=False, default=False)
        values["label"] = take("label", _parse_bool, required=False)
        if errors:
            raise ValidationError(errors)
        return cls(**values)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _parse_int(v) -> int:
    if isinstance(v, bool):
        raise ValueError("expected an integer")
    if isinstance(v, float):
        if not v.is_integer():
            raise ValueError(f"expected an integer, got {v!r}")
        return int(v)
    if isinstance(v, str):
        v = v.strip()
        try:
            return int(v)
        except ValueError:
            f = float(v)
            if not f.is_integer():
                raise ValueError(f"expected an integer, got {v!r}") from None
            return int(f)
    if isinstance(v, (int, np.integer)):
        return int(v)
    raise ValueError(f"expected an integer, got {type(v).__name__}")


def _parse_float(v) -> float:
    if isinstance(v, bool):
        raise ValueError("expected a number")
    f = float(v)
    if not math.isfinite(f):
        raise ValueError("expected a finite number")
    return f


def _parse_bool(v) -> bool:
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)) and v in (0, 1):
        return bool(v)
    if isinstance(v, float) and v in (0.0, 1.0):
        return bool(v)
    if isinstance(v, str) and v.strip().lower() in ("0", "1", "true", "false"):
        return v.strip().lower() in ("1", "true")
    raise ValueError(f"expected a boolean, got {v!r}")


def _choice(choices):
    lowered = {c.lower(): c for c in choices}

    def parse(v):
        if isinstance(v, str) and v.strip().lower() in lowered:
            return lowered[v.strip().lower()]
        raise ValueError(f"expected one of {', '.join(choices)}")

    return parse


def validate_record(rec: PatientRecord) -> None:
    errors: dict[str, str] = {}
    if rec.age is None or rec.age < 18:
        errors["age"] = "age must be an integer >= 18"
    if rec.gender not in GENDERS:
        errors["gender"] = f"expected one of {', '.join(GENDERS)}"
    if rec.race not in RACES:
        errors["race"] = f"expected one of {', '.join(RACES)}"
    if rec.insurance not in INSURANCES:
        errors["insurance"] = f"expected one of {', '.join(INSURANCES)}"
    if rec.length_of_stay is not None and not (rec.length_of_stay >= 1):
        errors["length_of_stay"] = "length_of_stay must be >= 1 day"
    for name in MISSABLE_FIELDS[1:]:
        v = getattr(rec, name)
        if v is not None and v < 0:
            errors[name] = f"{name} must be >= 0"
    if errors:
        raise ValidationError(errors)


def encode_record(rec: PatientRecord) -> np.ndarray:
    """Map a record onto the canonical 26-wide vector.

    Missing numeric fields become NaN; imputation is a separate step.
    """
    x = np.zeros(N_FEATURES)
    for i, name in enumerate(NUMERIC_FIELDS):
        v = getattr(rec, name)
        x[i] = np.nan if v is None else float(v)
    for name in FLAG_FIELDS:
        x[FEATURE_INDEX[name]] = 1.0 if getattr(rec, name) else 0.0
    x[MALE_SLOT] = 1.0 if rec.gender == "male" else 0.0
    x[RACE_SLOTS.start + RACES.index(rec.race)] = 1.0
    x[INSURANCE_SLOTS.start + INSURANCES.index(rec.insurance)] = 1.0
    x[AGE_GROUP_SLOTS.start + age_group(rec.age)] = 1.0
    return x
