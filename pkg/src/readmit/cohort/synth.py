"""Seeded synthetic cohorts whose readmission risk is known exactly.

Marginals follow the published MIMIC-IV cohort summary (age around 60,
median stay 3.8 days with IQR 2.1-6.7, 52.7% female, 67% White, 46%
Medicare). Labels are Bernoulli draws from a logistic model over
standardized features, so any downstream scorer can be compared with the
true logit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError
from .dataset import Cohort
from .schema import (
    AGE_GROUP_SLOTS,
    FEATURE_INDEX,
    FEATURE_NAMES,
    INSURANCE_SLOTS,
    INSURANCES,
    MALE_SLOT,
    MISSABLE_FIELDS,
    MISSABLE_SLOTS,
    N_FEATURES,
    RACE_SLOTS,
    RACES,
    age_groups,
)

DEFAULT_RACE_PROBS = (0.673, 0.148, 0.057, 0.032, 0.090)
DEFAULT_INSURANCE_PROBS = (0.463, 0.180, 0.282, 0.075)
DEFAULT_FEMALE_PROB = 0.527

# Coefficients act on standardized features (see FEATURE_CENTER/FEATURE_SCALE),
# so their magnitudes are directly comparable.
DEFAULT_COEFFICIENTS = {
    "prior_admissions_12mo": 0.60,
    "n_medications": 0.15,
    "n_diagnoses": 0.14,
    "length_of_stay": 0.12,
    "n_procedures": 0.08,
    "age": 0.08,
    "charlson_index": 0.06,
    "emergency_admission": 0.05,
    "non_home_admission_source": 0.04,
    "race_other_unknown": 0.03,
    "insurance_medicaid": 0.03,
    "insurance_private": -0.03,
    "age_18_50": -0.03,
    "male": 0.02,
    "high_risk_med": 0.02,
    "polypharmacy": 0.02,
}

LOS_LOG_MEAN = math.log(3.8)
LOS_LOG_SD = (math.log(6.7) - math.log(2.1)) / 1.349
PRIOR_MEAN, PRIOR_VAR = 0.8, 2.0
CHARLSON_MEAN, CHARLSON_SD = 1.2, 2.3
POLYPHARMACY_CUTOFF = 15
EPOCH_START = 1_199_145_600  # 2008-01-01 UTC
EPOCH_SPAN = 12 * 365 * 86_400


def _flag_scale(p):
    return (p, math.sqrt(p * (1 - p)))


@dataclass
class GeneratorConfig:
    n: int
    seed: int = 0
    target_prevalence: float = 0.18
    coefficients: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_COEFFICIENTS))
    intercept: float | None = None
    interaction: float = 0.0
    noise_sd: float = 0.0
    bias_knob: dict[str, float] = field(default_factory=dict)
    temporal_drift: float = 0.0
    missing_rate: float = 0.0
    female_prob: float = DEFAULT_FEMALE_PROB
    race_probs: tuple[float, ...] = DEFAULT_RACE_PROBS
    insurance_probs: tuple[float, ...] = DEFAULT_INSURANCE_PROBS
    emergency_prob: float = 0.55
    high_risk_med_prob: float = 0.30
    non_home_prob: float = 0.25

    def __post_init__(self):
        if self.n < 1:
            raise ConfigurationError("n must be >= 1")
        if not 0 < self.target_prevalence < 1:
            raise ConfigurationError("target_prevalence must lie in (0, 1)")
        for name, probs, k in (("race_probs", self.race_probs, 5), ("insurance_probs", self.insurance_probs, 4)):
            if len(probs) != k or min(probs) < 0 or abs(sum(probs) - 1) > 1e-9:
                raise ConfigurationError(f"{name} must be {k} non-negative values summing to 1")
        for name in ("female_prob", "emergency_prob", "high_risk_med_prob", "non_home_prob", "missing_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        unknown = set(self.coefficients) - set(FEATURE_NAMES)
        if unknown:
            raise ConfigurationError(f"unknown coefficient features: {sorted(unknown)}")
        for key, mult in self.bias_knob.items():
            _parse_group_key(key)
            if mult < 0:
                raise ConfigurationError("bias_knob multipliers must be >= 0")
        if self.noise_sd < 0:
            raise ConfigurationError("noise_sd must be >= 0")

    def feature_center_scale(self) -> tuple[np.ndarray, np.ndarray]:
        """Nominal (population) mean and sd used to standardize each feature."""
        center = np.zeros(N_FEATURES)
        scale = np.ones(N_FEATURES)
        nominal = {
            "age": (60.0, 17.0),
            # risk acts on log length of stay
            "length_of_stay": (LOS_LOG_MEAN, LOS_LOG_SD),
            "n_diagnoses": (9.0, 3.0),
            "n_procedures": (2.0, math.sqrt(2.0)),
            "n_medications": (12.0, math.sqrt(12.0)),
            "prior_admissions_12mo": (PRIOR_MEAN, math.sqrt(PRIOR_VAR)),
            "charlson_index": (CHARLSON_MEAN, CHARLSON_SD),
            "emergency_admission": _flag_scale(self.emergency_prob),
            "high_risk_med": _flag_scale(self.high_risk_med_prob),
            "polypharmacy": _flag_scale(0.2),
            "non_home_admission_source": _flag_scale(self.non_home_prob),
            "male": _flag_scale(1 - self.female_prob),
        }
        for k, col in enumerate(range(RACE_SLOTS.start, RACE_SLOTS.stop)):
            nominal[FEATURE_NAMES[col]] = _flag_scale(self.race_probs[k])
        for k, col in enumerate(range(INSURANCE_SLOTS.start, INSURANCE_SLOTS.stop)):
            nominal[FEATURE_NAMES[col]] = _flag_scale(self.insurance_probs[k])
        for col, p in zip(range(AGE_GROUP_SLOTS.start, AGE_GROUP_SLOTS.stop), (0.28, 0.28, 0.2, 0.16, 0.08)):
            nominal[FEATURE_NAMES[col]] = _flag_scale(p)
        for name, (c, s) in nominal.items():
            j = FEATURE_INDEX[name]
            center[j] = c
            scale[j] = s if s > 0 else 1.0
        return center, scale

    def coefficient_vector(self) -> np.ndarray:
        beta = np.zeros(N_FEATURES)
        for name, b in self.coefficients.items():
            beta[FEATURE_INDEX[name]] = b
        return beta


def _parse_group_key(key: str) -> tuple[str, str]:
    from ..fairness import DIMENSIONS  # late import: fairness depends on cohort

    dim, _, label = key.partition("=")
    if dim not in DIMENSIONS or label not in DIMENSIONS[dim]:
        raise ConfigurationError(f"bias_knob key {key!r} is not a known subgroup (use e.g. 'race=Black')")
    return dim, label


def standardized(config: GeneratorConfig, X: np.ndarray) -> np.ndarray:
    center, scale = config.feature_center_scale()
    Z = X.copy()
    Z[:, 1] = np.log(Z[:, 1])
    return (Z - center) / scale


def signal(config: GeneratorConfig, X: np.ndarray) -> np.ndarray:
    """Feature part of the true logit (everything except intercept and noise)."""
    Z = standardized(config, X)
    s = Z @ config.coefficient_vector()
    if config.interaction:
        emergency = 2.0 * X[:, FEATURE_INDEX["emergency_admission"]] - 1.0
        s = s + config.interaction * emergency * Z[:, FEATURE_INDEX["length_of_stay"]]
    return s


def ground_truth_logit(config: GeneratorConfig, X: np.ndarray, intercept: float) -> np.ndarray:
    return intercept + signal(config, X)


def ground_truth_shap(config: GeneratorConfig, X: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Exact Shapley values of the additive part of the true logit.

    With a linear logit in standardized features and independent
    reference features, the attribution of feature j is
    beta_j * (z_j - mean(z_j)). The interaction term is not attributed.
    """
    Z = standardized(config, X)
    Zref = standardized(config, reference)
    return (Z - Zref.mean(axis=0)) * config.coefficient_vector()


@dataclass
class SyntheticCohort:
    cohort: Cohort
    intercept: float
    true_logit: np.ndarray
    X_true: np.ndarray


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def calibrate_intercept(eta: np.ndarray, target: float, lo: float = -30.0, hi: float = 30.0) -> float:
    """Bisection for b such that mean(sigmoid(b + eta)) == target."""

    def prevalence(b):
        return float(np.mean(_sigmoid(b + eta)))

    if not prevalence(lo) < target < prevalence(hi):
        raise ConfigurationError(
            f"cannot bracket prevalence {target} in intercept range [{lo}, {hi}]"
        )
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if prevalence(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


def simulate(config: GeneratorConfig) -> SyntheticCohort:
    rng = np.random.default_rng(config.seed)
    n = config.n
    ramp = np.arange(n) / max(n - 1, 1)
    drift = 1.0 + config.temporal_drift * ramp

    age = np.clip(np.rint(rng.normal(60.0, 17.0, n)), 18, 100)
    los = np.maximum(np.round(rng.lognormal(LOS_LOG_MEAN, LOS_LOG_SD, n), 2), 1.0)
    n_diag = rng.poisson(9.0, n)
    n_proc = rng.poisson(2.0, n)
    n_meds = rng.poisson(12.0 * drift)
    r = PRIOR_MEAN**2 / (PRIOR_VAR - PRIOR_MEAN)
    prior = rng.negative_binomial(r, r / (r + PRIOR_MEAN * drift))
    r = CHARLSON_MEAN**2 / (CHARLSON_SD**2 - CHARLSON_MEAN)
    charlson = rng.negative_binomial(r, r / (r + CHARLSON_MEAN), n)
    emergency = rng.random(n) < config.emergency_prob
    high_risk = rng.random(n) < config.high_risk_med_prob
    non_home = rng.random(n) < config.non_home_prob
    male = rng.random(n) >= config.female_prob
    race = rng.choice(len(RACES), size=n, p=np.asarray(config.race_probs))
    insurance = rng.choice(len(INSURANCES), size=n, p=np.asarray(config.insurance_probs))

    X = np.zeros((n, N_FEATURES))
    X[:, 0] = age
    X[:, 1] = los
    X[:, 2] = n_diag
    X[:, 3] = n_proc
    X[:, 4] = n_meds
    X[:, 5] = prior
    X[:, 6] = charlson
    X[:, FEATURE_INDEX["emergency_admission"]] = emergency
    X[:, FEATURE_INDEX["high_risk_med"]] = high_risk
    X[:, FEATURE_INDEX["polypharmacy"]] = n_meds >= POLYPHARMACY_CUTOFF
    X[:, FEATURE_INDEX["non_home_admission_source"]] = non_home
    X[:, MALE_SLOT] = male
    rows = np.arange(n)
    X[rows, RACE_SLOTS.start + race] = 1.0
    X[rows, INSURANCE_SLOTS.start + insurance] = 1.0
    X[rows, AGE_GROUP_SLOTS.start + age_groups(age)] = 1.0

    s = signal(config, X)
    noise_sd = np.full(n, config.noise_sd)
    if config.bias_knob:
        from ..fairness import subgroup_masks

        masks = subgroup_masks(X)
        for key, mult in sorted(config.bias_knob.items()):
            noise_sd[masks[_parse_group_key(key)]] *= mult
    eta = s + noise_sd * rng.standard_normal(n)
    if config.intercept is None:
        intercept = calibrate_intercept(eta, config.target_prevalence)
    else:
        intercept = float(config.intercept)
    labels = (rng.random(n) < _sigmoid(intercept + eta)).astype(np.int8)

    missing = np.zeros((n, len(MISSABLE_FIELDS)), dtype=bool)
    X_obs = X
    if config.missing_rate > 0:
        missing = rng.random((n, len(MISSABLE_FIELDS))) < config.missing_rate
        X_obs = X.copy()
        for k, j in enumerate(MISSABLE_SLOTS):
            X_obs[missing[:, k], j] = np.nan

    gaps = 1 + rng.integers(0, max(2 * EPOCH_SPAN // max(n, 1), 1), n)
    times = EPOCH_START + np.cumsum(gaps)
    cohort = Cohort(
        ids=np.arange(1, n + 1),
        times=times,
        X=X_obs,
        missing=missing,
        labels=labels,
    )
    return SyntheticCohort(cohort=cohort, intercept=intercept, true_logit=intercept + s, X_true=X)


def generate_cohort(config: GeneratorConfig) -> Cohort:
    return simulate(config).cohort
