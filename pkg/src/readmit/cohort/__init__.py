from .dataset import (
    Cohort,
    SplitCohort,
    apply_medians,
    chronological_split,
    fit_medians,
    median_impute,
    split_sizes,
)
from .io import dumps_cohort, load_cohort, loads_cohort, save_cohort
from .schema import (
    FEATURE_NAMES,
    N_FEATURES,
    SCHEMA_VERSION,
    PatientRecord,
    encode_record,
)
from .synth import GeneratorConfig, SyntheticCohort, generate_cohort, simulate

__all__ = [
    "Cohort",
    "FEATURE_NAMES",
    "GeneratorConfig",
    "N_FEATURES",
    "PatientRecord",
    "SCHEMA_VERSION",
    "SplitCohort",
    "SyntheticCohort",
    "apply_medians",
    "chronological_split",
    "dumps_cohort",
    "encode_record",
    "fit_medians",
    "generate_cohort",
    "load_cohort",
    "loads_cohort",
    "median_impute",
    "save_cohort",
    "simulate",
    "split_sizes",
]
