from .report import (
    BEESWARM_COLUMNS,
    GlobalImportance,
    WaterfallEntry,
    WaterfallReport,
    beeswarm_export,
    beeswarm_rows,
    global_importance,
    waterfall_report,
)
from .shap import (
    ShapExplanation,
    brute_force_shap,
    build_plan,
    expected_margin,
    explain_batch,
    shap_values,
    tree_shap,
)

__all__ = [
    "BEESWARM_COLUMNS",
    "GlobalImportance",
    "ShapExplanation",
    "WaterfallEntry",
    "WaterfallReport",
    "beeswarm_export",
    "beeswarm_rows",
    "brute_force_shap",
    "build_plan",
    "expected_margin",
    "explain_batch",
    "global_importance",
    "shap_values",
    "tree_shap",
    "waterfall_report",
]
