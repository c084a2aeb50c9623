from __future__ import annotations

import numpy as np
from scipy.special import expit

from .gbdt import DEPTH_WISE, LEAF_WISE, TrainConfig, TrainingTrace, fit_gbdt, train_gbdt
from .io import dumps_model, load_model, model_from_dict, model_to_dict, save_model
from .logistic import LinearModel, fit_logistic, train_logistic
from .tree import MODEL_VERSION, Tree, TreeEnsemble, ensemble_margin


def predict_margin(model, X) -> np.ndarray | float:
    """Log-odds for one vector (returns a float) or a matrix (returns an array)."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if isinstance(model, TreeEnsemble):
        out = ensemble_margin(model, X)
    elif isinstance(model, LinearModel):
        out = model.margin(X)
    else:
        raise TypeError(f"unsupported model type {type(model).__name__}")
    return float(out[0]) if single else out


def predict_proba(model, X) -> np.ndarray | float:
    m = predict_margin(model, X)
    return float(expit(m)) if isinstance(m, float) else expit(m)


__all__ = [
    "DEPTH_WISE",
    "LEAF_WISE",
    "LinearModel",
    "MODEL_VERSION",
    "TrainConfig",
    "TrainingTrace",
    "Tree",
    "TreeEnsemble",
    "dumps_model",
    "fit_gbdt",
    "fit_logistic",
    "load_model",
    "model_from_dict",
    "model_to_dict",
    "predict_margin",
    "predict_proba",
    "save_model",
    "train_gbdt",
    "train_logistic",
]
