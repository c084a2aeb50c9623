"""L2-regularized logistic regression fitted by gradient descent."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..cohort.dataset import Cohort
from ..cohort.schema import FEATURE_NAMES, N_FEATURES
from ..errors import ModelError, TrainingError
from .tree import MODEL_VERSION

logger = logging.getLogger(__name__)


@dataclass
class LinearModel:
    weights: np.ndarray
    intercept: float
    C: float
    means: np.ndarray
    sds: np.ndarray
    converged: bool = True
    n_iter: int = 0
    feature_names: tuple[str, ...] = FEATURE_NAMES
    model_version: str = MODEL_VERSION
    metadata: dict = field(default_factory=dict)

    kind = "linear"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.sds = np.asarray(self.sds, dtype=np.float64)
        self.feature_names = tuple(self.feature_names)
        if len(self.feature_names) != N_FEATURES:
            raise ModelError(f"feature_names must list {N_FEATURES} names")
        for name in ("weights", "means", "sds"):
            arr = getattr(self, name)
            if arr.shape != (N_FEATURES,) or not np.isfinite(arr).all():
                raise ModelError(f"{name} must be {N_FEATURES} finite values")
        if not np.isfinite(self.intercept):
            raise ModelError("intercept must be finite")
        if not self.C > 0:
            raise ModelError("C must be > 0")
        if (self.sds <= 0).any():
            raise ModelError("standardization sds must be > 0")

    @property
    def n_features(self) -> int:
        return N_FEATURES

    def standardize(self, X: np.ndarray) -> np.ndarray:
        return (X - self.means) / self.sds

    def margin(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} features, got {X.shape[1]}")
        return self.intercept + self.standardize(X) @ self.weights

    def contributions(self, X: np.ndarray) -> np.ndarray:
        """Per-feature additive terms w_j * z_j (z standardized on train).

        Because z has mean zero on the training split these sum, with the
        intercept, to the margin; a lightweight attribution fallback.
        """
        return self.standardize(np.atleast_2d(X)) * self.weights


def standardization(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    means = X.mean(axis=0)
    sds = X.std(axis=0)
    sds[sds == 0] = 1.0
    return means, sds


def loss_and_grad(params: np.ndarray, Z: np.ndarray, y: np.ndarray, C: float) -> tuple[float, np.ndarray]:
    """Mean log loss + ||w||^2 / (2 C n); params = [intercept, w...]."""
    n = len(y)
    b, w = params[0], params[1:]
    m = b + Z @ w
    loss = np.mean(np.logaddexp(0.0, m) - y * m) + w @ w / (2.0 * C * n)
    r = (0.5 * (1.0 + np.tanh(0.5 * m)) - y) / n
    grad = np.empty_like(params)
    grad[0] = r.sum()
    grad[1:] = Z.T @ r + w / (C * n)
    return float(loss), grad


def fit_logistic(
    X: np.ndarray, y: np.ndarray, C: float = 0.001, tol: float = 1e-6, max_iter: int = 5000
) -> LinearModel:
    """Full-batch gradient descent with Armijo backtracking.

    Stops when the gradient max-norm falls below ``tol``; otherwise the
    returned model carries ``converged=False``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not C > 0:
        raise TrainingError("C must be > 0")
    if len(y) == 0 or X.shape != (len(y), N_FEATURES):
        raise TrainingError(f"X must be (n, {N_FEATURES}) and aligned with y")
    if not np.isfinite(X).all():
        raise TrainingError("features must be finite; impute missing values first")
    if y.min() == y.max():
        raise TrainingError("training labels contain a single class")

    means, sds = standardization(X)
    Z = (X - means) / sds
    params = np.zeros(N_FEATURES + 1)
    p0 = y.mean()
    params[0] = np.log(p0 / (1 - p0))
    loss, grad = loss_and_grad(params, Z, y, C)
    step = 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(grad)) < tol:
            converged = True
            it -= 1
            break
        gg = grad @ grad
        step *= 2.0
        while True:
            trial = params - step * grad
            trial_loss, trial_grad = loss_and_grad(trial, Z, y, C)
            if trial_loss <= loss - 0.5 * step * gg or step < 1e-12:
                break
            step *= 0.5
        params, loss, grad = trial, trial_loss, trial_grad
    else:
        converged = np.max(np.abs(grad)) < tol
    if not converged:
        logger.warning("logistic regression did not converge in %d iterations", max_iter)
    return LinearModel(
        weights=params[1:],
        intercept=float(params[0]),
        C=C,
        means=means,
        sds=sds,
        converged=bool(converged),
        n_iter=it,
        metadata={"tol": tol, "max_iter": max_iter, "final_loss": loss, "n_train": int(len(y))},
    )


def train_logistic(train: Cohort, C: float = 0.001, tol: float = 1e-6, max_iter: int = 5000) -> LinearModel:
    return fit_logistic(train.X, train.y, C=C, tol=tol, max_iter=max_iter)
