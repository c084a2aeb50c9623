"""Tree ensembles over log-odds and their traversal kernels."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numba
import numpy as np

from ..cohort.schema import FEATURE_NAMES, N_FEATURES
from ..errors import ModelError

MODEL_VERSION = "readmit-v1"


@dataclass
class Tree:
    """One regression tree in flat-array form.

    Node 0 is the root. ``left[i] == -1`` marks a leaf. A row goes left
    when ``x[feature] < threshold``; NaN follows ``default_left``.
    """

    left: np.ndarray
    right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    default_left: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=np.int32)
        self.right = np.asarray(self.right, dtype=np.int32)
        self.feature = np.asarray(self.feature, dtype=np.int32)
        self.threshold = np.asarray(self.threshold, dtype=np.float64)
        self.default_left = np.asarray(self.default_left, dtype=np.bool_)
        self.value = np.asarray(self.value, dtype=np.float64)
        self.cover = np.asarray(self.cover, dtype=np.float64)

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    def is_leaf(self, i: int) -> bool:
        return self.left[i] < 0

    @classmethod
    def leaf(cls, value: float, cover: float = 1.0) -> "Tree":
        return cls([-1], [-1], [-1], [0.0], [True], [value], [cover])

    @classmethod
    def stump(cls, feature, threshold, left_value, right_value, left_cover=1.0, right_cover=1.0) -> "Tree":
        return cls(
            left=[1, -1, -1],
            right=[2, -1, -1],
            feature=[feature, -1, -1],
            threshold=[threshold, 0.0, 0.0],
            default_left=[True, True, True],
            value=[0.0, left_value, right_value],
            cover=[left_cover + right_cover, left_cover, right_cover],
        )

    def max_depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        best = 0
        for i in range(self.n_nodes):
            if self.left[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
                best = max(best, depth[i] + 1)
        return best

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature[self.left >= 0]}

    def validate(self, n_features: int = N_FEATURES) -> None:
        n = self.n_nodes
        if n == 0:
            raise ModelError("tree has no nodes")
        arrays = (self.right, self.feature, self.threshold, self.default_left, self.value, self.cover)
        if any(len(a) != n for a in arrays):
            raise ModelError("tree arrays have inconsistent lengths")
        internal = self.left >= 0
        if ((self.right >= 0) != internal).any():
            raise ModelError("a split node needs both children")
        kids = np.concatenate([self.left[internal], self.right[internal]])
        if (kids >= n).any() or (kids < 1).any():
            raise ModelError("child index out of range")
        if len(np.unique(kids)) != len(kids) or len(kids) != n - 1:
            raise ModelError("every non-root node needs exactly one parent")
        seen, stack = 0, [0]
        while stack:
            i = stack.pop()
            seen += 1
            if seen > n:
                raise ModelError("tree contains a cycle")
            if self.left[i] >= 0:
                stack += [int(self.left[i]), int(self.right[i])]
        if seen != n:
            raise ModelError("tree has unreachable nodes")
        covers = self.cover[internal]
        kids_cover = self.cover[self.left[internal]] + self.cover[self.right[internal]]
        if not np.allclose(covers, kids_cover, rtol=1e-9, atol=1e-12):
            raise ModelError("node cover must equal the sum of its children's covers")
        f = self.feature[internal]
        if ((f < 0) | (f >= n_features)).any():
            raise ModelError(f"split feature index outside [0, {n_features})")
        if not np.isfinite(self.threshold[internal]).all() or not np.isfinite(self.value).all():
            raise ModelError("non-finite threshold or leaf value")
        if not np.isfinite(self.cover).all() or (self.cover < 0).any():
            raise ModelError("covers must be finite and non-negative")


@dataclass
class TreeEnsemble:
    trees: list[Tree]
    base_score: float = 0.0
    learning_rate: float = 1.0
    feature_names: tuple[str, ...] = FEATURE_NAMES
    model_version: str = MODEL_VERSION
    metadata: dict = field(default_factory=dict)

    kind = "gbdt"

    def __post_init__(self):
        self.feature_names = tuple(self.feature_names)
        if len(self.feature_names) != N_FEATURES:
            raise ModelError(f"feature_names must list {N_FEATURES} names, got {len(self.feature_names)}")
        for t in self.trees:
            t.validate(len(self.feature_names))

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def used_features(self) -> set[int]:
        out: set[int] = set()
        for t in self.trees:
            out |= t.used_features()
        return out

    def truncated(self, n_trees: int) -> "TreeEnsemble":
        return TreeEnsemble(
            self.trees[:n_trees], self.base_score, self.learning_rate, self.feature_names, self.model_version
        )

    @cached_property
    def flat(self) -> "FlatEnsemble":
        return FlatEnsemble.from_trees(self.trees)

    def max_depth(self) -> int:
        return max((t.max_depth() for t in self.trees), default=0)


@dataclass
class FlatEnsemble:
    """All trees concatenated, child pointers made global, for the kernels."""

    roots: np.ndarray
    left: np.ndarray
    right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    default_left: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    max_depth: int

    @classmethod
    def from_trees(cls, trees: list[Tree]) -> "FlatEnsemble":
        if not trees:
            empty_i = np.zeros(0, dtype=np.int32)
            empty_f = np.zeros(0)
            return cls(empty_i, empty_i, empty_i, empty_i, empty_f, np.zeros(0, dtype=np.bool_), empty_f, empty_f, 0)
        sizes = np.array([t.n_nodes for t in trees])
        roots = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int32)

        def shift(arr, off):
            return np.where(arr >= 0, arr + off, -1)

        return cls(
            roots=roots,
            left=np.concatenate([shift(t.left, o) for t, o in zip(trees, roots)]).astype(np.int32),
            right=np.concatenate([shift(t.right, o) for t, o in zip(trees, roots)]).astype(np.int32),
            feature=np.concatenate([t.feature for t in trees]),
            threshold=np.concatenate([t.threshold for t in trees]),
            default_left=np.concatenate([t.default_left for t in trees]),
            value=np.concatenate([t.value for t in trees]),
            cover=np.concatenate([t.cover for t in trees]),
            max_depth=max(t.max_depth() for t in trees),
        )


@numba.njit(cache=True, nogil=True)
def _leaf_index(x, node, left, right, feature, threshold, default_left):
    while left[node] >= 0:
        v = x[feature[node]]
        if np.isnan(v):
            node = left[node] if default_left[node] else right[node]
        elif v < threshold[node]:
            node = left[node]
        else:
            node = right[node]
    return node


@numba.njit(cache=True, nogil=True)
def _predict_margin(X, base, roots, left, right, feature, threshold, default_left, value):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        m = base
        for t in range(roots.shape[0]):
            m += value[_leaf_index(X[i], roots[t], left, right, feature, threshold, default_left)]
        out[i] = m
    return out


def ensemble_margin(model: TreeEnsemble, X: np.ndarray) -> np.ndarray:
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    f = model.flat
    return _predict_margin(
        X, float(model.base_score), f.roots, f.left, f.right, f.feature, f.threshold, f.default_left, f.value
    )
