"""Exact path-dependent Shapley attribution for tree ensembles.

Each leaf's contribution depends on the input only through which of its
path features are "hot" (the input satisfies every split on that feature
along the path). For short paths the Shapley weights of every hot/cold
pattern are tabulated once per model, so scoring a row is a mask lookup per
leaf. Long paths (leaf-wise trees) fall back to evaluating the same path
recurrences per row. Both routes share ``_path_weights``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from ..errors import ModelError
from ..model.logistic import LinearModel
from ..model.tree import Tree, TreeEnsemble

# Leaves with at most this many unique path features get a lookup table.
TABLE_MAX_FEATURES = 6


@dataclass
class ShapExplanation:
    base_value: float
    phi: np.ndarray
    margin: float

    def to_dict(self, feature_names=None) -> dict:
        out = {"base_value": self.base_value, "margin": self.margin, "phi": [float(v) for v in self.phi]}
        if feature_names is not None:
            out["feature_names"] = list(feature_names)
        return out


@numba.njit(cache=True, nogil=True)
def _path_weights(zero, one, d, pw, out):
    """Shapley weight times (one - zero) for path elements 1..d.

    Element 0 is the root placeholder (zero = one = 1). Writes ``out[k-1]``
    for each real element k.
    """
    for k in range(1, d + 1):
        if zero[k] == 0.0 and one[k] == 0.0:
            # the leaf is unreachable under every coalition
            for j in range(d):
                out[j] = 0.0
            return
    for depth in range(d + 1):
        pw[depth] = 1.0 if depth == 0 else 0.0
        z = zero[depth]
        o = one[depth]
        for i in range(depth - 1, -1, -1):
            pw[i + 1] += o * pw[i] * (i + 1) / (depth + 1)
            pw[i] = z * pw[i] * (depth - i) / (depth + 1)
    for k in range(1, d + 1):
        o = one[k]
        z = zero[k]
        nxt = pw[d]
        total = 0.0
        for i in range(d - 1, -1, -1):
            if o != 0.0:
                tmp = nxt * (d + 1) / ((i + 1) * o)
                total += tmp
                nxt = pw[i] - tmp * z * (d - i) / (d + 1)
            else:
                total += (pw[i] / z) * (d + 1) / (d - i)
        out[k - 1] = total * (o - z)


@numba.njit(cache=True, nogil=True)
def _fill_tables(leaf_d, leaf_off, leaf_tab, leaf_value, el_zero, tables):
    zero = np.empty(64)
    one = np.empty(64)
    pw = np.empty(64)
    out = np.empty(64)
    for L in range(leaf_d.shape[0]):
        t = leaf_tab[L]
        if t < 0:
            continue
        d = leaf_d[L]
        off = leaf_off[L]
        zero[0] = 1.0
        one[0] = 1.0
        for mask in range(1 << d):
            for k in range(d):
                zero[k + 1] = el_zero[off + k]
                one[k + 1] = 1.0 if (mask >> k) & 1 else 0.0
            _path_weights(zero, one, d, pw, out)
            for k in range(d):
                tables[t + mask * d + k] = leaf_value[L] * out[k]


@numba.njit(cache=True, nogil=True)
def _shap_rows(X, tree_leaves, leaf_d, leaf_off, leaf_tab, leaf_value, el_feat, el_lo, el_hi, el_nan, el_zero, tables, phi):
    n = X.shape[0]
    zero = np.empty(64)
    one = np.empty(64)
    pw = np.empty(64)
    out = np.empty(64)
    # tree-major order keeps one tree's tables cache-resident across rows
    for t in range(tree_leaves.shape[0] - 1):
        for r in range(n):
            for L in range(tree_leaves[t], tree_leaves[t + 1]):
                d = leaf_d[L]
                if d == 0:
                    continue
                off = leaf_off[L]
                mask = 0
                for k in range(d):
                    v = X[r, el_feat[off + k]]
                    if np.isnan(v):
                        ok = el_nan[off + k]
                    else:
                        ok = el_lo[off + k] <= v and v < el_hi[off + k]
                    if ok:
                        mask |= 1 << k
                tab = leaf_tab[L]
                if tab >= 0:
                    base = tab + mask * d
                    for k in range(d):
                        phi[r, el_feat[off + k]] += tables[base + k]
                else:
                    zero[0] = 1.0
                    one[0] = 1.0
                    for k in range(d):
                        zero[k + 1] = el_zero[off + k]
                        one[k + 1] = 1.0 if (mask >> k) & 1 else 0.0
                    _path_weights(zero, one, d, pw, out)
                    for k in range(d):
                        phi[r, el_feat[off + k]] += leaf_value[L] * out[k]


@dataclass
class ShapPlan:
    """Per-leaf path summaries of an ensemble, ready for the row kernel."""

    expected_value: float
    tree_leaves: np.ndarray
    leaf_d: np.ndarray
    leaf_off: np.ndarray
    leaf_tab: np.ndarray
    leaf_value: np.ndarray
    el_feat: np.ndarray
    el_lo: np.ndarray
    el_hi: np.ndarray
    el_nan: np.ndarray
    el_zero: np.ndarray
    tables: np.ndarray

    def explain_rows(self, X: np.ndarray) -> np.ndarray:
        phi = np.zeros(X.shape, dtype=np.float64)
        _shap_rows(
            X, self.tree_leaves, self.leaf_d, self.leaf_off, self.leaf_tab, self.leaf_value,
            self.el_feat, self.el_lo, self.el_hi, self.el_nan, self.el_zero, self.tables, phi,
        )
        return phi


def _tree_leaves(tree: Tree, where: str):
    """Yield (value, path probability, unique-feature conditions) per leaf.

    Conditions per feature: [lo, hi, nan_ok, zero_fraction]; repeated splits
    on a feature intersect their intervals and multiply zero fractions.
    """
    leaves = []
    stack = [(0, 1.0, {})]
    while stack:
        node, prob, conds = stack.pop()
        if tree.left[node] < 0:
            leaves.append((float(tree.value[node]), prob, conds))
            continue
        cover = float(tree.cover[node])
        if not cover > 0:
            raise ModelError(f"{where}: split node {node} has zero cover; path expectations are undefined")
        f = int(tree.feature[node])
        thr = float(tree.threshold[node])
        dleft = bool(tree.default_left[node])
        for child, goes_left in ((int(tree.right[node]), False), (int(tree.left[node]), True)):
            frac = float(tree.cover[child]) / cover
            lo, hi, nan_ok, zero = conds.get(f, (-np.inf, np.inf, True, 1.0))
            if goes_left:
                hi = min(hi, thr)
            else:
                lo = max(lo, thr)
            new = dict(conds)
            new[f] = (lo, hi, nan_ok and (goes_left == dleft), zero * frac)
            stack.append((child, prob * frac, new))
    return leaves


def build_plan(model: TreeEnsemble, table_max_features: int = TABLE_MAX_FEATURES) -> ShapPlan:
    expected = float(model.base_score)
    leaf_d, leaf_off, leaf_tab, leaf_value = [], [], [], []
    feat, lo, hi, nan_ok, zero = [], [], [], [], []
    tree_leaves = [0]
    table_size = 0
    for t, tree in enumerate(model.trees):
        if not tree.cover[0] > 0 and tree.n_nodes > 1:
            raise ModelError(f"trees[{t}]: root cover must be positive")
        for value, prob, conds in _tree_leaves(tree, f"trees[{t}]"):
            expected += prob * value
            d = len(conds)
            if d > 60:
                raise ModelError("leaf path has too many unique features")
            leaf_d.append(d)
            leaf_off.append(len(feat))
            leaf_value.append(value)
            if 0 < d <= table_max_features:
                leaf_tab.append(table_size)
                table_size += (1 << d) * d
            else:
                leaf_tab.append(-1)
            for f in sorted(conds):
                c = conds[f]
                feat.append(f)
                lo.append(c[0])
                hi.append(c[1])
                nan_ok.append(c[2])
                zero.append(c[3])
        tree_leaves.append(len(leaf_d))
    plan = ShapPlan(
        expected_value=expected,
        tree_leaves=np.asarray(tree_leaves, dtype=np.int64),
        leaf_d=np.asarray(leaf_d, dtype=np.int64),
        leaf_off=np.asarray(leaf_off, dtype=np.int64),
        leaf_tab=np.asarray(leaf_tab, dtype=np.int64),
        leaf_value=np.asarray(leaf_value, dtype=np.float64),
        el_feat=np.asarray(feat, dtype=np.int64),
        el_lo=np.asarray(lo, dtype=np.float64),
        el_hi=np.asarray(hi, dtype=np.float64),
        el_nan=np.asarray(nan_ok, dtype=np.bool_),
        el_zero=np.asarray(zero, dtype=np.float64),
        tables=np.zeros(table_size, dtype=np.float64),
    )
    _fill_tables(plan.leaf_d, plan.leaf_off, plan.leaf_tab, plan.leaf_value, plan.el_zero, plan.tables)
    return plan


def _plan_for(model: TreeEnsemble) -> ShapPlan:
    # plans are cached on the (immutable) model instance
    plan = model.__dict__.get("_shap_plan")
    if plan is None:
        plan = build_plan(model)
        model.__dict__["_shap_plan"] = plan
    return plan


def expected_margin(model: TreeEnsemble) -> float:
    """Cover-weighted expected margin: the attribution base value."""
    return _plan_for(model).expected_value


def _as_matrix(model, X) -> np.ndarray:
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got shape {X.shape}")
    return X


def shap_values(model, X) -> tuple[float, np.ndarray]:
    """Base value and an (n, 26) attribution matrix for a batch of rows."""
    X = _as_matrix(model, X)
    if isinstance(model, LinearModel):
        return float(model.intercept), model.contributions(X)
    if not isinstance(model, TreeEnsemble):
        raise TypeError(f"unsupported model type {type(model).__name__}")
    plan = _plan_for(model)
    return plan.expected_value, plan.explain_rows(X)


def tree_shap(model, x) -> ShapExplanation:
    from ..model import predict_margin

    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.n_features,):
        raise ValueError(f"expected a vector of {model.n_features} features")
    base, phi = shap_values(model, x[None, :])
    return ShapExplanation(base_value=base, phi=phi[0], margin=float(predict_margin(model, x)))


def explain_batch(model, X) -> list[ShapExplanation]:
    from ..model import predict_margin

    X = _as_matrix(model, X)
    base, phi = shap_values(model, X)
    margins = predict_margin(model, X)
    return [ShapExplanation(base, phi[i], float(margins[i])) for i in range(len(X))]


def _subset_values(tree: Tree, x: np.ndarray, used: list[int]) -> np.ndarray:
    """v(S) for every coalition S over ``used`` (bit k <-> used[k])."""
    M = len(used)
    masks = np.arange(1 << M)
    bit_of = {f: k for k, f in enumerate(used)}

    def value(node):
        if tree.left[node] < 0:
            return np.full(1 << M, float(tree.value[node]))
        f = int(tree.feature[node])
        lv, rv = value(int(tree.left[node])), value(int(tree.right[node]))
        cl, cr, c = float(tree.cover[int(tree.left[node])]), float(tree.cover[int(tree.right[node])]), float(tree.cover[node])
        if not c > 0:
            raise ModelError("split node with zero cover")
        v = x[f]
        goes_left = bool(tree.default_left[node]) if np.isnan(v) else v < tree.threshold[node]
        known = (masks >> bit_of[f]) & 1 == 1
        return np.where(known, lv if goes_left else rv, (cl * lv + cr * rv) / c)

    return value(0)


def brute_force_shap(model: TreeEnsemble, x, feature_subset_limit: int = 15) -> ShapExplanation:
    """Reference attribution by summing over every coalition of used features."""
    from ..model import predict_margin

    x = np.asarray(x, dtype=np.float64)
    used = sorted(model.used_features())
    M = len(used)
    if M > feature_subset_limit:
        raise ModelError(f"ensemble uses {M} features; brute force is limited to {feature_subset_limit}")
    v = np.full(1 << M, float(model.base_score))
    for tree in model.trees:
        v = v + _subset_values(tree, x, used)
    masks = np.arange(1 << M)
    sizes = np.array([bin(m).count("1") for m in masks])
    weight = np.array([math.factorial(s) * math.factorial(M - s - 1) / math.factorial(M) if s < M else 0.0 for s in range(M + 1)])
    phi = np.zeros(model.n_features)
    for k, f in enumerate(used):
        bit = 1 << k
        without = masks[(masks & bit) == 0]
        phi[f] = np.sum(weight[sizes[without]] * (v[without | bit] - v[without]))
    return ShapExplanation(base_value=float(v[0]), phi=phi, margin=float(predict_margin(model, x)))
