"""Second-order gradient boosting on binary log loss with exact greedy splits."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numba
import numpy as np
from scipy.special import expit

from ..cohort.dataset import Cohort
from ..errors import TrainingError
from .tree import Tree, TreeEnsemble

logger = logging.getLogger(__name__)

DEPTH_WISE = "depth_wise"
LEAF_WISE = "leaf_wise"


@dataclass
class TrainConfig:
    growth: str = DEPTH_WISE
    max_depth: int = 6
    num_leaves: int = 63
    n_estimators: int = 300
    learning_rate: float = 0.05
    scale_pos_weight: float | None = None
    reg_lambda: float = 1.0
    min_child_weight: float = 1.0
    min_split_gain: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.growth not in (DEPTH_WISE, LEAF_WISE):
            raise TrainingError(f"growth must be {DEPTH_WISE!r} or {LEAF_WISE!r}")
        if self.n_estimators < 1:
            raise TrainingError("n_estimators must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise TrainingError("learning_rate must lie in (0, 1]")
        if self.growth == DEPTH_WISE and self.max_depth < 1:
            raise TrainingError("max_depth must be >= 1 for depth-wise growth")
        if self.growth == LEAF_WISE and self.num_leaves < 2:
            raise TrainingError("num_leaves must be >= 2")
        if self.scale_pos_weight is not None and self.scale_pos_weight < 1:
            raise TrainingError("scale_pos_weight must be >= 1")
        if self.reg_lambda < 0 or self.min_child_weight < 0 or self.min_split_gain < 0:
            raise TrainingError("regularization parameters must be non-negative")


@dataclass
class TrainingTrace:
    """Per-round diagnostics kept alongside (not inside) the model file."""

    loss: list[float]
    tree_gain: list[float]
    scale_pos_weight: float


# ---------------------------------------------------------------------------
# tree builder
#
# Each feature's distinct training values are numbered 0..k-1, so a node's
# gradient statistics per distinct value fill a small table. Scanning that
# table in value order visits exactly the candidates of an exact greedy
# search (midpoints between consecutive values present in the node).


@numba.njit(cache=True, nogil=True)
def _node_sums(rows, start, end, g, h):
    G = 0.0
    H = 0.0
    for k in range(start, end):
        r = rows[k]
        G += g[r]
        H += h[r]
    return G, H


@numba.njit(cache=True, nogil=True)
def _best_split(codes, offsets, bin_values, rows, start, end, g, h, G, H, lam, mcw, min_gain, hg, hh, hc):
    """Best (feature, threshold, code) for a node, or feature -1.

    Features are scanned in index order and values ascending, replacing the
    incumbent only on a strictly larger gain: ties keep the lowest feature
    index and then the lowest threshold.
    """
    n_features = codes.shape[1]
    hg[:] = 0.0
    hh[:] = 0.0
    hc[:] = 0
    for k in range(start, end):
        r = rows[k]
        gr = g[r]
        hr = h[r]
        for f in range(n_features):
            b = offsets[f] + codes[r, f]
            hg[b] += gr
            hh[b] += hr
            hc[b] += 1
    parent = G * G / (H + lam)
    best_gain = min_gain
    best_f = -1
    best_thr = 0.0
    best_code = 0
    for f in range(n_features):
        GL = 0.0
        HL = 0.0
        prev = -1
        for b in range(offsets[f], offsets[f + 1]):
            if hc[b] == 0:
                continue
            if prev >= 0:
                HR = H - HL
                if HL >= mcw and HR >= mcw:
                    GR = G - GL
                    gain = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent)
                    if gain > best_gain:
                        xv = bin_values[prev]
                        xn = bin_values[b]
                        thr = xv + 0.5 * (xn - xv)
                        if thr <= xv:
                            thr = xn
                        best_gain = gain
                        best_f = f
                        best_thr = thr
                        best_code = prev - offsets[f]
            GL += hg[b]
            HL += hh[b]
            prev = b
    return best_f, best_thr, best_code, best_gain


@numba.njit(cache=True, nogil=True)
def _partition(codes, rows, start, end, f, code, tmp):
    """Stable partition of rows[start:end] into [code <= split | code > split]."""
    a = start
    b = 0
    for k in range(start, end):
        r = rows[k]
        if codes[r, f] <= code:
            rows[a] = r
            a += 1
        else:
            tmp[b] = r
            b += 1
    for k in range(b):
        rows[a + k] = tmp[k]
    return a - start


@numba.njit(cache=True, nogil=True)
def _build_tree(codes, offsets, bin_values, g, h, margin, leaf_wise, max_depth, max_leaves, lam, mcw, min_gain, lr):
    n = codes.shape[0]
    n_bins = offsets[-1]
    max_nodes = 2 * max_leaves - 1
    left = -np.ones(max_nodes, dtype=np.int32)
    right = -np.ones(max_nodes, dtype=np.int32)
    feature = -np.ones(max_nodes, dtype=np.int32)
    threshold = np.zeros(max_nodes)
    value = np.zeros(max_nodes)
    cover = np.zeros(max_nodes)
    start = np.zeros(max_nodes, dtype=np.int64)
    end = np.zeros(max_nodes, dtype=np.int64)
    depth = np.zeros(max_nodes, dtype=np.int64)
    nG = np.zeros(max_nodes)
    nH = np.zeros(max_nodes)
    cand_f = -np.ones(max_nodes, dtype=np.int32)
    cand_thr = np.zeros(max_nodes)
    cand_code = np.zeros(max_nodes, dtype=np.int64)
    cand_gain = np.zeros(max_nodes)
    is_open = np.zeros(max_nodes, dtype=np.bool_)

    rows = np.arange(n)
    tmp = np.empty(n, dtype=np.int64)
    hg = np.zeros(n_bins)
    hh = np.zeros(n_bins)
    hc = np.zeros(n_bins, dtype=np.int64)

    end[0] = n
    G, H = _node_sums(rows, 0, n, g, h)
    nG[0] = G
    nH[0] = H
    n_nodes = 1
    n_leaves = 1
    total_gain = 0.0

    if leaf_wise:
        f, thr, code, gain = _best_split(codes, offsets, bin_values, rows, 0, n, g, h, G, H, lam, mcw, min_gain, hg, hh, hc)
        cand_f[0] = f
        cand_thr[0] = thr
        cand_code[0] = code
        cand_gain[0] = gain
        is_open[0] = True
        while n_leaves < max_leaves:
            node = -1
            best = 0.0
            for i in range(n_nodes):
                if is_open[i] and cand_f[i] >= 0 and (node < 0 or cand_gain[i] > best):
                    node = i
                    best = cand_gain[i]
            if node < 0:
                break
            is_open[node] = False
            n_left = _partition(codes, rows, start[node], end[node], cand_f[node], cand_code[node], tmp)
            feature[node] = cand_f[node]
            threshold[node] = cand_thr[node]
            total_gain += cand_gain[node]
            bounds = (start[node], start[node] + n_left, end[node])
            for side in range(2):
                c = n_nodes
                n_nodes += 1
                start[c] = bounds[side]
                end[c] = bounds[side + 1]
                depth[c] = depth[node] + 1
                cG, cH = _node_sums(rows, start[c], end[c], g, h)
                nG[c] = cG
                nH[c] = cH
                is_open[c] = True
                if max_depth < 0 or depth[c] < max_depth:
                    f, thr, code, gain = _best_split(
                        codes, offsets, bin_values, rows, start[c], end[c], g, h, cG, cH, lam, mcw, min_gain, hg, hh, hc
                    )
                    cand_f[c] = f
                    cand_thr[c] = thr
                    cand_code[c] = code
                    cand_gain[c] = gain
                if side == 0:
                    left[node] = c
                else:
                    right[node] = c
            n_leaves += 1
    else:
        # breadth-first, so node ids grow level by level
        i = 0
        while i < n_nodes:
            if depth[i] < max_depth:
                f, thr, code, gain = _best_split(
                    codes, offsets, bin_values, rows, start[i], end[i], g, h, nG[i], nH[i], lam, mcw, min_gain, hg, hh, hc
                )
                if f >= 0:
                    n_left = _partition(codes, rows, start[i], end[i], f, code, tmp)
                    feature[i] = f
                    threshold[i] = thr
                    total_gain += gain
                    bounds = (start[i], start[i] + n_left, end[i])
                    for side in range(2):
                        c = n_nodes
                        n_nodes += 1
                        start[c] = bounds[side]
                        end[c] = bounds[side + 1]
                        depth[c] = depth[i] + 1
                        cG, cH = _node_sums(rows, start[c], end[c], g, h)
                        nG[c] = cG
                        nH[c] = cH
                        if side == 0:
                            left[i] = c
                        else:
                            right[i] = c
            i += 1

    for i in range(n_nodes):
        if left[i] < 0:
            v = -nG[i] / (nH[i] + lam) * lr
            value[i] = v
            cover[i] = nH[i]
            for k in range(start[i], end[i]):
                margin[rows[k]] += v
    # children always carry larger ids than their parent
    for i in range(n_nodes - 1, -1, -1):
        if left[i] >= 0:
            cover[i] = cover[left[i]] + cover[right[i]]
    return (
        left[:n_nodes],
        right[:n_nodes],
        feature[:n_nodes],
        threshold[:n_nodes],
        value[:n_nodes],
        cover[:n_nodes],
        total_gain,
    )


def _distinct_codes(X: np.ndarray):
    n_features = X.shape[1]
    codes = np.empty(X.shape, dtype=np.int32)
    values = []
    offsets = np.zeros(n_features + 1, dtype=np.int64)
    for f in range(n_features):
        uniq, inv = np.unique(X[:, f], return_inverse=True)
        codes[:, f] = inv.reshape(-1)
        values.append(uniq)
        offsets[f + 1] = offsets[f] + len(uniq)
    return codes, offsets, np.concatenate(values)


# ---------------------------------------------------------------------------


def weighted_logloss(margin, y, w):
    # log(1 + e^m) - y*m, computed stably
    loss = np.logaddexp(0.0, margin) - y * margin
    return float(np.sum(w * loss) / np.sum(w))


def fit_gbdt(
    X: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    sample_weight: np.ndarray | None = None,
    feature_names=None,
) -> tuple[TreeEnsemble, TrainingTrace]:
    """Boost trees on arrays.

    ``sample_weight`` multiplies each row's gradient and hessian; when it
    is omitted, positives get ``scale_pos_weight`` (default #neg/#pos).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
        raise TrainingError("X must be a non-empty 2-D array aligned with y")
    if not np.isfinite(X).all():
        raise TrainingError("features must be finite; impute missing values first")
    if not np.isin(y, (0.0, 1.0)).all():
        raise TrainingError("labels must be 0/1")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise TrainingError("training labels contain a single class")

    spw = config.scale_pos_weight
    if spw is None:
        spw = max(n_neg / n_pos, 1.0)
    if sample_weight is None:
        w = np.where(y == 1, spw, 1.0)
    else:
        w = np.asarray(sample_weight, dtype=np.float64)
        if w.shape != y.shape or (w < 0).any():
            raise TrainingError("sample_weight must be non-negative and aligned with y")
    w_pos = float(np.sum(w[y == 1]))
    w_neg = float(np.sum(w[y == 0]))
    base_score = float(np.log(w_pos / w_neg))

    codes, offsets, bin_values = _distinct_codes(X)

    leaf_wise = config.growth == LEAF_WISE
    if leaf_wise:
        max_leaves = config.num_leaves
        max_depth = -1
    else:
        max_leaves = 2**config.max_depth
        max_depth = config.max_depth

    margin = np.full(len(y), base_score)
    trees: list[Tree] = []
    losses = [weighted_logloss(margin, y, w)]
    gains = []
    for _ in range(config.n_estimators):
        p = expit(margin)
        g = (p - y) * w
        h = p * (1.0 - p) * w
        left, right, feat, thr, value, cover, gain = _build_tree(
            codes, offsets, bin_values, g, h, margin, leaf_wise, max_depth, max_leaves,
            config.reg_lambda, config.min_child_weight, config.min_split_gain, config.learning_rate,
        )
        trees.append(
            Tree(left, right, feat, thr, np.ones(len(left), dtype=np.bool_), value, cover)
        )
        losses.append(weighted_logloss(margin, y, w))
        gains.append(float(gain))
    meta = {"train_config": asdict(config), "scale_pos_weight": spw, "n_train": int(len(y))}
    kwargs = {} if feature_names is None else {"feature_names": feature_names}
    model = TreeEnsemble(trees, base_score=base_score, learning_rate=config.learning_rate, metadata=meta, **kwargs)
    return model, TrainingTrace(loss=losses, tree_gain=gains, scale_pos_weight=spw)


def train_gbdt(train: Cohort, config: TrainConfig) -> TreeEnsemble:
    model, trace = fit_gbdt(train.X, train.y, config)
    logger.info(
        "trained %d trees (%s), final train loss %.5f", len(model.trees), config.growth, trace.loss[-1]
    )
    return model
