"""JSON model files for both scorer kinds.

Trees are stored as nested nodes; every node carries ``cover`` because the
attribution code needs it. Floats are written with ``repr`` precision so a
reload predicts bit-identically.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any

import numpy as np

from ..errors import ModelError
from .logistic import LinearModel
from .tree import MODEL_VERSION, Tree, TreeEnsemble

SUPPORTED_VERSIONS = (MODEL_VERSION,)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _node_to_dict(tree: Tree, i: int) -> dict[str, Any]:
    if tree.left[i] < 0:
        return {"leaf_value": float(tree.value[i]), "cover": float(tree.cover[i])}
    return {
        "feature": int(tree.feature[i]),
        "threshold": float(tree.threshold[i]),
        "default_left": bool(tree.default_left[i]),
        "cover": float(tree.cover[i]),
        "left": _node_to_dict(tree, int(tree.left[i])),
        "right": _node_to_dict(tree, int(tree.right[i])),
    }


def _tree_from_dict(root: dict, where: str) -> Tree:
    cols: dict[str, list] = {k: [] for k in ("left", "right", "feature", "threshold", "default_left", "value", "cover")}

    def visit(node, path):
        if not isinstance(node, dict):
            raise ModelError(f"{path}: node must be an object")
        if "cover" not in node:
            raise ModelError(f"{path}: node is missing 'cover' (required for attribution)")
        i = len(cols["left"])
        for k in cols:
            cols[k].append(None)
        cols["cover"][i] = float(node["cover"])
        if "leaf_value" in node:
            cols["left"][i] = cols["right"][i] = cols["feature"][i] = -1
            cols["threshold"][i] = 0.0
            cols["default_left"][i] = True
            cols["value"][i] = float(node["leaf_value"])
            return i
        try:
            cols["feature"][i] = int(node["feature"])
            cols["threshold"][i] = float(node["threshold"])
            cols["default_left"][i] = bool(node.get("default_left", True))
            left, right = node["left"], node["right"]
        except KeyError as exc:
            raise ModelError(f"{path}: split node is missing {exc.args[0]!r}") from None
        cols["value"][i] = 0.0
        cols["left"][i] = visit(left, path + ".left")
        cols["right"][i] = visit(right, path + ".right")
        return i

    visit(root, where)
    return Tree(**cols)


def model_to_dict(model, extra: dict | None = None) -> dict[str, Any]:
    doc: dict[str, Any] = {"model_version": model.model_version, "kind": model.kind}
    if isinstance(model, TreeEnsemble):
        doc["base_score"] = float(model.base_score)
        doc["learning_rate"] = float(model.learning_rate)
        doc["feature_names"] = list(model.feature_names)
        doc["trees"] = [_node_to_dict(t, 0) for t in model.trees]
    elif isinstance(model, LinearModel):
        doc["feature_names"] = list(model.feature_names)
        doc["weights"] = [float(v) for v in model.weights]
        doc["intercept"] = float(model.intercept)
        doc["C"] = float(model.C)
        doc["converged"] = bool(model.converged)
        doc["n_iter"] = int(model.n_iter)
        doc["standardization"] = {"means": [float(v) for v in model.means], "sds": [float(v) for v in model.sds]}
    else:
        raise ModelError(f"cannot serialize {type(model).__name__}")
    doc["metadata"] = _plain(model.metadata)
    if extra:
        doc.update(_plain(extra))
    return doc


def model_from_dict(doc: dict[str, Any]):
    version = doc.get("model_version")
    if version not in SUPPORTED_VERSIONS:
        raise ModelError(f"unsupported version {version!r} (supported: {', '.join(SUPPORTED_VERSIONS)})")
    names = doc.get("feature_names")
    if not isinstance(names, list) or len(names) != 26:
        raise ModelError(f"feature_names must list 26 names, got {None if names is None else len(names)}")
    kind = doc.get("kind")
    try:
        if kind == "gbdt":
            trees = [_tree_from_dict(t, f"trees[{k}]") for k, t in enumerate(doc["trees"])]
            return TreeEnsemble(
                trees=trees,
                base_score=float(doc["base_score"]),
                learning_rate=float(doc.get("learning_rate", 1.0)),
                feature_names=names,
                model_version=version,
                metadata=doc.get("metadata", {}),
            )
        if kind == "linear":
            std = doc["standardization"]
            return LinearModel(
                weights=doc["weights"],
                intercept=float(doc["intercept"]),
                C=float(doc["C"]),
                means=std["means"],
                sds=std["sds"],
                converged=bool(doc.get("converged", True)),
                n_iter=int(doc.get("n_iter", 0)),
                feature_names=names,
                model_version=version,
                metadata=doc.get("metadata", {}),
            )
    except KeyError as exc:
        raise ModelError(f"model file is missing {exc.args[0]!r}") from None
    raise ModelError(f"unknown model kind {kind!r}")


def dumps_model(model, extra: dict | None = None) -> str:
    return json.dumps(model_to_dict(model, extra), separators=(",", ":"))


def save_model(model, path: str | os.PathLike, extra: dict | None = None) -> None:
    Path(path).write_text(dumps_model(model, extra) + "\n", encoding="utf-8")


def load_model_document(path: str | os.PathLike) -> dict[str, Any]:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelError(f"cannot read model file {path}: {exc}") from None


def load_model(path: str | os.PathLike):
    return model_from_dict(load_model_document(path))
