import csv

import numpy as np
import pytest

from _helpers import random_ensemble, random_row
from readmit.cohort import FEATURE_NAMES
from readmit.errors import ModelError
from readmit.explain import (
    beeswarm_export,
    brute_force_shap,
    global_importance,
    shap_values,
    tree_shap,
    waterfall_report,
)
from readmit.explain.shap import ShapExplanation, build_plan
from readmit.model import Tree, TreeEnsemble, fit_logistic, predict_margin


def stump_model():
    return TreeEnsemble([Tree.stump(0, 0.5, 0.0, 1.0, 50.0, 50.0)])


def test_single_leaf():
    m = TreeEnsemble([Tree.leaf(0.3)])
    e = tree_shap(m, np.zeros(26))
    assert e.base_value == pytest.approx(0.3) and np.all(e.phi == 0)
    b = brute_force_shap(m, np.zeros(26))
    assert np.all(b.phi == 0)


def test_stump_example():
    x = np.zeros(26)
    x[0] = 0.7
    e = tree_shap(stump_model(), x)
    assert e.base_value == pytest.approx(0.5)
    assert e.phi[0] == pytest.approx(0.5) and np.all(e.phi[1:] == 0)
    b = brute_force_shap(stump_model(), x)
    assert b.phi[0] == pytest.approx(0.5)


def test_oracle_equivalence_suite():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(200):
        m = random_ensemble(rng)
        x = random_row(rng)
        a, b = tree_shap(m, x), brute_force_shap(m, x)
        worst = max(worst, np.abs(a.phi - b.phi).max(), abs(a.base_value - b.base_value))
    assert worst <= 1e-9


def test_table_and_per_row_routes_agree():
    rng = np.random.default_rng(5)
    for _ in range(50):
        m = random_ensemble(rng, max_trees=4, max_depth=6, n_used=10)
        X = np.stack([random_row(rng) for _ in range(8)])
        tab = build_plan(m).explain_rows(X)
        row = build_plan(m, table_max_features=0).explain_rows(X)
        assert np.max(np.abs(tab - row)) <= 1e-12


def test_local_accuracy_on_trained_model(small_model, small_split):
    X = small_split["test"].X
    base, phi = shap_values(small_model, X)
    assert np.max(np.abs(base + phi.sum(axis=1) - predict_margin(small_model, X))) <= 1e-9


def test_dummy_features_exactly_zero(small_model, small_split):
    _, phi = shap_values(small_model, small_split["test"].X)
    unused = sorted(set(range(26)) - small_model.used_features())
    assert unused, "fixture model should leave some features unused"
    assert np.all(phi[:, unused] == 0.0)


def test_additivity_across_trees(small_model, small_split):
    X = small_split["test"].X[:200]
    base, phi = shap_values(small_model, X)
    total = np.zeros_like(phi)
    for t in small_model.trees:
        total += shap_values(TreeEnsemble([t]), X)[1]
    assert np.max(np.abs(total - phi)) <= 1e-9


def test_symmetry():
    # f0 and f1 play mirrored roles: value depends on how many of them exceed 0.5
    t = Tree(
        left=[1, 3, 5, -1, -1, -1, -1],
        right=[2, 4, 6, -1, -1, -1, -1],
        feature=[0, 1, 1, -1, -1, -1, -1],
        threshold=[0.5] * 7,
        default_left=[True] * 7,
        value=[0, 0, 0, 0.0, 1.0, 1.0, 3.0],
        cover=[40, 20, 20, 10, 10, 10, 10],
    )
    m = TreeEnsemble([t])
    for v in (0.0, 1.0):
        x = np.zeros(26)
        x[0] = x[1] = v
        e = tree_shap(m, x)
        assert e.phi[0] == pytest.approx(e.phi[1], abs=1e-15)


def test_brute_force_refuses_many_features():
    trees = [Tree.stump(f, 0.0, 0.0, 1.0) for f in range(16)]
    with pytest.raises(ModelError, match="limited"):
        brute_force_shap(TreeEnsemble(trees), np.zeros(26))


def test_zero_cover_split_is_model_error():
    t = Tree([1, -1, 3, -1, -1], [2, -1, 4, -1, -1], [0, -1, 1, -1, -1], [0.5] * 5, [True] * 5,
             [0, 1.0, 0, 2.0, 3.0], [10, 10, 0, 0, 0])
    with pytest.raises(ModelError, match="zero cover"):
        tree_shap(TreeEnsemble([t]), np.zeros(26))


def test_linear_model_attribution(small_split):
    tr = small_split["train"]
    lin = fit_logistic(tr.X, tr.y)
    X = small_split["test"].X[:100]
    base, phi = shap_values(lin, X)
    assert np.max(np.abs(base + phi.sum(axis=1) - predict_margin(lin, X))) <= 1e-9


def test_global_importance_examples():
    zeros = global_importance(np.zeros((3, 26)), np.zeros((3, 26)))
    assert np.all(zeros.mean_abs_phi == 0) and zeros.ranking == list(range(26))
    phi = np.zeros((2, 26))
    phi[:, 0] = [0.1, -0.3]
    imp = global_importance(phi, np.zeros((2, 26)))
    assert imp.mean_abs_phi[0] == pytest.approx(0.2)
    with pytest.raises(ValueError):
        global_importance(np.zeros((0, 26)), np.zeros((0, 26)))


def test_importance_direction_labels():
    rng = np.random.default_rng(0)
    values = rng.normal(size=(500, 26))
    phi = np.zeros((500, 26))
    phi[:, 0] = values[:, 0]
    phi[:, 1] = -values[:, 1]
    phi[:, 2] = rng.normal(size=500)
    rows = {r["feature"]: r["direction"] for r in global_importance(phi, values).rows()}
    assert rows[FEATURE_NAMES[0]] == "increases risk"
    assert rows[FEATURE_NAMES[1]] == "decreases risk"
    assert rows[FEATURE_NAMES[2]] == "varies"


def test_prior_admissions_ranks_first(small_model, small_split):
    _, phi = shap_values(small_model, small_split["test"].X)
    imp = global_importance(phi, small_split["test"].X)
    assert imp.rows()[0]["feature"] == "prior_admissions_12mo"


def test_waterfall_remainder(small_model, small_split):
    x = small_split["test"].X[0]
    e = tree_shap(small_model, x)
    full = waterfall_report(e, x, k=26)
    assert full.remainder == 0.0 and len(full.entries) == 26
    top = waterfall_report(e, x, k=3)
    listed = sum(en.phi for en in top.entries)
    assert top.base_value + listed + top.remainder == pytest.approx(e.margin, abs=1e-12)
    mags = [abs(en.phi) for en in top.entries]
    assert mags == sorted(mags, reverse=True)


def test_waterfall_stump_k1():
    x = np.zeros(26)
    x[0] = 0.7
    r = waterfall_report(tree_shap(stump_model(), x), x, k=1)
    assert len(r.entries) == 1 and r.entries[0].feature == FEATURE_NAMES[0]
    assert r.entries[0].phi == pytest.approx(0.5) and r.remainder == pytest.approx(0.0, abs=1e-15)


def test_beeswarm_cardinality(tmp_path, small_model, small_split):
    X = small_split["test"].X[:3]
    _, phi = shap_values(small_model, X)
    path = tmp_path / "bee.csv"
    assert beeswarm_export(phi, X, path, patient_ids=small_split["test"].ids[:3]) == 78
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 78 and set(rows[0]) == {"patient_id", "feature", "value", "phi"}
    with pytest.raises(ValueError):
        beeswarm_export(phi, X[:2], tmp_path / "x.csv")


def test_explanation_dict_round():
    e = ShapExplanation(0.1, np.arange(26, dtype=float), 0.1 + np.arange(26).sum())
    d = e.to_dict()
    assert d["base_value"] == 0.1 and len(d["phi"]) == 26
