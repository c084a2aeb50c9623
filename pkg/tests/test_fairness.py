import itertools
import json

import numpy as np
import pytest
from scipy.special import expit

from _helpers import record
from readmit.cohort import Cohort, GeneratorConfig, PatientRecord, simulate
from readmit.errors import ValidationError
from readmit.evaluation import auc_roc, youden_threshold
from readmit.fairness import (
    DIMENSIONS,
    PASS,
    TRIGGER,
    DimensionGaps,
    EqualizedOddsPolicy,
    GroupRule,
    SubgroupKey,
    apply_equalized_odds,
    audit_fairness,
    dimension_passes,
    fit_equalized_odds,
    group_labels,
    group_rates,
    slice_subgroups,
    verdict_from_gaps,
)


def test_direct_mapping():
    c = Cohort.from_records([PatientRecord.from_mapping(record(age=70, label=1))])
    members = {k for k, idx in slice_subgroups(c).items() if len(idx)}
    assert members == {
        SubgroupKey("race", "White"),
        SubgroupKey("age_group", "66-75"),
        SubgroupKey("gender", "male"),
        SubgroupKey("insurance", "Medicare"),
    }


def test_sixteen_groups_partition(small_cohort):
    groups = slice_subgroups(small_cohort)
    assert len(groups) == 16
    n = len(small_cohort)
    for dim in DIMENSIONS:
        idx = np.concatenate([v for k, v in groups.items() if k.dimension == dim])
        assert len(idx) == n and len(np.unique(idx)) == n


def test_inconsistent_age_group_rejected(small_cohort):
    X = small_cohort.X[:5].copy()
    X[0, 21:26] = 0
    with pytest.raises(ValidationError):
        group_labels(X, "age_group")


def test_gate_truth_table():
    grid = [0.0, 0.03, 0.05, 0.0500001, 0.10, 0.1000001, 0.2]
    for a, f in itertools.product(grid, grid):
        assert dimension_passes(a, f) == (a <= 0.05 and f <= 0.10)
    assert dimension_passes(0.708 - 0.678, 0.0)
    states = [True, False, None]
    for combo in itertools.product(states, repeat=4):
        gaps = [DimensionGaps(d, None, None, 2, s) for d, s in zip(DIMENSIONS, combo)]
        expect = PASS if all(s is not False for s in combo) else TRIGGER
        assert verdict_from_gaps(gaps) == expect


def constructed(rng, aucs_shift, n=400):
    """Groups whose positives are shifted by different amounts."""
    scores, labels, groups = [], [], {}
    start = 0
    for name, shift in aucs_shift.items():
        y = (np.arange(n) % 4 == 0).astype(int)
        s = expit(rng.normal(size=n) + shift * y)
        groups[SubgroupKey("race", name)] = np.arange(start, start + n)
        scores.append(s)
        labels.append(y)
        start += n
    return np.concatenate(scores), np.concatenate(labels), groups


def test_audit_group_auc_matches_slice(rng):
    s, y, groups = constructed(rng, {"White": 1.0, "Black": 1.5, "Asian": 2.0})
    audit = audit_fairness(s, y, groups, 0.5)
    for g in audit.groups:
        idx = groups[SubgroupKey(g.dimension, g.group)]
        assert g.auc == auc_roc(s[idx], y[idx])


def test_audit_one_group_per_dimension_passes(rng):
    s, y, groups = constructed(rng, {"White": 1.0})
    audit = audit_fairness(s, y, groups, 0.5)
    assert audit.verdict == PASS and audit.gaps[0].delta_auc is None and audit.warnings


def test_audit_small_groups_excluded(rng):
    s, y, groups = constructed(rng, {"White": 1.0, "Black": 1.5}, n=40)
    audit = audit_fairness(s, y, groups, 0.5)
    assert not any(g.evaluable for g in audit.groups)
    assert audit.verdict == PASS


def test_gap_monotonicity(rng):
    s, y, groups = constructed(rng, {"White": 0.5, "Black": 3.0})
    base = audit_fairness(s, y, groups, 0.5).gaps[0]
    s2, y2, groups2 = constructed(np.random.default_rng(7), {"White": 0.5, "Black": 3.0, "Asian": 1.7})
    s2[: len(s)], y2[: len(y)] = s, y  # first two groups identical to the base case
    audit = audit_fairness(s2, y2, groups2, 0.5)
    g = audit.gaps[0]
    inside = [m for m in audit.groups if m.group == "Asian"][0]
    lo = min(m.auc for m in audit.groups if m.group != "Asian")
    hi = max(m.auc for m in audit.groups if m.group != "Asian")
    lo_f = min(m.fnr for m in audit.groups if m.group != "Asian")
    hi_f = max(m.fnr for m in audit.groups if m.group != "Asian")
    assert lo <= inside.auc <= hi and lo_f <= inside.fnr <= hi_f
    assert (g.delta_auc, g.delta_fnr) == (base.delta_auc, base.delta_fnr)


def test_audit_serialization(rng, tmp_path):
    s, y, groups = constructed(rng, {"White": 0.5, "Black": 3.0})
    audit = audit_fairness(s, y, groups, 0.5)
    doc = json.loads(audit.to_json())
    assert doc["verdict"] == TRIGGER
    audit.write_csv(tmp_path / "f.csv")
    header = (tmp_path / "f.csv").read_text().splitlines()[0].split(",")
    assert header[:6] == ["dimension", "group", "n", "auc", "fnr", "ppv"]


def test_bias_knob_cohort_triggers_audit():
    cfg = GeneratorConfig(n=60_000, seed=5, noise_sd=1.0, bias_knob={"gender=female": 3.0})
    sc = simulate(cfg)
    scores = expit(sc.true_logit)
    c = sc.cohort
    audit = audit_fairness(scores, c.y, slice_subgroups(c), youden_threshold(scores, c.y).threshold)
    gender = [g for g in audit.gaps if g.dimension == "gender"][0]
    assert gender.passes is False and audit.verdict == TRIGGER


def test_single_group_policy_is_youden(rng):
    s = rng.random(600)
    y = (rng.random(600) < s).astype(int)
    pol = fit_equalized_odds(s, y, np.array(["a"] * 600))
    rule = pol.rules["a"]
    yt = youden_threshold(s, y)
    decided = apply_equalized_odds(pol, s, ["a"] * 600, np.arange(600)).positive
    assert np.array_equal(decided, s >= yt.threshold)
    assert (rule.p == 1.0 and rule.t_lo == yt.threshold) or (rule.p == 0.0 and rule.t_hi == yt.threshold)


def test_identical_groups_reproduce_global_threshold(rng):
    s = rng.random(500)
    y = (rng.random(500) < s).astype(int)
    S, Y = np.concatenate([s, s]), np.concatenate([y, y])
    G = np.array(["a"] * 500 + ["b"] * 500)
    pol = fit_equalized_odds(S, Y, G)
    ra, rb = pol.rules["a"], pol.rules["b"]
    assert (ra.t_lo, ra.t_hi, ra.p) == (rb.t_lo, rb.t_hi, rb.p)
    t = youden_threshold(S, Y).threshold
    assert np.array_equal(apply_equalized_odds(pol, S, G, np.arange(1000)).positive, S >= t)


def test_equalized_odds_closes_gaps_on_fit_data():
    cfg = GeneratorConfig(n=60_000, seed=5, noise_sd=1.0, bias_knob={"gender=female": 2.0})
    sc = simulate(cfg)
    c = sc.cohort
    scores = expit(sc.true_logit)
    g = group_labels(c, "gender")
    pol = fit_equalized_odds(scores, c.y, g, "gender")
    rates = group_rates(apply_equalized_odds(pol, scores, g, c.ids, 0).positive, c.y, g)
    tprs = [r[0] for r in rates.values()]
    fprs = [r[1] for r in rates.values()]
    assert max(tprs) - min(tprs) <= 0.02 and max(fprs) - min(fprs) <= 0.02
    back = EqualizedOddsPolicy.from_dict(json.loads(json.dumps(pol.to_dict())))
    assert np.array_equal(
        apply_equalized_odds(back, scores, g, c.ids, 0).positive,
        apply_equalized_odds(pol, scores, g, c.ids, 0).positive,
    )


def _policy(p=0.3, mode="randomized"):
    return EqualizedOddsPolicy("race", {"a": GroupRule(0.2, 0.6, p, 0.1, 0.5)}, 0.1, 0.5, mode, global_threshold=0.5)


def test_apply_p_one_is_t_lo():
    s = np.linspace(0, 1, 101)
    d = apply_equalized_odds(_policy(p=1.0), s, ["a"] * 101, np.arange(101)).positive
    assert np.array_equal(d, s >= 0.2)


def test_apply_below_both_thresholds_negative():
    d = apply_equalized_odds(_policy(), np.full(50, 0.1), ["a"] * 50, np.arange(50)).positive
    assert not d.any()


def test_apply_randomization_rate():
    n = 10_000
    d = apply_equalized_odds(_policy(p=0.3), np.full(n, 0.4), ["a"] * n, np.arange(n), rng_seed=11).positive
    assert abs(d.mean() - 0.3) <= 0.02
    again = apply_equalized_odds(_policy(p=0.3), np.full(n, 0.4), ["a"] * n, np.arange(n), rng_seed=11).positive
    assert np.array_equal(d, again)


def test_apply_unknown_group_falls_back():
    out = apply_equalized_odds(_policy(), [0.55, 0.45], ["zz", "zz"], [1, 2])
    assert list(out.fallback) == [True, True] and list(out.positive) == [True, False]
