"""Acceptance criteria 1-12, one test each.

A summary line per criterion is printed at the end of the pytest run.
Run alone with ``pytest tests/test_acceptance.py -v``.
"""

from __future__ import annotations

import http.client
import itertools
import json
import math
import os
import shutil
import socket
import subprocess
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pytest
from scipy.special import expit

from _helpers import check_histograms, pairwise_auc, parse_text_format, random_ensemble, random_row, record
from readmit.cohort import (
    GeneratorConfig,
    apply_medians,
    chronological_split,
    fit_medians,
    generate_cohort,
    simulate,
)
from readmit.drift import fit_reference, kl_divergence, prediction_drift_check, smooth
from readmit.evaluation import auc_roc, bootstrap_ci, youden_threshold
from readmit.explain import brute_force_shap, shap_values, tree_shap
from readmit.fairness import (
    DIMENSIONS,
    PASS,
    TRIGGER,
    DimensionGaps,
    apply_equalized_odds,
    audit_fairness,
    dimension_passes,
    fit_equalized_odds,
    group_labels,
    group_rates,
    slice_subgroups,
    verdict_from_gaps,
)
from readmit.model import TrainConfig, fit_gbdt, fit_logistic, predict_margin, predict_proba, save_model
from readmit.serve import ReadmissionService, evaluate_slo, histogram_quantile, snapshot_from_exposition

ROOT = Path(__file__).resolve().parents[1]


def acceptance(number, title):
    return pytest.mark.acceptance(number, title)


@pytest.fixture(scope="session")
def deployment(tmp_path_factory):
    """666,666-row cohort (100,000-row test split) and the 300-tree depth-6 model."""
    t0 = time.perf_counter()
    cohort = generate_cohort(GeneratorConfig(n=666_666, seed=2))
    parts = chronological_split(cohort)
    medians = fit_medians(parts.train)
    train = apply_medians(parts.train, medians)
    test = apply_medians(parts.test, medians)
    t1 = time.perf_counter()
    model, _ = fit_gbdt(train.X, train.y, TrainConfig(max_depth=6, learning_rate=0.05, n_estimators=300))
    t2 = time.perf_counter()
    path = tmp_path_factory.mktemp("deploy") / "gbdt-depth.json"
    save_model(model, path, extra={"imputation": medians})
    return {
        "model": model,
        "path": path,
        "test": test,
        "raw_test": parts.test,
        "timings": {"data": t1 - t0, "train": t2 - t1},
    }


@acceptance(1, "Shapley oracle equivalence")
def test_c01_shapley_oracle(record_property):
    rng = np.random.default_rng(20240601)
    t0 = time.perf_counter()
    worst, cases = 0.0, 0
    for _ in range(200):
        m = random_ensemble(rng, max_trees=5, max_depth=4, n_used=int(rng.integers(1, 9)))
        assert len(m.used_features()) <= 8 and m.max_depth() <= 4 and len(m.trees) <= 5
        x = random_row(rng)
        a, b = tree_shap(m, x), brute_force_shap(m, x)
        worst = max(worst, float(np.abs(a.phi - b.phi).max()), abs(a.base_value - b.base_value))
        cases += 1
    elapsed = time.perf_counter() - t0
    record_property("detail", f"{cases} ensembles, max |diff| {worst:.1e}, {elapsed:.1f} s")
    assert worst <= 1e-9
    assert elapsed < 60


@acceptance(2, "Local accuracy on a 100,000-record test split")
def test_c02_local_accuracy(deployment, record_property):
    model, test = deployment["model"], deployment["test"]
    assert len(test) == 100_000 and len(model.trees) == 300 and model.max_depth() == 6
    t0 = time.perf_counter()
    base, phi = shap_values(model, test.X)
    err = float(np.max(np.abs(base + phi.sum(axis=1) - predict_margin(model, test.X))))
    t_shap = time.perf_counter() - t0
    total = deployment["timings"]["data"] + deployment["timings"]["train"] + t_shap
    record_property(
        "detail",
        f"max |base+sum(phi)-margin| {err:.1e}; attribution {t_shap:.0f} s, with data+training {total:.0f} s",
    )
    assert err <= 1e-9
    assert total < 300


@acceptance(3, "AUC equals O(n^2) pairwise counting")
def test_c03_auc_oracle(record_property):
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(100):
        n = int(rng.integers(2, 2001))
        y = (rng.random(n) < rng.uniform(0.05, 0.95)).astype(int)
        y[0], y[-1] = 1, 0
        s = np.round(rng.random(n), int(rng.integers(1, 6)))
        mismatches += auc_roc(s, y) != pairwise_auc(s, y)
    record_property("detail", f"{mismatches} mismatches in 100 sets")
    assert mismatches == 0


@acceptance(4, "Chronological split arithmetic at n = 415,231")
def test_c04_split_arithmetic(record_property):
    c = generate_cohort(GeneratorConfig(n=415_231, seed=4))
    parts = chronological_split(c)
    ids = np.concatenate([parts.train.ids, parts.validation.ids, parts.test.ids])
    record_property("detail", " / ".join(f"{s:,}" for s in parts.sizes))
    assert parts.sizes == (290_661, 62_285, 62_285)
    assert len(np.unique(ids)) == 415_231
    assert parts.train.times.max() <= parts.validation.times.min() <= parts.validation.times.max() <= parts.test.times.min()


@acceptance(5, "Generator prevalence within 0.5 pp of 18.0%")
def test_c05_prevalence(record_property):
    prev = {seed: float(generate_cohort(GeneratorConfig(n=100_000, seed=seed)).y.mean()) for seed in (7, 0, 1)}
    record_property("detail", ", ".join(f"seed {k}: {v:.4f}" for k, v in prev.items()))
    assert all(abs(v - 0.18) <= 0.005 for v in prev.values())


def _quality(seed: int, interaction: float) -> dict:
    sc = simulate(GeneratorConfig(n=60_000, seed=seed, interaction=interaction))
    c = sc.cohort
    parts = chronological_split(c)
    assert np.all(np.diff(c.ids) > 0)
    pos = np.searchsorted(c.ids, parts.test.ids)
    truth = auc_roc(sc.true_logit[pos], parts.test.y)
    gbdt, _ = fit_gbdt(parts.train.X, parts.train.y, TrainConfig(seed=seed))
    lr = fit_logistic(parts.train.X, parts.train.y)
    return {
        "truth": truth,
        "gbdt": auc_roc(predict_proba(gbdt, parts.test.X), parts.test.y),
        "logistic": auc_roc(predict_proba(lr, parts.test.X), parts.test.y),
    }


@acceptance(6, "GBDT quality vs ground truth and logistic (3 of 3 seeds)")
def test_c06_model_quality(record_property):
    rows = []
    ok = True
    for seed in (0, 1, 2):
        plain = _quality(seed, 0.0)
        inter = _quality(seed, 1.0)
        r_plain = plain["gbdt"] / plain["truth"]
        r_inter = inter["gbdt"] / inter["truth"]
        ok &= r_plain >= 0.95 and r_inter >= 0.95 and inter["gbdt"] > inter["logistic"]
        rows.append(
            f"seed {seed}: ratio {r_plain:.3f}/{r_inter:.3f}, interaction gbdt {inter['gbdt']:.3f} > lr {inter['logistic']:.3f}"
        )
    record_property("detail", "; ".join(rows))
    assert ok


@acceptance(7, "Fairness gate logic and equalized-odds post-processing")
def test_c07_fairness(record_property):
    # exact truth table on constructed metric grids
    grid = [0.0, 0.049, 0.05, 0.0501, 0.099, 0.10, 0.1001, 0.3]
    for a, f in itertools.product(grid, grid):
        assert dimension_passes(a, f) == (a <= 0.05 and f <= 0.10)
    for combo in itertools.product([True, False, None], repeat=len(DIMENSIONS)):
        gaps = [DimensionGaps(d, None, None, 2, p) for d, p in zip(DIMENSIONS, combo)]
        assert verdict_from_gaps(gaps) == (PASS if False not in combo else TRIGGER)

    # bias_knob = 2 cohort: audit on test split, policy fitted and measured on train predictions
    cfg = GeneratorConfig(n=120_000, seed=8, noise_sd=1.0, bias_knob={"gender=female": 2.0})
    parts = chronological_split(generate_cohort(cfg))
    model, _ = fit_gbdt(parts.train.X, parts.train.y, TrainConfig(n_estimators=100, max_depth=4))
    s_val = predict_proba(model, parts.validation.X)
    s_test = predict_proba(model, parts.test.X)
    threshold = youden_threshold(s_val, parts.validation.y).threshold
    audit = audit_fairness(s_test, parts.test.y, slice_subgroups(parts.test), threshold)
    gender = next(g for g in audit.gaps if g.dimension == "gender")

    s_fit = predict_proba(model, parts.train.X)
    groups = group_labels(parts.train, "gender")
    sizes = {g: int(np.sum(groups == g)) for g in np.unique(groups)}
    policy = fit_equalized_odds(s_fit, parts.train.y, groups, "gender", "randomized", threshold)
    decisions = apply_equalized_odds(policy, s_fit, groups, parts.train.ids, rng_seed=0).positive
    rates = group_rates(decisions, parts.train.y, groups)
    tpr_gap = max(r[0] for r in rates.values()) - min(r[0] for r in rates.values())
    fpr_gap = max(r[1] for r in rates.values()) - min(r[1] for r in rates.values())
    record_property(
        "detail",
        f"audit {audit.verdict} (gender dAUC {gender.delta_auc:.3f}, dFNR {gender.delta_fnr:.3f}); "
        f"after policy TPR gap {tpr_gap:.4f}, FPR gap {fpr_gap:.4f}; group sizes {sizes}",
    )
    assert audit.verdict == TRIGGER and gender.passes is False
    assert min(sizes.values()) >= 5000
    assert tpr_gap <= 0.02 and fpr_gap <= 0.02


@acceptance(8, "Drift: KL identities, two-bin alert, window gate")
def test_c08_drift(record_property):
    p = smooth(np.array([120, 40, 0, 7]))
    assert kl_divergence(p, p) == 0.0
    two_bin = kl_divergence(np.array([0.5, 0.5]), np.array([0.25, 0.75]))
    assert abs(two_bin - 0.1438) < 1e-4 and two_bin > 0.05

    rng = np.random.default_rng(8)
    val_preds = rng.beta(2.0, 7.0, size=20_000)
    ref = fit_reference(rng.normal(size=(50, 26)), val_preds, window=1000)
    W, shift = ref.window, 3 * ref.sigma / math.sqrt(ref.window)

    # a window with mean exactly mu, then shifted up and down by 3 sigma / sqrt(W)
    centred = np.quantile(val_preds, (np.arange(W) + 0.5) / W)
    centred = centred - centred.mean() + ref.mu
    assert not prediction_drift_check(ref, centred.tolist())[1]
    assert prediction_drift_check(ref, (centred + shift).tolist())[1]
    assert prediction_drift_check(ref, (centred - shift).tolist())[1]

    in_dist = np.mean([prediction_drift_check(ref, rng.choice(val_preds, W))[1] for _ in range(1000)])
    power = np.mean([prediction_drift_check(ref, rng.choice(val_preds, W) + shift)[1] for _ in range(1000)])
    record_property(
        "detail",
        f"two-bin KL {two_bin:.4f}; in-distribution alert rate {in_dist:.3f}; random shifted-window alert rate {power:.3f}",
    )
    assert 0.01 <= in_dist <= 0.10
    assert power >= 0.75  # a 3-SE shift against a 2-SE gate alerts about 84% of the time


@acceptance(9, "Bootstrap determinism, serial vs parallel")
def test_c09_bootstrap(record_property):
    rng = np.random.default_rng(9)
    s = rng.random(3000)
    y = (rng.random(3000) < s * 0.6).astype(int)
    a = bootstrap_ci(s, y, iters=1000, seed=42)
    b = bootstrap_ci(s, y, iters=1000, seed=42)
    c = bootstrap_ci(s, y, iters=1000, seed=42, n_jobs=4)
    record_property("detail", f"95% CI [{a.low!r}, {a.high!r}]")
    assert (a.low, a.high) == (b.low, b.high) == (c.low, c.high)
    assert a.to_dict() == c.to_dict()


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _request(conn, method, path, payload=None):
    body = None if payload is None else json.dumps(payload)
    headers = {} if payload is None else {"Content-Type": "application/json"}
    conn.request(method, path, body=body, headers=headers)
    resp = conn.getresponse()
    return resp.status, resp.read()


@acceptance(10, "Serving SLO: p99 <= 200 ms under 30 s of 20-client load")
def test_c10_serving_slo(deployment, record_property):
    port = _free_port()
    env = dict(os.environ, PYTHONUNBUFFERED="1")
    cmd = [sys.executable, "-m", "readmit.cli", "serve", "--model", str(deployment["path"]), "--port", str(port)]
    proc = subprocess.Popen(cmd, env=env, stdout=subprocess.DEVNULL, stderr=subprocess.PIPE)
    try:
        deadline = time.monotonic() + 120
        while True:
            try:
                conn = http.client.HTTPConnection("127.0.0.1", port, timeout=5)
                if _request(conn, "GET", "/health")[0] == 200:
                    conn.close()
                    break
            except OSError:
                pass
            assert proc.poll() is None, proc.stderr.read().decode()
            assert time.monotonic() < deadline, "server did not become healthy"
            time.sleep(0.25)

        raw = deployment["raw_test"]
        bodies = []
        for i in range(500):
            d = raw.record(i).to_dict()
            for k in ("admission_id", "admission_time", "label"):
                d.pop(k)
            bodies.append({k: v for k, v in d.items() if v is not None})

        n_clients, duration = 20, 30.0
        issued: dict[tuple[str, int], int] = {}
        client_ms: dict[str, list[float]] = {"predict": [], "explain": []}
        lock = threading.Lock()
        stop = time.monotonic() + duration

        def client(k: int) -> None:
            conn = http.client.HTTPConnection("127.0.0.1", port, timeout=30)
            local: dict[tuple[str, int], int] = {}
            lat: dict[str, list[float]] = {"predict": [], "explain": []}
            i = k
            while time.monotonic() < stop:
                ep = "predict" if i % 2 == 0 else "explain"
                t = time.perf_counter()
                status, _ = _request(conn, "POST", f"/{ep}", bodies[i % len(bodies)])
                lat[ep].append((time.perf_counter() - t) * 1000)
                local[(ep, status)] = local.get((ep, status), 0) + 1
                i += 1
            conn.close()
            with lock:
                for key, v in local.items():
                    issued[key] = issued.get(key, 0) + v
                for ep in lat:
                    client_ms[ep] += lat[ep]

        threads = [threading.Thread(target=client, args=(k,)) for k in range(n_clients)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        conn = http.client.HTTPConnection("127.0.0.1", port, timeout=10)
        status, text = _request(conn, "GET", "/metrics")
        conn.close()
        assert status == 200
        text = text.decode()
        check_histograms(parse_text_format(text))
        snap = snapshot_from_exposition(text)
        served = {(ep, int(st)): v for (ep, st), v in snap.requests.items()}
        p99 = {ep: histogram_quantile(snap.latency[ep], 0.99) for ep in ("predict", "explain")}
        client_p99 = {ep: float(np.percentile(v, 99)) for ep, v in client_ms.items()}
        slo = evaluate_slo(snap)
        total = sum(issued.values())
        record_property(
            "detail",
            f"{total} requests ({total / duration:.0f}/s), server p99 predict {p99['predict']:.1f} ms, "
            f"explain {p99['explain']:.1f} ms; client-observed p99 {client_p99['predict']:.1f}/"
            f"{client_p99['explain']:.1f} ms; counters reconcile: {served == issued}; SLO {slo.status}",
        )
        assert served == issued
        assert all(st == 200 for _, st in issued)
        assert p99["predict"] <= 200 and p99["explain"] <= 200
        assert slo.status == "pass"
    finally:
        proc.terminate()
        try:
            proc.wait(timeout=20)
        except subprocess.TimeoutExpired:
            proc.kill()


@acceptance(11, "Metrics exposition grammar and histogram counts")
def test_c11_exposition(small_model, small_split, record_property):
    svc = ReadmissionService(small_model, medians=fit_medians(small_split["train"]))
    good = {k: v for k, v in record().items() if k not in ("admission_id", "admission_time")}
    bad = dict(good, age=12)
    plan = [("predict", good), ("explain", good), ("predict", bad), ("explain", bad), ("predict", [1])] * 120
    issued = {"predict": 0, "explain": 0}
    scrapes = []

    def call(job):
        ep, body = job
        (svc.handle_predict if ep == "predict" else svc.handle_explain)(body)
        return ep

    with ThreadPoolExecutor(8) as pool:
        futures = [pool.submit(call, job) for job in plan]
        for i, f in enumerate(futures):
            issued[f.result()] += 1
            if i % 100 == 0:
                scrapes.append(svc.render_metrics()[1])
    final = svc.render_metrics()[1]
    for text in scrapes + [final]:
        check_histograms(parse_text_format(text))
    snap = snapshot_from_exposition(final)
    counts = {ep: snap.latency[ep].count for ep in issued}
    record_property("detail", f"{len(scrapes) + 1} scrapes parsed; _count {counts} vs issued {issued}")
    assert counts == issued
    assert final == svc.render_metrics()[1]


@acceptance(12, "End-to-end pipeline is byte-identical across two runs")
def test_c12_reproducible_pipeline(tmp_path, record_property):
    script = ROOT / "scripts" / "pipeline.sh"
    env = dict(os.environ, READMIT=f"{sys.executable} -m readmit.cli", N="100000", SEED="7")
    t0 = time.perf_counter()
    for run in ("run1", "run2"):
        proc = subprocess.run(["bash", str(script), str(tmp_path / run)], env=env, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr[-2000:]
    elapsed = time.perf_counter() - t0

    def artifacts(root: Path) -> dict[str, bytes]:
        return {
            str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*"))
            if p.is_file() and not p.name.startswith("manifest-")
        }

    a, b = artifacts(tmp_path / "run1"), artifacts(tmp_path / "run2")
    differing = sorted(k for k in a if a[k] != b.get(k))
    manifests = sorted((tmp_path / "run1").rglob("manifest-*.json"))
    from readmit.cli import verify_manifest

    broken = [str(m) for m in manifests if verify_manifest(m)]
    record_property(
        "detail",
        f"{len(a)} artifacts, {len(differing)} differ, {len(manifests)} manifests verified; two runs {elapsed / 60:.1f} min",
    )
    assert set(a) == set(b) and not differing
    assert not broken
    assert elapsed < 2 * 15 * 60
    shutil.rmtree(tmp_path, ignore_errors=True)
