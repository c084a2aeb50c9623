import math
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient
from scipy.special import logit

from _helpers import check_histograms, parse_text_format, record
from readmit.cohort import fit_medians
from readmit.errors import ConfigurationError
from readmit.model import save_model
from readmit.serve import (
    MetricsRegistry,
    ReadmissionService,
    ServeConfig,
    evaluate_slo,
    histogram_quantile,
    snapshot_from_exposition,
)
from readmit.serve.app import create_app
from readmit.serve.metrics import HistogramSnapshot, MetricsSnapshot


def body(**over):
    d = record(**over)
    d.pop("admission_id")
    d.pop("admission_time")
    return d


@pytest.fixture(scope="module")
def service(small_model, small_split):
    return ReadmissionService(small_model, medians=fit_medians(small_split["train"]))


@pytest.fixture
def fresh(small_model, small_split):
    return ReadmissionService(small_model, medians=fit_medians(small_split["train"]))


# --- handlers -----------------------------------------------------------------


def test_predict_response(service):
    status, out = service.handle_predict(body())
    assert status == 200
    assert set(out) == {"probability", "risk_flag", "threshold", "model_version", "request_id"}
    assert out["risk_flag"] == (out["probability"] >= 0.2285)
    again = service.handle_predict(body())[1]
    assert again["probability"] == out["probability"]


def test_predict_and_explain_agree(service, small_split):
    for i in range(20):
        rec = small_split["test"].record(i).to_dict()
        rec.pop("label")
        p = service.handle_predict(rec)[1]
        e = service.handle_explain(rec)[1]
        assert p["probability"] == e["probability"]
        total = e["base_value"] + sum(c["phi"] for c in e["contributions"]) + e["remainder_phi"]
        assert total == pytest.approx(logit(e["probability"]), abs=1e-6)
        assert len(e["contributions"]) == 10


def test_explain_full_listing(small_model, small_split):
    svc = ReadmissionService(small_model, medians=fit_medians(small_split["train"]), k=26)
    out = svc.handle_explain(body())[1]
    assert len(out["contributions"]) == 26 and out["remainder_phi"] == 0.0


def test_explain_top_feature_prior_admissions(service):
    out = service.handle_explain(body(prior_admissions_12mo=2))[1]
    assert out["contributions"][0]["feature"] == "prior_admissions_12mo"


def test_missing_fields_are_imputed(service):
    b = body()
    for k in ("length_of_stay", "n_medications"):
        del b[k]
    assert service.handle_predict(b)[0] == 200


def test_validation_errors(fresh):
    status, out = fresh.handle_predict(body(age=17))
    assert status == 422 and "age" in out["detail"]
    status, out = fresh.handle_predict(body(label=1))
    assert status == 422 and "label" in out["detail"]
    assert fresh.handle_explain(["not", "an", "object"])[0] == 422
    snap = fresh.registry.snapshot()
    assert snap.requests[("predict", "422")] == 2
    assert evaluate_slo(snap).availability == 1.0


def test_no_model_503():
    svc = ReadmissionService(None)
    assert svc.handle_predict(body())[0] == 503
    assert svc.handle_health()[0] == 503
    snap = svc.registry.snapshot()
    assert evaluate_slo(snap).availability == 0.0


def test_health(service):
    s1, h1 = service.handle_health()
    s2, h2 = service.handle_health()
    assert s1 == 200 and h1["status"] == "ok" and h2["uptime_seconds"] >= h1["uptime_seconds"]


def test_counter_identity_and_stable_scrape(fresh):
    for _ in range(3):
        fresh.handle_predict(body())
    _, text, ctype = fresh.render_metrics()
    assert 'requests_total{endpoint="predict",status="200"} 3' in text.splitlines()
    assert "version=0.0.4" in ctype
    assert fresh.render_metrics()[1] == text


def test_exposition_parses_after_interleaved_load(fresh):
    def hit(k):
        for i in range(30):
            if (i + k) % 5 == 0:
                fresh.handle_predict(body(age=5))
            elif i % 2:
                fresh.handle_explain(body())
            else:
                fresh.handle_predict(body())

    threads = [threading.Thread(target=hit, args=(k,)) for k in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    text = fresh.render_metrics()[1]
    fams = parse_text_format(text)
    check_histograms(fams)
    snap = snapshot_from_exposition(text)
    assert snap.total_requests == 180
    for ep, h in snap.latency.items():
        assert h.count == sum(v for (e, _), v in snap.requests.items() if e == ep)
        assert h.count == sum(h.counts)


def test_registry_concurrency_and_sum():
    reg = MetricsRegistry()
    lat = np.random.default_rng(0).exponential(20, size=(8, 500))

    def work(k):
        for v in lat[k]:
            reg.observe_request("predict", 200, float(v))

    threads = [threading.Thread(target=work, args=(k,)) for k in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    h = reg.snapshot().latency["predict"]
    assert reg.snapshot().requests[("predict", "200")] == 4000 == h.count == sum(h.counts)
    assert h.total == pytest.approx(lat.sum(), rel=1e-12)


def test_label_escaping_round_trip():
    reg = MetricsRegistry()
    reg.set_gauge("g", 1.5, {"feature": 'a"b\\c\nd'})
    fams = parse_text_format(reg.render())
    assert fams["g"][1][0][1]["feature"] == 'a"b\\c\nd'


# --- SLO ------------------------------------------------------------------------


def snapshot_with(ok, errors, bucket_ms=100.0):
    reg = MetricsRegistry()
    for _ in range(ok):
        reg.observe_request("predict", 200, bucket_ms)
    for _ in range(errors):
        reg.observe_request("predict", 500, bucket_ms)
    return reg.snapshot()


def test_slo_examples():
    r = evaluate_slo(snapshot_with(9995, 5))
    assert r.availability == pytest.approx(0.9995) and r.status == "pass"
    assert r.p99_predict_ms <= 200
    bad = evaluate_slo(snapshot_with(9980, 20))
    assert bad.status == "fail" and "availability" in bad.failing and "error_rate" in bad.failing
    assert evaluate_slo(MetricsSnapshot({}, {})).status == "insufficient data"


def test_slo_client_errors_do_not_count():
    reg = MetricsRegistry()
    for _ in range(100):
        reg.observe_request("predict", 422, 1.0)
    reg.observe_request("predict", 200, 1.0)
    assert evaluate_slo(reg.snapshot()).availability == 1.0


def test_slo_latency_fail():
    r = evaluate_slo(snapshot_with(100, 0, bucket_ms=400.0))
    assert r.status == "fail" and "p99_predict_latency_ms" in r.failing


def test_histogram_quantile():
    h = HistogramSnapshot((10.0, 20.0), [0, 10, 0], 150.0, 10)
    assert histogram_quantile(h, 0.5) == pytest.approx(15.0)
    assert math.isinf(histogram_quantile(HistogramSnapshot((10.0,), [0, 5], 100.0, 5), 0.99))


def test_slo_drift_gauge():
    reg = MetricsRegistry()
    reg.observe_request("predict", 200, 1.0)
    reg.set_gauge("drift_prediction_alert", 1.0)
    r = evaluate_slo(reg.snapshot())
    assert r.drift_alert and "drift" in r.failing


# --- HTTP and configuration -----------------------------------------------------


def test_http_endpoints(service):
    client = TestClient(create_app(service))
    r = client.post("/predict", json=body())
    assert r.status_code == 200 and 0 < r.json()["probability"] < 1
    r = client.post("/predict", content=b"{not json", headers={"content-type": "application/json"})
    assert r.status_code == 422
    r = client.post("/explain", json=body(age=17))
    assert r.status_code == 422 and "age" in r.json()["detail"]
    assert client.get("/health").json()["status"] == "ok"
    m = client.get("/metrics")
    assert m.status_code == 200 and m.headers["content-type"].startswith("text/plain")
    check_histograms(parse_text_format(m.text))


def test_config_precedence(tmp_path, small_model, small_split):
    cfg_path = tmp_path / "serve.cfg"
    cfg_path.write_text("threshold = 0.3\nport = 9000\nk = 5\n")
    cfg = ServeConfig.load(cfg_path, env={"READMIT_PORT": "9100"}, overrides={"k": 7, "host": None})
    assert (cfg.threshold, cfg.port, cfg.k, cfg.host) == (0.3, 9100, 7, "127.0.0.1")
    with pytest.raises(ConfigurationError):
        ServeConfig.load(None, env={}, overrides={"bogus": 1})
    with pytest.raises(ConfigurationError):
        ServeConfig.load(None, env={"READMIT_THRESHOLD": "2"})
    model_path = tmp_path / "m.json"
    save_model(small_model, model_path, extra={"imputation": fit_medians(small_split["train"])})
    svc = ReadmissionService.from_config(ServeConfig(model_path=str(model_path)))
    b = body()
    del b["charlson_index"]
    assert svc.handle_predict(b)[0] == 200
