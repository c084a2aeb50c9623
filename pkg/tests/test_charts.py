import re

import pytest

from readmit.charts import render_chart
from readmit.errors import ConfigurationError
from readmit.evaluation import roc_points


def polyline_points(svg, series):
    m = re.search(rf'<polyline class="series" data-series="{series}" points="([^"]+)"', svg)
    return [tuple(map(float, p.split(","))) for p in m.group(1).split()]


def test_perfect_roc_geometry():
    fpr, tpr, _ = roc_points([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    rows = [{"fpr": str(a), "tpr": str(b)} for a, b in zip(fpr, tpr)]
    svg = render_chart(rows, "roc")
    pts = polyline_points(svg, "model")
    # axes: x 70..490, y 420..40
    corners = {(70.0, 420.0), (70.0, 40.0), (490.0, 40.0)}
    assert corners <= set(pts)
    assert pts[0] == (70.0, 420.0) and pts[-1] == (490.0, 40.0)
    assert all(x == 70.0 for x, y in pts if y > 40.0)


def test_sweep_threshold_marker():
    rows = [{"t": str(t / 10), "precision": "0.5", "recall": str(1 - t / 10), "f1": "0.4"} for t in range(11)]
    svg = render_chart(rows, "sweep", threshold=0.2285)
    m = re.search(r'<line class="threshold" x1="([\d.]+)" y1="[\d.]+" x2="([\d.]+)"[^>]*stroke-dasharray', svg)
    assert m and m.group(1) == m.group(2)
    assert float(m.group(1)) == pytest.approx(70 + 0.2285 * 420, abs=0.01)


@pytest.mark.parametrize(
    "kind,rows",
    [
        ("roc", [{"fpr": "0", "tpr": "0"}, {"fpr": "1", "tpr": "1"}]),
        ("prc", [{"recall": "0.5", "precision": "1"}, {"recall": "1", "precision": "0.5"}]),
        ("calibration", [{"mean_predicted": "0.1", "observed": "0.12"}]),
        ("importance", [{"feature": "age", "mean_abs_phi": "0.3"}, {"feature": "male", "mean_abs_phi": "0.1"}]),
        ("fairness_bars", [{"dimension": "race", "group": "White", "auc": "0.7", "fnr": "0.3"}]),
    ],
)
def test_deterministic_and_standalone(kind, rows, tmp_path):
    a = render_chart(rows, kind, tmp_path / "a.svg")
    b = render_chart(rows, kind, tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    assert a == b and a.startswith("<svg") and "href" not in a


def test_schema_mismatch_names_columns():
    with pytest.raises(ConfigurationError, match="fpr, tpr"):
        render_chart([{"x": "1"}], "roc")
    with pytest.raises(ConfigurationError, match="unknown chart kind"):
        render_chart([{"x": "1"}], "pie")


def test_multiple_series():
    rows = [{"fpr": "0", "tpr": "0", "series": s} for s in ("gbdt", "logistic")]
    svg = render_chart(rows, "roc")
    assert 'data-series="gbdt"' in svg and 'data-series="logistic"' in svg
