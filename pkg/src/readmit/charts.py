"""Deterministic standalone SVG charts from exported tables."""

from __future__ import annotations

import csv
import os
from xml.sax.saxutils import escape

from .errors import ConfigurationError

KINDS = {
    "roc": ("fpr", "tpr"),
    "prc": ("recall", "precision"),
    "calibration": ("mean_predicted", "observed"),
    "importance": ("feature", "mean_abs_phi"),
    "sweep": ("t", "precision", "recall", "f1"),
    "fairness_bars": ("dimension", "group", "auc", "fnr"),
}
TITLES = {
    "roc": ("ROC curve", "False positive rate", "True positive rate"),
    "prc": ("Precision-recall curve", "Recall", "Precision"),
    "calibration": ("Calibration", "Mean predicted probability", "Observed fraction"),
    "importance": ("Mean |SHAP| by feature", "mean |phi| (log-odds)", ""),
    "sweep": ("Threshold sweep", "Threshold", "Metric"),
    "fairness_bars": ("Subgroup AUC and FNR", "", ""),
}
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
W, H = 640, 480
LEFT, RIGHT, TOP, BOTTOM = 70, 150, 40, 60


def read_table(path: str | os.PathLike) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _check_schema(rows: list[dict], kind: str) -> None:
    if kind not in KINDS:
        raise ConfigurationError(f"unknown chart kind {kind!r}; expected one of {', '.join(KINDS)}")
    need = KINDS[kind]
    have = set(rows[0]) if rows else set()
    missing = [c for c in need if c not in have]
    if not rows or missing:
        raise ConfigurationError(f"{kind} chart needs columns {', '.join(need)}; missing {', '.join(missing) or 'rows'}")


def _num(v) -> float | None:
    return None if v in ("", None) else float(v)


def _f(v: float) -> str:
    return f"{v:.2f}"


class _Canvas:
    def __init__(self, title: str):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">',
            f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
            f'<text x="{W / 2 - RIGHT / 2 + LEFT / 2:.2f}" y="24" text-anchor="middle" font-size="15">{escape(title)}</text>',
        ]
        self.x0, self.x1 = LEFT, W - RIGHT
        self.y0, self.y1 = H - BOTTOM, TOP

    def px(self, x: float, lo=0.0, hi=1.0) -> float:
        return self.x0 + (x - lo) / (hi - lo) * (self.x1 - self.x0)

    def py(self, y: float, lo=0.0, hi=1.0) -> float:
        return self.y0 - (y - lo) / (hi - lo) * (self.y0 - self.y1)

    def add(self, s: str) -> None:
        self.parts.append(s)

    def axes(self, xlabel: str, ylabel: str, xticks=True, yticks=True) -> None:
        self.add(f'<line class="axis" x1="{self.x0}" y1="{self.y0}" x2="{self.x1}" y2="{self.y0}" stroke="black"/>')
        self.add(f'<line class="axis" x1="{self.x0}" y1="{self.y0}" x2="{self.x0}" y2="{self.y1}" stroke="black"/>')
        for k in range(6):
            v = k / 5
            if xticks:
                x = self.px(v)
                self.add(f'<line x1="{_f(x)}" y1="{self.y0}" x2="{_f(x)}" y2="{self.y0 + 5}" stroke="black"/>')
                self.add(f'<text x="{_f(x)}" y="{self.y0 + 18}" text-anchor="middle">{v:.1f}</text>')
            if yticks:
                y = self.py(v)
                self.add(f'<line x1="{self.x0 - 5}" y1="{_f(y)}" x2="{self.x0}" y2="{_f(y)}" stroke="black"/>')
                self.add(f'<text x="{self.x0 - 8}" y="{_f(y + 4)}" text-anchor="end">{v:.1f}</text>')
        cx = (self.x0 + self.x1) / 2
        self.add(f'<text x="{_f(cx)}" y="{H - 18}" text-anchor="middle">{escape(xlabel)}</text>')
        cy = (self.y0 + self.y1) / 2
        self.add(f'<text x="18" y="{_f(cy)}" text-anchor="middle" transform="rotate(-90 18 {_f(cy)})">{escape(ylabel)}</text>')

    def polyline(self, pts, color: str, name: str, dash: str | None = None) -> None:
        d = " ".join(f"{_f(self.px(x))},{_f(self.py(y))}" for x, y in pts)
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.add(f'<polyline class="series" data-series="{escape(name)}" points="{d}" fill="none" stroke="{color}" stroke-width="2"{extra}/>')

    def legend(self, names, colors) -> None:
        for i, (n, c) in enumerate(zip(names, colors)):
            y = TOP + 10 + 20 * i
            self.add(f'<rect x="{self.x1 + 15}" y="{y - 9}" width="12" height="12" fill="{c}"/>')
            self.add(f'<text class="legend" x="{self.x1 + 32}" y="{y + 1}">{escape(n)}</text>')

    def svg(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _series(rows: list[dict]) -> dict[str, list[dict]]:
    out: dict[str, list[dict]] = {}
    for r in rows:
        out.setdefault(r.get("series") or "model", []).append(r)
    return out


def _curve_chart(rows, kind, xcol, ycol) -> str:
    title, xl, yl = TITLES[kind]
    c = _Canvas(title)
    c.axes(xl, yl)
    if kind in ("roc", "calibration"):
        c.polyline([(0.0, 0.0), (1.0, 1.0)], "#999999", "reference", dash="4 4")
    groups = _series(rows)
    colors = [PALETTE[i % len(PALETTE)] for i in range(len(groups))]
    for (name, rs), color in zip(groups.items(), colors):
        pts = [(_num(r[xcol]), _num(r[ycol])) for r in rs]
        pts = [(x, y) for x, y in pts if x is not None and y is not None]
        if kind == "prc":
            pts = [(0.0, pts[0][1])] + pts if pts else pts
        c.polyline(pts, color, name)
        if kind == "calibration":
            for x, y in pts:
                c.add(f'<circle cx="{_f(c.px(x))}" cy="{_f(c.py(y))}" r="3" fill="{color}"/>')
    c.legend(list(groups), colors)
    return c.svg()


def _sweep_chart(rows, threshold: float | None) -> str:
    title, xl, yl = TITLES["sweep"]
    c = _Canvas(title)
    c.axes(xl, yl)
    names = ["precision", "recall", "f1"]
    for name, color in zip(names, PALETTE):
        pts = [(_num(r["t"]), _num(r[name])) for r in rows]
        c.polyline([(x, y) for x, y in pts if y is not None], color, name)
    if threshold is not None:
        x = _f(c.px(threshold))
        c.add(f'<line class="threshold" x1="{x}" y1="{c.y0}" x2="{x}" y2="{c.y1}" stroke="black" stroke-dasharray="6 4"/>')
        c.add(f'<text x="{x}" y="{c.y1 - 4}" text-anchor="middle">t = {threshold:.4f}</text>')
    c.legend(names, PALETTE[:3])
    return c.svg()


def _hbars(c: _Canvas, labels, values, lo_px, hi_px, vmax, color, top=None, bottom=None) -> None:
    top = c.y1 if top is None else top
    bottom = c.y0 if bottom is None else bottom
    n = len(labels)
    step = (bottom - top) / max(n, 1)
    for i, (lab, v) in enumerate(zip(labels, values)):
        y = top + i * step
        width = 0.0 if v is None or vmax <= 0 else (v / vmax) * (hi_px - lo_px)
        c.add(f'<rect class="bar" x="{_f(lo_px)}" y="{_f(y + step * 0.15)}" width="{_f(width)}" height="{_f(step * 0.7)}" fill="{color}"/>')
        c.add(f'<text x="{_f(lo_px - 6)}" y="{_f(y + step * 0.6)}" text-anchor="end" font-size="10">{escape(lab)}</text>')
        label = "n/a" if v is None else f"{v:.3f}"
        c.add(f'<text x="{_f(lo_px + width + 4)}" y="{_f(y + step * 0.6)}" font-size="10">{label}</text>')


def _importance_chart(rows) -> str:
    title, xl, _ = TITLES["importance"]
    c = _Canvas(title)
    vals = [(r["feature"], _num(r["mean_abs_phi"]) or 0.0) for r in rows]
    vmax = max((v for _, v in vals), default=0.0)
    _hbars(c, [n for n, _ in vals], [v for _, v in vals], 200, W - 70, vmax, PALETTE[0])
    c.add(f'<text x="{(200 + W - 70) / 2:.2f}" y="{H - 18}" text-anchor="middle">{escape(xl)}</text>')
    return c.svg()


def _fairness_chart(rows) -> str:
    title, _, _ = TITLES["fairness_bars"]
    c = _Canvas(title)
    labels = [f'{r["dimension"]}: {r["group"]}' for r in rows]
    auc = [_num(r["auc"]) for r in rows]
    fnr = [_num(r["fnr"]) for r in rows]
    mid = W / 2 + 60
    c.add(f'<text x="{(170 + mid - 20) / 2:.2f}" y="{TOP + 4}" text-anchor="middle">AUC</text>')
    c.add(f'<text x="{(mid + 90 + W - 40) / 2:.2f}" y="{TOP + 4}" text-anchor="middle">FNR</text>')
    _hbars(c, labels, auc, 170, mid - 40, 1.0, PALETTE[0], top=TOP + 12, bottom=H - 20)
    _hbars(c, [""] * len(rows), fnr, mid + 20, W - 50, 1.0, PALETTE[1], top=TOP + 12, bottom=H - 20)
    return c.svg()


def render_chart(rows: list[dict], kind: str, path: str | os.PathLike | None = None, threshold: float | None = None) -> str:
    """Build the SVG for ``kind``; write it when ``path`` is given."""
    _check_schema(rows, kind)
    if kind in ("roc", "prc", "calibration"):
        svg = _curve_chart(rows, kind, *KINDS[kind][:2])
    elif kind == "sweep":
        svg = _sweep_chart(rows, threshold)
    elif kind == "importance":
        svg = _importance_chart(rows)
    else:
        svg = _fairness_chart(rows)
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(svg)
    return svg
