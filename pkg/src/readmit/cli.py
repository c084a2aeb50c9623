"""Command-line pipeline: synth, split, train, evaluate, explain, audit, drift, serve, chart.

Exit status: 0 on success, 1 on a runtime failure, 2 on a usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cohort import (
    SCHEMA_VERSION,
    GeneratorConfig,
    apply_medians,
    chronological_split,
    fit_medians,
    generate_cohort,
    load_cohort,
    save_cohort,
)
from .config import read_kv_file
from .errors import ConfigurationError, ReadmitError

logger = logging.getLogger("readmit")

MODEL_CHOICES = ("gbdt-depth", "gbdt-leaf", "logistic")
CHART_KINDS = ("roc", "prc", "calibration", "importance", "sweep", "fairness_bars")


class UsageError(Exception):
    pass


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _rel(path: Path, base: Path) -> str:
    try:
        return str(path.resolve().relative_to(base.resolve()))
    except ValueError:
        return str(path)


def write_manifest(out_dir: Path, command: str, args, inputs, outputs, started: float, seeds=None, extra=None) -> Path:
    """Record digests of every input and output of one command."""
    settings = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    digest = hashlib.sha256(json.dumps(settings, sort_keys=True, default=str).encode()).hexdigest()
    manifest = {
        "command": command,
        "settings": settings,
        "config_digest": digest,
        "seeds": seeds or {},
        "inputs": [{"path": _rel(Path(p), out_dir), "sha256": sha256_file(p)} for p in inputs],
        "outputs": [{"path": _rel(Path(p), out_dir), "sha256": sha256_file(p)} for p in outputs],
        "timings": {"seconds": round(time.perf_counter() - started, 3)},
        "versions": {
            "readmit": __version__,
            "schema": SCHEMA_VERSION,
            "python": platform.python_version(),
            "numpy": np.__version__,
            **(extra or {}),
        },
    }
    path = out_dir / f"manifest-{command}.json"
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n", encoding="utf-8")
    return path


def verify_manifest(path: str | os.PathLike) -> list[str]:
    """Paths whose current digest differs from the manifest (empty when intact)."""
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    bad = []
    for entry in doc["inputs"] + doc["outputs"]:
        p = Path(entry["path"])
        p = p if p.is_absolute() else path.parent / p
        if not p.exists() or sha256_file(p) != entry["sha256"]:
            bad.append(entry["path"])
    return bad


def _json_dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _out_dir(args) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_model(path):
    from .model import model_from_dict
    from .model.io import load_model_document

    doc = load_model_document(path)
    return model_from_dict(doc), doc.get("imputation")


def _imputed(cohort, medians):
    if medians is None:
        if np.isnan(cohort.X).any():
            raise ConfigurationError("model file carries no imputation medians but the data has missing values")
        return cohort
    return apply_medians(cohort, medians)


def _scores(model, cohort):
    from .model import predict_proba

    return predict_proba(model, cohort.X)


# --- commands ---------------------------------------------------------------


def cmd_synth(args) -> int:
    started = time.perf_counter()
    knobs = {}
    for item in args.bias_knob or []:
        key, sep, mult = item.rpartition(":")
        if not sep:
            raise UsageError(f"--bias-knob expects dim=label:multiplier, got {item!r}")
        knobs[key] = float(mult)
    cfg = GeneratorConfig(
        n=args.n,
        seed=args.seed,
        target_prevalence=args.prevalence,
        interaction=args.interaction,
        noise_sd=args.noise_sd,
        bias_knob=knobs,
        temporal_drift=args.temporal_drift,
        missing_rate=args.missing_rate,
    )
    cohort = generate_cohort(cfg)
    out = Path(args.out) if args.out else _out_dir(args) / "cohort.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_cohort(cohort, out)
    write_manifest(out.parent, "synth", args, [], [out], started, seeds={"generator": args.seed})
    print(f"wrote {len(cohort)} records to {out} (prevalence {cohort.y.mean():.4f})")
    return 0


def cmd_split(args) -> int:
    started = time.perf_counter()
    cohort = load_cohort(args.cohort)
    parts = chronological_split(cohort)
    d = _out_dir(args)
    outs = []
    for name in ("train", "validation", "test"):
        p = d / f"{name}.csv"
        save_cohort(getattr(parts, name), p)
        outs.append(p)
    write_manifest(d, "split", args, [args.cohort], outs, started)
    print("split sizes (train/validation/test): " + " / ".join(str(s) for s in parts.sizes))
    return 0


def cmd_train(args) -> int:
    from .model import TrainConfig, fit_gbdt, fit_logistic, save_model

    started = time.perf_counter()
    train = load_cohort(args.train)
    medians = fit_medians(train)
    train = apply_medians(train, medians)
    if args.model == "logistic":
        model = fit_logistic(train.X, train.y, C=args.C, tol=args.tol, max_iter=args.max_iter)
        model.metadata["model"] = args.model
        if not model.converged:
            logger.warning("logistic regression flagged non-converged")
    else:
        cfg = TrainConfig(
            growth="depth_wise" if args.model == "gbdt-depth" else "leaf_wise",
            max_depth=args.max_depth,
            num_leaves=args.num_leaves,
            n_estimators=args.n_estimators,
            learning_rate=args.learning_rate,
            scale_pos_weight=args.scale_pos_weight,
            reg_lambda=args.reg_lambda,
            min_child_weight=args.min_child_weight,
            seed=args.seed,
        )
        model, _ = fit_gbdt(train.X, train.y, cfg)
        model.metadata["model"] = args.model
    out = Path(args.out) if args.out else _out_dir(args) / "model.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out, extra={"imputation": medians})
    write_manifest(
        out.parent, f"train-{args.model}", args, [args.train], [out], started,
        seeds={"train": args.seed}, extra={"model_version": model.model_version},
    )
    print(f"wrote {args.model} model to {out}")
    return 0


def cmd_evaluate(args) -> int:
    from .evaluation import (
        evaluate,
        write_calibration_csv,
        write_prc_csv,
        write_roc_csv,
        write_sweep_csv,
        youden_threshold,
    )

    started = time.perf_counter()
    model, medians = _load_model(args.model)
    test = _imputed(load_cohort(args.test), medians)
    s_test = _scores(model, test)
    if args.threshold is not None:
        threshold, source = args.threshold, "supplied"
    elif args.validation:
        val = _imputed(load_cohort(args.validation), medians)
        threshold, source = youden_threshold(_scores(model, val), val.y).threshold, "youden(validation)"
    else:
        raise UsageError("evaluate needs --validation (for the Youden threshold) or --threshold")
    report = evaluate(
        s_test, test.y, threshold=threshold, threshold_source=source,
        iters=args.iters, seed=args.seed, bins=args.bins, grid=args.grid, n_jobs=args.n_jobs,
    )
    d = _out_dir(args)
    outs = [d / n for n in ("report.json", "sweep.csv", "calibration.csv", "roc.csv", "prc.csv")]
    doc = report.to_dict()
    doc["model"] = model.metadata.get("model", model.kind)
    outs[0].write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    write_sweep_csv(outs[1], report.sweep)
    write_calibration_csv(outs[2], report.calibration)
    write_roc_csv(outs[3], s_test, test.y)
    write_prc_csv(outs[4], s_test, test.y)
    inputs = [args.model, args.test] + ([args.validation] if args.validation else [])
    write_manifest(d, "evaluate", args, inputs, outs, started, seeds={"bootstrap": args.seed})
    ci = report.auc_roc_ci
    print(f"AUC-ROC {report.auc_roc:.4f} ({ci.low:.4f}-{ci.high:.4f}), AUC-PRC {report.auc_prc:.4f}, "
          f"Brier {report.brier:.4f}, threshold {threshold:.4f}")
    return 0


def cmd_explain(args) -> int:
    from .explain import beeswarm_export, global_importance, shap_values, waterfall_report
    from .explain.shap import ShapExplanation
    from .model import predict_margin

    started = time.perf_counter()
    model, medians = _load_model(args.model)
    data = _imputed(load_cohort(args.data), medians)
    if args.limit:
        data = data.take(np.arange(min(args.limit, len(data))))
    base, phi = shap_values(model, data.X)
    margins = predict_margin(model, data.X)
    err = float(np.max(np.abs(base + phi.sum(axis=1) - margins))) if len(data) else 0.0
    imp = global_importance(phi, data.X)
    d = _out_dir(args)
    out_imp_csv, out_imp_json, out_bee, out_wf, out_sum = (
        d / "importance.csv", d / "importance.json", d / "beeswarm.csv", d / "waterfall.json", d / "shap_summary.json",
    )
    from .evaluation import write_rows_csv

    write_rows_csv(out_imp_csv, ["rank", "feature", "mean_abs_phi", "direction"], imp.rows())
    _json_dump(out_imp_json, imp.to_dict())
    beeswarm_export(phi, data.X, out_bee, patient_ids=data.ids)
    if args.patient_id is not None:
        hits = np.flatnonzero(data.ids == args.patient_id)
        if len(hits) == 0:
            raise ConfigurationError(f"admission_id {args.patient_id} not found in {args.data}")
        i = int(hits[0])
    else:
        i = 0
    wf = waterfall_report(ShapExplanation(base, phi[i], float(margins[i])), data.X[i], args.k)
    _json_dump(out_wf, {"admission_id": int(data.ids[i]), **wf.to_dict()})
    _json_dump(out_sum, {"n": len(data), "base_value": base, "max_local_accuracy_error": err})
    write_manifest(d, "explain", args, [args.model, args.data], [out_imp_csv, out_imp_json, out_bee, out_wf, out_sum], started)
    top = ", ".join(r["feature"] for r in imp.rows()[:3])
    print(f"explained {len(data)} records; top features: {top}; max |base+sum(phi)-margin| = {err:.2e}")
    return 0


def cmd_audit(args) -> int:
    from .evaluation import youden_threshold
    from .fairness import (
        apply_equalized_odds,
        audit_fairness,
        fit_equalized_odds,
        group_labels,
        group_rates,
        slice_subgroups,
    )

    started = time.perf_counter()
    model, medians = _load_model(args.model)
    val = _imputed(load_cohort(args.validation), medians)
    test = _imputed(load_cohort(args.test), medians)
    s_val, s_test = _scores(model, val), _scores(model, test)
    threshold = args.threshold if args.threshold is not None else youden_threshold(s_val, val.y).threshold
    gates = (args.gate_auc, args.gate_fnr)
    audit = audit_fairness(s_test, test.y, slice_subgroups(test), threshold, gates, args.min_group_size)
    d = _out_dir(args)
    outs = [d / "fairness.json", d / "fairness.csv"]
    outs[0].write_text(audit.to_json(), encoding="utf-8")
    audit.write_csv(outs[1])
    run_pp = args.postprocess == "always" or (args.postprocess == "auto" and audit.verdict != "pass")
    if run_pp:
        dims = [g.dimension for g in audit.gaps if g.passes is False] or [g.dimension for g in audit.gaps]
        policies = {}
        for dim in dims:
            pol = fit_equalized_odds(s_val, val.y, group_labels(val, dim), dim, args.mode, threshold)
            g_test = group_labels(test, dim)
            before = group_rates(s_test >= threshold, test.y, g_test)
            after = apply_equalized_odds(pol, s_test, g_test, test.ids, args.seed).positive
            policies[dim] = {
                "policy": pol.to_dict(),
                "test_rates_before": {g: {"tpr": t, "fpr": f} for g, (t, f) in before.items()},
                "test_rates_after": {g: {"tpr": t, "fpr": f} for g, (t, f) in group_rates(after, test.y, g_test).items()},
            }
        outs.append(d / "equalized_odds.json")
        _json_dump(outs[-1], {"fit_split": "validation", "seed": args.seed, "dimensions": policies})
    write_manifest(d, "audit", args, [args.model, args.validation, args.test], outs, started, seeds={"postprocess": args.seed})
    print(f"fairness verdict: {audit.verdict} at threshold {threshold:.4f}")
    return 0


def cmd_drift(args) -> int:
    from .drift import drift_verdict, fit_reference

    started = time.perf_counter()
    model, medians = _load_model(args.model)
    train = _imputed(load_cohort(args.train), medians)
    val = _imputed(load_cohort(args.validation), medians)
    ref = fit_reference(train.X, _scores(model, val), window=args.window)
    d = _out_dir(args)
    outs = [d / "drift_reference.json"]
    ref.save(outs[0])
    inputs = [args.model, args.train, args.validation]
    alerted = False
    if args.current:
        cur = _imputed(load_cohort(args.current), medians)
        v = drift_verdict(ref, cur.X, _scores(model, cur).tolist())
        outs.append(d / "drift_report.json")
        _json_dump(outs[-1], v.to_dict())
        inputs.append(args.current)
        alerted = bool(v.kl_alerts) or v.prediction_alert
        print(f"feature alerts: {v.kl_alerts or 'none'}; prediction alert: {v.prediction_alert} (fill {v.fill}/{v.window})")
    write_manifest(d, "drift", args, inputs, outs, started)
    print(f"wrote drift reference (mu={ref.mu:.4f}, sigma={ref.sigma:.4f}, W={ref.window})")
    return 0 if not alerted or not args.fail_on_alert else 1


def cmd_serve(args) -> int:
    from .serve.app import run
    from .serve.service import ServeConfig

    overrides = {k: getattr(args, k) for k in ("model_path", "threshold", "host", "port", "window", "k", "drift_reference")}
    cfg = ServeConfig.load(args.config, overrides=overrides)
    if not cfg.model_path:
        logger.warning("no model configured; /predict and /explain will answer 503")
    run(cfg)
    return 0


def cmd_chart(args) -> int:
    from .charts import read_table, render_chart

    started = time.perf_counter()
    rows = read_table(args.data)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    render_chart(rows, args.kind, out, threshold=args.threshold)
    write_manifest(out.parent, f"chart-{out.stem}", args, [args.data], [out], started)
    print(f"wrote {args.kind} chart to {out}")
    return 0


# --- parser -------------------------------------------------------------------


REQUIRED = {
    "synth": ("n",),
    "split": ("cohort",),
    "train": ("model", "train"),
    "evaluate": ("model", "test"),
    "explain": ("model", "data"),
    "audit": ("model", "validation", "test"),
    "drift": ("model", "train", "validation"),
    "chart": ("kind", "data", "out"),
}


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file supplying defaults for this command's flags")
    common.add_argument("--out-dir", default=".", help="directory for artifacts (default: current directory)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="readmit", description="30-day readmission risk pipeline on synthetic cohorts.")
    parser.add_argument("--version", action="version", version=f"readmit {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    subs: dict[str, argparse.ArgumentParser] = {}

    def add(name, help, func):
        p = sub.add_parser(name, help=help, parents=[common])
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = add("synth", "generate a synthetic cohort", cmd_synth)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prevalence", type=float, default=0.18)
    p.add_argument("--interaction", type=float, default=0.0)
    p.add_argument("--noise-sd", type=float, default=0.0)
    p.add_argument("--bias-knob", action="append", metavar="DIM=LABEL:MULT")
    p.add_argument("--temporal-drift", type=float, default=0.0)
    p.add_argument("--missing-rate", type=float, default=0.0)
    p.add_argument("--out", help="cohort path (default: <out-dir>/cohort.csv)")

    p = add("split", "chronological 70/15/15 split", cmd_split)
    p.add_argument("--cohort")

    p = add("train", "train a scorer", cmd_train)
    p.add_argument("--model", choices=MODEL_CHOICES)
    p.add_argument("--train")
    p.add_argument("--out", help="model path (default: <out-dir>/model.json)")
    p.add_argument("--max-depth", type=int, default=6)
    p.add_argument("--num-leaves", type=int, default=63)
    p.add_argument("--n-estimators", type=int, default=300)
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--scale-pos-weight", type=float, default=None)
    p.add_argument("--lambda", dest="reg_lambda", type=float, default=1.0)
    p.add_argument("--min-child-weight", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--C", type=float, default=0.001)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=5000)

    p = add("evaluate", "metrics, bootstrap CI, calibration and sweep tables", cmd_evaluate)
    p.add_argument("--model")
    p.add_argument("--validation")
    p.add_argument("--test")
    p.add_argument("--threshold", type=float)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--grid", type=int, default=101)
    p.add_argument("--n-jobs", type=int, default=1)

    p = add("explain", "SHAP attributions, importance, waterfall and beeswarm table", cmd_explain)
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--patient-id", type=int)
    p.add_argument("--limit", type=int)

    p = add("audit", "subgroup fairness audit (+ equalized odds when triggered)", cmd_audit)
    p.add_argument("--model")
    p.add_argument("--validation")
    p.add_argument("--test")
    p.add_argument("--threshold", type=float)
    p.add_argument("--min-group-size", type=int, default=50)
    p.add_argument("--gate-auc", type=float, default=0.05)
    p.add_argument("--gate-fnr", type=float, default=0.10)
    p.add_argument("--postprocess", choices=("auto", "never", "always"), default="auto")
    p.add_argument("--mode", choices=("randomized", "deterministic"), default="randomized")
    p.add_argument("--seed", type=int, default=0)

    p = add("drift", "fit a drift reference and optionally check a batch", cmd_drift)
    p.add_argument("--model")
    p.add_argument("--train")
    p.add_argument("--validation")
    p.add_argument("--current")
    p.add_argument("--window", type=int, default=1000)
    p.add_argument("--fail-on-alert", action="store_true")

    p = add("serve", "run the HTTP service", cmd_serve)
    p.add_argument("--model", dest="model_path")
    p.add_argument("--threshold", type=float)
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--drift-reference")

    p = add("chart", "render an SVG chart from an exported table", cmd_chart)
    p.add_argument("--kind", choices=CHART_KINDS)
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--threshold", type=float, help="marker position for sweep charts")
    return parser, subs


def _truthy(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _apply_config(parser, subparser, argv) -> argparse.Namespace:
    """Re-parse with config-file values as defaults so explicit flags win."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None) or args.command == "serve":
        return args
    try:
        values = read_kv_file(args.config)
    except ConfigurationError as exc:
        subparser.error(str(exc))
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("help", "config", "func"):
            subparser.error(f"config key {key!r} is not an option of '{args.command}'")
        try:
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = _truthy(raw)
            elif isinstance(action, argparse._AppendAction):
                defaults[key] = [v.strip() for v in raw.split(",") if v.strip()]
            else:
                defaults[key] = action.type(raw) if action.type else raw
                if action.choices and defaults[key] not in action.choices:
                    raise ValueError(f"must be one of {', '.join(map(str, action.choices))}")
        except ValueError as exc:
            subparser.error(f"config key {key!r}: {exc}")
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser, subs = build_parser()
    try:
        first = parser.parse_args(argv)
        if first.command is None:
            parser.print_usage(sys.stderr)
            print("readmit: error: a command is required", file=sys.stderr)
            return 2
        args = _apply_config(parser, subs[first.command], argv)
    except SystemExit as exc:
        return int(exc.code or 0) if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    missing = [k for k in REQUIRED.get(args.command, ()) if getattr(args, k, None) is None]
    if missing:
        subs[args.command].print_usage(sys.stderr)
        flags = ", ".join("--" + m.replace("_", "-") for m in missing)
        print(f"readmit {args.command}: error: missing required option(s): {flags}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        subs[args.command].print_usage(sys.stderr)
        print(f"readmit {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ReadmitError, OSError) as exc:
        print(f"readmit {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
