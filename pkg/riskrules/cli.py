"""
Command-line front end.

    python main.py prep  --data cohort.csv --label y --out-dir data/run1
    python main.py train --data data/run1/train.csv --label y --out sslr.json
    python main.py rule  --data data/run1/train.csv --label y --k 10 --B 100 --out rule.json
    python main.py boost --data data/run1/train.csv --label y --out rgb.json
    python main.py eval  --model rule.json --data data/run1/test.csv --label y
    python main.py synth --n 500 --p 50 --n-signal 5 --out synth.csv

Exit status: 0 ok, 1 bad flags/config, 2 data or fitting failure.
Progress and errors go to stderr; stdout only carries the eval JSON.
Every JSON artifact has "kind" and the effective "config".

.env (optional):
    RISKRULES_JOBS=4        # default --jobs for bootstrap fits
    RISKRULES_VERBOSE=1     # progress bars and fit summaries
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings
from collections import Counter
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from dotenv import load_dotenv
from sklearn.exceptions import ConvergenceWarning

from riskrules import __version__
from riskrules.artifacts import dumps_json, read_json, write_frame, write_json, write_text
from riskrules.dataset import Dataset, SplitSpec, filter_rare_features, load_table, save_table, split_balanced
from riskrules.errors import ConfigError, DataError, FitError
from riskrules.metrics import EvalReport, evaluate, roc_points, select_threshold
from riskrules.rgb import RgbConfig, RgbEnsemble, fit_rgb, rgb_predict_proba
from riskrules.rulegen import (PredictionRule, RiskCurve, RuleGenConfig, bootstrap_average,
                               derive_rule, feature_importance, fit_risk_curve,
                               render_score_card, rule_predict_proba)
from riskrules.similarity import SimilarityMatrix, cosine_similarity_matrix, save_similarity_csv
from riskrules.sslr import ModelWeights, SslrConfig, fit_sslr, predict_proba, stationarity_violation
from riskrules.synth import SynthConfig, generate, ground_truth, group_weights


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; this pipeline reserves 2 for runtime errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _env_flag(name: str) -> bool:
    return os.getenv(name, "").strip().lower() in {"1", "true", "yes", "on"}


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name, "").strip()
    if not raw:
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{name} must be an integer, got {raw!r}") from exc


def _log(msg: str = "") -> None:
    print(msg, file=sys.stderr)


# =====================================================================
# Shared helpers
# =====================================================================

def _similarity(ds: Dataset) -> SimilarityMatrix:
    if ds.p < 2:
        return SimilarityMatrix(np.zeros((ds.p, ds.p)))
    return cosine_similarity_matrix(ds)


def _aligned(ds: Dataset, names: Sequence[str]) -> np.ndarray:
    """Columns of ds in the order a model was trained on (by name)."""
    if not names:
        return ds.values
    position = {name: j for j, name in enumerate(ds.feature_names)}
    missing = [n for n in names if n not in position]
    if missing:
        raise DataError(f"feature {missing[0]!r} used by the model is missing from the data")
    return ds.values[:, [position[n] for n in names]]


def _data_config(args) -> dict:
    return {"data": args.data, "label": args.label}


def _ensure_both_classes(ds: Dataset) -> None:
    neg, pos = ds.class_counts()
    if neg == 0 or pos == 0:
        raise DataError("both classes must be present")


# =====================================================================
# Subcommands
# =====================================================================

def cmd_prep(args) -> int:
    spec = SplitSpec(train_fraction=args.train_fraction, seed=args.seed)
    if not 0.0 <= args.min_prevalence <= 1.0:
        raise ConfigError("min_prevalence must be in [0,1]")

    _log(f"[1/3] Loading {args.data}...")
    ds = load_table(args.data, args.label)
    _log(f"  {ds.n} rows x {ds.p} features")

    _log(f"[2/3] Dropping features with prevalence < {args.min_prevalence:g}...")
    filtered = filter_rare_features(ds, args.min_prevalence)
    _log(f"  Kept {filtered.dataset.p}, dropped {len(filtered.dropped)}")

    _log("[3/3] Splitting (balanced test set)...")
    train, test = split_balanced(filtered.dataset, spec)
    out = Path(args.out_dir)
    save_table(train, out / "train.csv")
    save_table(test, out / "test.csv")
    write_text(out / "dropped_features.txt", "\n".join(filtered.dropped))
    write_json(out / "prep.json", {
        "kind": "prep",
        "n_rows": ds.n,
        "n_features": filtered.dataset.p,
        "dropped": list(filtered.dropped),
        "train": {"n": train.n, "negatives": train.class_counts()[0], "positives": train.class_counts()[1]},
        "test": {"n": test.n, "negatives": test.class_counts()[0], "positives": test.class_counts()[1]},
        "config": {**_data_config(args), "min_prevalence": args.min_prevalence, **spec.to_dict()},
    })
    _log(f"  Saved: {out / 'train.csv'} ({train.n} rows), {out / 'test.csv'} ({test.n} rows)")
    return 0


def cmd_train(args) -> int:
    cfg = SslrConfig(lam=args.lam, alpha=args.alpha, max_iterations=args.max_iter,
                     tolerance=args.tol, penalize_intercept=args.penalize_intercept,
                     standardize=args.standardize)

    _log(f"[1/3] Loading {args.data}...")
    ds = load_table(args.data, args.label)
    _ensure_both_classes(ds)

    _log("[2/3] Building similarity matrix...")
    S = _similarity(ds)
    if args.similarity_out:
        save_similarity_csv(S, ds.feature_names, args.similarity_out)
        _log(f"  Saved: {args.similarity_out}")

    _log(f"[3/3] Fitting SSLR (lambda={cfg.lam:g}, alpha={cfg.alpha:g})...")
    model = fit_sslr(ds, S, cfg)
    tau = select_threshold(predict_proba(model, ds.values), ds.labels)
    _log(f"  {np.count_nonzero(model.coefficients)} of {ds.p} coefficients nonzero")
    if args.verbose:
        _log(f"  Stationarity violation: {stationarity_violation(model, ds, S, cfg):.2e}")

    write_json(args.out, {
        "kind": "sslr",
        **model.to_dict(),
        "threshold": tau,
        "config": {**_data_config(args), **cfg.to_dict()},
    })
    _log(f"  Saved: {args.out}")
    return 0


def cmd_rule(args) -> int:
    sslr_cfg = SslrConfig(lam=args.lam, alpha=args.alpha)
    rg_cfg = RuleGenConfig(k=args.k, B=args.B, seed=args.seed, score_cap=args.score_cap,
                           risk_factors_only=args.risk_factors_only,
                           binarize=not args.raw_scores)
    jobs = args.jobs if args.jobs is not None else _env_int("RISKRULES_JOBS", 1)
    if jobs == 0:
        raise ConfigError("jobs must be nonzero")

    _log(f"[1/4] Loading {args.data}...")
    ds = load_table(args.data, args.label)
    _ensure_both_classes(ds)
    S = _similarity(ds)

    _log(f"[2/4] Bootstrap averaging ({rg_cfg.B} fits)...")
    summary = bootstrap_average(ds, S, sslr_cfg, rg_cfg, n_jobs=jobs, verbose=args.verbose)

    _log(f"[3/4] Deriving a {rg_cfg.k}-item rule...")
    ranking = feature_importance(summary, ds)
    rule = derive_rule(summary, ranking, rg_cfg)

    _log("[4/4] Fitting the risk curve...")
    curve_ds = ds
    if args.curve_data:
        curve_ds = load_table(args.curve_data, args.label)
        curve_ds = Dataset(_aligned(curve_ds, ds.feature_names), curve_ds.labels,
                           ds.feature_names, curve_ds.label_name)
    curve = fit_risk_curve(rule, curve_ds)
    tau = select_threshold(rule_predict_proba(rule, curve, ds.values), ds.labels)

    write_json(args.out, {
        "kind": "rule",
        **rule.to_dict(),
        "risk_curve": curve.to_dict(),
        "threshold": tau,
        "feature_names": list(ds.feature_names),
        "importance": [{"feature": ds.feature_names[r.index], "index": r.index,
                        "importance": r.importance, "mean_weight": r.mean_weight}
                       for r in ranking[:max(rg_cfg.k, 20)]],
        "config": {**_data_config(args), "curve_data": args.curve_data,
                   **sslr_cfg.to_dict(), **rg_cfg.to_dict()},
    })
    card_path = args.card or str(Path(args.out).with_suffix(".txt"))
    card = render_score_card(rule, curve)
    write_text(card_path, card)
    _log(f"  Saved: {args.out}, {card_path}")
    _log()
    _log(card.rstrip())
    return 0


def cmd_boost(args) -> int:
    cfg = RgbConfig(n_trees=args.n_trees, learning_rate=args.learning_rate,
                    max_leaves=args.max_leaves, per_tree_features=args.per_tree_features,
                    per_node_features=args.per_node_features, row_subsample=args.row_subsample,
                    min_samples_leaf=args.min_samples_leaf, seed=args.seed)

    _log(f"[1/2] Loading {args.data}...")
    ds = load_table(args.data, args.label)
    cfg = cfg.resolve(ds.p)

    _log(f"[2/2] Boosting {cfg.n_trees} trees...")
    model = fit_rgb(ds, cfg, verbose=args.verbose)
    tau = select_threshold(rgb_predict_proba(model, ds.values), ds.labels)

    write_json(args.out, {
        "kind": "rgb",
        **model.to_dict(),
        "threshold": tau,
        "feature_names": list(ds.feature_names),
        "config": {**_data_config(args), **cfg.to_dict()},
    })
    _log(f"  Saved: {args.out}")
    return 0


def _model_probs(artifact: dict, ds: Dataset) -> np.ndarray:
    kind = artifact.get("kind")
    if kind == "sslr":
        model = ModelWeights.from_dict(artifact)
        return predict_proba(model, _aligned(ds, model.feature_names))
    if kind == "rule":
        rule = PredictionRule.from_dict(artifact)
        curve = RiskCurve.from_dict(artifact.get("risk_curve", {}))
        return rule_predict_proba(rule, curve, _aligned(ds, artifact.get("feature_names", ())))
    if kind == "rgb":
        model = RgbEnsemble.from_dict(artifact)
        return rgb_predict_proba(model, _aligned(ds, artifact.get("feature_names", ())))
    raise DataError(f"unknown model kind {kind!r} (expected sslr, rule or rgb)")


def cmd_eval(args) -> int:
    if args.threshold is not None and not 0.0 <= args.threshold <= 1.0:
        raise ConfigError("threshold must be in [0,1]")

    artifact = read_json(args.model)
    ds = load_table(args.data, args.label)
    probs = np.atleast_1d(_model_probs(artifact, ds))

    tau = args.threshold if args.threshold is not None else artifact.get("threshold")
    if tau is None:
        raise DataError(f"{args.model} stores no threshold; pass --threshold")
    report: EvalReport = evaluate(probs, ds.labels, float(tau))

    payload = {
        "kind": "eval",
        "model_kind": artifact.get("kind"),
        **report.to_dict(),
        "config": {"model": args.model, **_data_config(args), "threshold": args.threshold},
    }
    if args.roc:
        pts = roc_points(probs, ds.labels)
        write_frame(args.roc, pd.DataFrame(pts, columns=["fpr", "tpr"]))
        _log(f"  Saved: {args.roc}")
    if args.out:
        write_json(args.out, payload)
        _log(f"  Saved: {args.out}")

    _log(report.to_text(f"Evaluation: {args.model} on {args.data}").rstrip())
    sys.stdout.write(dumps_json(payload))
    return 0


def _interaction(raw: str | None):
    if raw is None:
        return None
    try:
        i, j, c = raw.split(",")
        return int(i), int(j), float(c)
    except ValueError as exc:
        raise ConfigError(f"--interaction expects i,j,coefficient, got {raw!r}") from exc


def cmd_synth(args) -> int:
    weights = group_weights(args.p, args.group_size, args.n_signal, args.signal) \
        if args.p % args.group_size == 0 else ()
    cfg = SynthConfig(n=args.n, p=args.p, group_size=args.group_size, rho=args.rho,
                      true_weights=weights, intercept=args.intercept, seed=args.seed,
                      interaction=_interaction(args.interaction),
                      count_threshold=args.count_threshold)

    _log(f"[1/1] Generating {cfg.n} rows x {cfg.p} features "
         f"({cfg.n_groups} groups, rho={cfg.rho:g})...")
    ds = generate(cfg)
    save_table(ds, args.out)
    truth_path = args.truth or str(Path(args.out).with_suffix(".truth.json"))
    write_json(truth_path, {
        "kind": "synth",
        **ground_truth(cfg),
        "config": {**cfg.to_dict(), "n_signal": args.n_signal, "signal": args.signal},
    })
    neg, pos = ds.class_counts()
    _log(f"  Prevalence {pos / ds.n:.3f} ({pos} positives)")
    _log(f"  Saved: {args.out}, {truth_path}")
    return 0


# =====================================================================
# Parser
# =====================================================================

def build_parser() -> argparse.ArgumentParser:
    verbose_default = _env_flag("RISKRULES_VERBOSE")
    common = _Parser(add_help=False)
    common.add_argument("--verbose", action=argparse.BooleanOptionalAction,
                        default=verbose_default,
                        help="Progress bars and fit summaries on stderr")

    def data_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--data", required=True, help="Input CSV (header row)")
        p.add_argument("--label", default="y", help="Label column name (default: y)")

    parser = _Parser(prog="riskrules",
                     description="Stable sparse risk rules for binary outcomes")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("prep", parents=[common], help="Filter rare features and split")
    data_flags(p)
    p.add_argument("--min-prevalence", type=float, default=0.01)
    p.add_argument("--train-fraction", type=float, default=2.0 / 3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("train", parents=[common], help="Fit one SSLR model")
    data_flags(p)
    p.add_argument("--lambda", dest="lam", type=float, default=5.0)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--max-iter", type=int, default=10000)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--penalize-intercept", action="store_true")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--similarity-out", default=None, help="Also write S as CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rule", parents=[common], help="Bootstrap SSLR -> integer score card")
    data_flags(p)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--B", type=int, default=100)
    p.add_argument("--lambda", dest="lam", type=float, default=5.0)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--score-cap", type=int, default=10)
    p.add_argument("--risk-factors-only", action="store_true",
                   help="Only positive-weight features enter the rule")
    p.add_argument("--raw-scores", action="store_true",
                   help="Weight raw feature values instead of presence")
    p.add_argument("--jobs", type=int, default=None,
                   help="Parallel bootstrap fits (default: $RISKRULES_JOBS or 1)")
    p.add_argument("--curve-data", default=None,
                   help="CSV to fit the risk curve on (default: --data)")
    p.add_argument("--card", default=None, help="Score card text path (default: OUT with .txt)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rule)

    p = sub.add_parser("boost", parents=[common], help="Randomized gradient boosting")
    data_flags(p)
    p.add_argument("--n-trees", type=int, default=500)
    p.add_argument("--learning-rate", type=float, default=0.03)
    p.add_argument("--max-leaves", type=int, default=256)
    p.add_argument("--per-tree-features", type=int, default=None)
    p.add_argument("--per-node-features", type=int, default=None)
    p.add_argument("--row-subsample", type=float, default=0.5)
    p.add_argument("--min-samples-leaf", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_boost)

    p = sub.add_parser("eval", parents=[common], help="Evaluate a model, rule or ensemble")
    p.add_argument("--model", required=True, help="sslr, rule or rgb JSON")
    data_flags(p)
    p.add_argument("--threshold", type=float, default=None,
                   help="Override the threshold stored in the model")
    p.add_argument("--roc", default=None, help="Write fpr,tpr points as CSV")
    p.add_argument("--out", default=None, help="Also write the report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", parents=[common], help="Synthetic correlated-block dataset")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--p", type=int, default=50)
    p.add_argument("--group-size", type=int, default=5)
    p.add_argument("--rho", type=float, default=0.9)
    p.add_argument("--n-signal", type=int, default=5, help="Groups carrying a true weight")
    p.add_argument("--signal", type=float, default=1.0)
    p.add_argument("--intercept", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count-threshold", type=float, default=None,
                   help="Emit 0/1 indicators x > threshold")
    p.add_argument("--interaction", default=None, metavar="I,J,COEF")
    p.add_argument("--truth", default=None, help="Ground-truth JSON (default: OUT with .truth.json)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    return parser


def run(argv: Sequence[str] | None = None) -> int:
    load_dotenv()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    except ConfigError as exc:
        _log(f"ERROR: {exc}")
        return 1

    handler: Callable[[argparse.Namespace], int] = args.func
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        try:
            status = handler(args)
        except ConfigError as exc:
            _log(f"ERROR: {exc}")
            status = 1
        except (DataError, FitError, OSError) as exc:
            _log(f"ERROR: {exc}")
            status = 2
    for message, count in Counter(str(w.message) for w in caught).items():
        _log(f"WARN: {message}" + (f" (x{count})" if count > 1 else ""))
    return status
