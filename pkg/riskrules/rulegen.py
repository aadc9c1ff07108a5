"""
Rule distillation -- bootstrap SSLR fits -> integer score card -> risk curve.

Given k retained features and B bootstraps:
  1. Bootstrap model averaging: B SSLR fits on resamples (S fixed from the
     full training set), coefficients averaged.
  2. Feature selection: importance = |mean weight| x column std, top k kept.
  3. Rule construction: weights scaled so the largest magnitude hits
     score_cap, rounded half away from zero; a weight that rounds to 0 is
     promoted to +/-1 so every item keeps a nonzero score.
  4. Risk curve: univariate logistic regression of the labels on the rule
     score, tabulated over the observed integer score range.

Rule items with positive scores are risk factors, negative ones protective.
"""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit
from tqdm import tqdm

from riskrules.artifacts import render_template
from riskrules.dataset import Dataset
from riskrules.errors import ConfigError, DataError, FitError
from riskrules.similarity import SimilarityMatrix
from riskrules.sslr import ModelWeights, SslrConfig, fit_sslr, stable_sigmoid

MAX_RESAMPLE_RETRIES = 100

# scaled rule weights are compared at this many decimals before rounding
ROUND_DECIMALS = 9

# univariate risk-curve fit
CURVE_TOLERANCE = 1e-10
CURVE_MAX_ITERATIONS = 100
CURVE_PERFECT_FIT = 1e-10

Sampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class RuleGenConfig:
    k: int = 10
    B: int = 100
    seed: int = 0
    score_cap: int = 10
    risk_factors_only: bool = False
    binarize: bool = True

    def __post_init__(self):
        for name in ("k", "B", "score_cap"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BootstrapSummary:
    mean_weights: np.ndarray
    std_weights: np.ndarray
    mean_intercept: float
    B: int
    feature_names: tuple[str, ...]
    replicate_weights: np.ndarray      # B x p, replicate order
    replicate_intercepts: np.ndarray   # B

    @property
    def p(self) -> int:
        return self.mean_weights.size


@dataclass(frozen=True)
class RankedFeature:
    index: int
    importance: float
    mean_weight: float


@dataclass(frozen=True)
class RuleItem:
    feature_index: int
    feature_name: str
    score: int
    score_std: float


@dataclass(frozen=True)
class PredictionRule:
    items: tuple[RuleItem, ...]
    k: int
    score_cap: int = 10
    binarize: bool = True

    def __post_init__(self):
        scores = [it.score for it in self.items]
        if len(self.items) != self.k:
            raise DataError(f"rule has {len(self.items)} items, expected k={self.k}")
        if any(s == 0 or abs(s) > self.score_cap for s in scores):
            raise DataError(f"rule scores must be nonzero integers in [-{self.score_cap}, {self.score_cap}]")
        if scores and max(abs(s) for s in scores) != self.score_cap:
            raise DataError("no rule item reaches the score cap")
        keys = [(-abs(it.score), it.feature_index) for it in self.items]
        if keys != sorted(keys):
            raise DataError("rule items out of order")

    @property
    def indices(self) -> np.ndarray:
        return np.array([it.feature_index for it in self.items], dtype=np.intp)

    @property
    def scores(self) -> np.ndarray:
        return np.array([it.score for it in self.items], dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "items": [{"feature": it.feature_name, "index": it.feature_index,
                       "score": it.score, "std": it.score_std} for it in self.items],
            "k": self.k,
            "score_cap": self.score_cap,
            "binarize": self.binarize,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PredictionRule":
        try:
            items = tuple(RuleItem(int(it["index"]), str(it["feature"]),
                                   int(it["score"]), float(it["std"]))
                          for it in d["items"])
            return cls(items, int(d.get("k", len(items))), int(d.get("score_cap", 10)),
                       bool(d.get("binarize", True)))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed rule: {exc}") from exc


@dataclass(frozen=True)
class RiskCurve:
    slope: float
    intercept: float
    table: tuple[tuple[int, float], ...]

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept,
                "table": [[s, p] for s, p in self.table]}

    @classmethod
    def from_dict(cls, d: dict) -> "RiskCurve":
        try:
            return cls(float(d["slope"]), float(d["intercept"]),
                       tuple((int(s), float(p)) for s, p in d["table"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed risk curve: {exc}") from exc


# =====================================================================
# 1.  Bootstrap model averaging
# =====================================================================

def _bootstrap_rows(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, n, size=n)


def _draw_replicate(ds: Dataset, seed: int, r: int, sampler: Sampler) -> np.ndarray:
    """Rows for replicate r; single-class draws are redrawn with the next child seed."""
    for attempt in range(MAX_RESAMPLE_RETRIES + 1):
        rng = np.random.default_rng([seed, r, attempt])
        rows = np.asarray(sampler(rng, ds.n), dtype=np.intp)
        pos = int(ds.labels[rows].sum())
        if 0 < pos < rows.size:
            return rows
    raise FitError(
        f"bootstrap replicate {r}: every resample had a single class "
        f"after {MAX_RESAMPLE_RETRIES} retries")


def _fit_replicate(ds: Dataset, rows: np.ndarray, S: SimilarityMatrix,
                   cfg: SslrConfig) -> ModelWeights:
    return fit_sslr(ds.take_rows(rows), S, cfg)


def bootstrap_average(
    ds: Dataset,
    S: SimilarityMatrix,
    sslr_cfg: SslrConfig,
    rg_cfg: RuleGenConfig,
    n_jobs: int = 1,
    sampler: Sampler | None = None,
    verbose: bool = False,
) -> BootstrapSummary:
    """
    Fit SSLR on rg_cfg.B bootstrap resamples and average the coefficients.

    Replicate r draws its rows from a generator seeded by (seed, r, attempt).
    sampler(rng, n) can replace the with-replacement draw (test hook).
    Results do not depend on n_jobs.
    """
    if ds.n == 0:
        raise DataError("empty dataset")
    if S.p != ds.p:
        raise DataError(f"dimension mismatch: data {ds.p}, similarity {S.p}")
    sampler = sampler or _bootstrap_rows

    draws = [_draw_replicate(ds, rg_cfg.seed, r, sampler) for r in range(rg_cfg.B)]
    if verbose:
        print(f"  Bootstrap: {rg_cfg.B} SSLR fits on {ds.n} rows x {ds.p} features "
              f"(lambda={sslr_cfg.lam:g}, alpha={sslr_cfg.alpha:g}, jobs={n_jobs})",
              file=sys.stderr)

    jobs = (delayed(_fit_replicate)(ds, rows, S, sslr_cfg) for rows in draws)
    fits = list(tqdm(Parallel(n_jobs=n_jobs, return_as="generator")(jobs),
                     total=rg_cfg.B, desc="  bootstrap", unit="fit",
                     disable=not verbose, file=sys.stderr))

    W = np.vstack([m.coefficients for m in fits])
    w0 = np.array([m.intercept for m in fits])
    summary = BootstrapSummary(
        mean_weights=W.mean(axis=0),
        std_weights=W.std(axis=0),
        mean_intercept=float(w0.mean()),
        B=rg_cfg.B,
        feature_names=ds.feature_names,
        replicate_weights=W,
        replicate_intercepts=w0,
    )
    if verbose:
        nz = np.count_nonzero(W, axis=1)
        print(f"  Nonzero coefficients per fit: min {nz.min()}, "
              f"median {int(np.median(nz))}, max {nz.max()}", file=sys.stderr)
    return summary


def summary_model(summary: BootstrapSummary) -> ModelWeights:
    """The averaged model as ordinary weights."""
    return ModelWeights(summary.mean_intercept, summary.mean_weights, summary.feature_names)


# =====================================================================
# 2.  Feature importance
# =====================================================================

def _rank(importance: np.ndarray) -> np.ndarray:
    """Indices by descending importance, ties by ascending index."""
    idx = np.arange(importance.size)
    return np.lexsort((idx, -importance))


def feature_importance(summary: BootstrapSummary, ds: Dataset) -> list[RankedFeature]:
    if summary.p != ds.p:
        raise DataError(f"dimension mismatch: summary {summary.p}, data {ds.p}")
    importance = np.abs(summary.mean_weights) * ds.values.std(axis=0)
    return [RankedFeature(int(i), float(importance[i]), float(summary.mean_weights[i]))
            for i in _rank(importance)]


def replicate_selections(summary: BootstrapSummary, ds: Dataset, k: int) -> list[frozenset[int]]:
    """Top-k features (positive importance only) of every bootstrap fit."""
    sd = ds.values.std(axis=0)
    out = []
    for w in summary.replicate_weights:
        importance = np.abs(w) * sd
        order = [i for i in _rank(importance) if importance[i] > 0]
        out.append(frozenset(int(i) for i in order[:k]))
    return out


# =====================================================================
# 3.  Integer rule
# =====================================================================

def _round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def derive_rule(summary: BootstrapSummary, ranking: Sequence[RankedFeature],
                rg_cfg: RuleGenConfig) -> PredictionRule:
    eligible = [r for r in ranking if r.importance > 0
                and (r.mean_weight > 0 or not rg_cfg.risk_factors_only)]
    if len(eligible) < rg_cfg.k:
        kind = "risk factors" if rg_cfg.risk_factors_only else "features"
        raise DataError(
            f"fewer than k={rg_cfg.k} {kind} with positive importance ({len(eligible)})")
    chosen = eligible[:rg_cfg.k]

    idx = np.array([r.index for r in chosen], dtype=np.intp)
    mw = summary.mean_weights[idx]
    top = float(np.max(np.abs(mw)))
    c = rg_cfg.score_cap / top

    # any positive rescaling of the weights gives the same scores
    eta = _round_half_away(np.round(rg_cfg.score_cap * (mw / top), ROUND_DECIMALS))
    eta = np.where(eta == 0, np.sign(mw), eta)
    eta = np.clip(eta, -rg_cfg.score_cap, rg_cfg.score_cap).astype(np.int64)
    std = c * summary.std_weights[idx]

    items = [RuleItem(int(i), summary.feature_names[i], int(e), float(s))
             for i, e, s in zip(idx, eta, std)]
    items.sort(key=lambda it: (-abs(it.score), it.feature_index))
    return PredictionRule(tuple(items), rg_cfg.k, rg_cfg.score_cap, rg_cfg.binarize)


def rule_score(rule: PredictionRule, x, binarize: bool | None = None):
    """
    Sum of item scores over present features (x != 0).

    With binarize=False the raw feature values are weighted instead.
    One row gives a scalar, a matrix gives one score per row.
    """
    binarize = rule.binarize if binarize is None else binarize
    x = np.asarray(x, dtype=float)
    idx = rule.indices
    if idx.size and (x.ndim == 0 or idx.max() >= x.shape[-1]):
        raise DataError(
            f"feature index {int(idx.max())} out of range for x with shape {x.shape}")
    sub = x[..., idx]
    if binarize:
        out = (sub != 0).astype(np.int64) @ rule.scores
        return int(out) if np.ndim(out) == 0 else out
    out = sub @ rule.scores.astype(float)
    return float(out) if np.ndim(out) == 0 else out


# =====================================================================
# 4.  Risk curve
# =====================================================================

def _nll(f: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(np.logaddexp(0.0, f) - y * f))


def _fit_univariate_logistic(s: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """
    Newton iterations with step halving for logit P = b0 + b1*s.

    Stops when the step is below CURVE_TOLERANCE, when the fit is already
    perfect (separated labels), or after CURVE_MAX_ITERATIONS.
    """
    A = np.column_stack([np.ones_like(s), s])
    base = min(max(float(y.mean()), 1e-12), 1 - 1e-12)
    beta = np.array([math.log(base / (1 - base)), 0.0])
    loss = _nll(A @ beta, y)

    for _ in range(CURVE_MAX_ITERATIONS):
        p = expit(A @ beta)
        grad = A.T @ (p - y)
        H = A.T @ (A * (p * (1 - p))[:, None])
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]

        size = 1.0
        for _ in range(50):
            trial = beta - size * step
            trial_loss = _nll(A @ trial, y)
            if trial_loss <= loss:
                break
            size *= 0.5
        else:
            break

        moved = float(np.max(np.abs(size * step)))
        beta, loss = trial, trial_loss
        if moved < CURVE_TOLERANCE or loss < CURVE_PERFECT_FIT:
            break

    return float(beta[1]), float(beta[0])


def fit_risk_curve(rule: PredictionRule, ds: Dataset) -> RiskCurve:
    if ds.n == 0:
        raise DataError("empty dataset")
    s = np.asarray(rule_score(rule, ds.values), dtype=float)
    if s.min() == s.max():
        raise DataError("constant score")
    slope, intercept = _fit_univariate_logistic(s, ds.labels.astype(float))

    lo, hi = int(math.floor(s.min())), int(math.ceil(s.max()))
    grid = np.arange(lo, hi + 1)
    probs = stable_sigmoid(intercept + slope * grid)
    return RiskCurve(slope, intercept,
                     tuple((int(g), float(q)) for g, q in zip(grid, probs)))


def rule_predict_proba(rule: PredictionRule, curve: RiskCurve, x):
    """Risk probability for a row (or rows) scored by the rule."""
    p = stable_sigmoid(curve.intercept + curve.slope * np.asarray(rule_score(rule, x), dtype=float))
    return float(p) if np.ndim(p) == 0 else p


# =====================================================================
# 5.  Score card text
# =====================================================================

def render_score_card(rule: PredictionRule, curve: RiskCurve | None = None,
                      title: str = "Prediction rule") -> str:
    """Plain-text score card: numbered items, risk factors then protective."""
    risk = [it for it in rule.items if it.score > 0]
    protective = [it for it in rule.items if it.score < 0]
    width = max([len(it.feature_name) for it in rule.items] + [len("Risk factor")]) + 6
    return render_template(
        "score_card.txt.j2",
        title=title,
        risk=risk,
        protective=protective,
        width=width,
        curve=curve,
    )
