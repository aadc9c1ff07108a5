"""
Evaluation -- threshold selection, confusion-matrix rates, AUC.

A row is predicted positive when its probability is >= tau.  tau is chosen
on the training data where sensitivity matches specificity.  Rates whose
denominator is zero are reported as None (JSON null), never as 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import rankdata
from sklearn.metrics import roc_curve

from riskrules.artifacts import render_template
from riskrules.errors import DataError

REPORT_FIELDS = ("threshold", "sensitivity", "specificity", "ppv", "npv", "f_measure", "auc")


@dataclass(frozen=True)
class EvalReport:
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    sensitivity: Optional[float]
    specificity: Optional[float]
    ppv: Optional[float]
    npv: Optional[float]
    f_measure: Optional[float]
    auc: Optional[float] = None

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        d = {name: getattr(self, name) for name in REPORT_FIELDS}
        d.update(tp=self.tp, fp=self.fp, tn=self.tn, fn=self.fn)
        return d

    def to_text(self, title: str = "Evaluation") -> str:
        def fmt(v):
            return "undefined" if v is None else f"{v:.4f}"
        rows = [(name, fmt(getattr(self, name))) for name in REPORT_FIELDS]
        return render_template("eval_report.txt.j2", title=title, rows=rows, report=self)


def _as_binary(probs, labels) -> tuple[np.ndarray, np.ndarray]:
    probs = np.asarray(probs, dtype=float).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if probs.shape != labels.shape:
        raise DataError(f"{probs.size} scores but {labels.size} labels")
    if not np.all((labels == 0) | (labels == 1)):
        raise DataError("label value outside {0,1}")
    return probs, labels.astype(np.int8)


def _require_both_classes(labels: np.ndarray) -> None:
    pos = int(labels.sum())
    if pos == 0 or pos == labels.size:
        raise DataError("both classes must be present")


def _ratio(num: int | float, den: int | float) -> Optional[float]:
    return None if den == 0 else num / den


# =====================================================================
# AUC
# =====================================================================

def auc(scores, labels) -> float:
    """
    Mann-Whitney AUC: P(score_pos > score_neg), ties counted as 1/2.

    Uses the tie-corrected rank-sum; every intermediate value is an exact
    half-integer, so the result equals the pairwise count.
    """
    scores, labels = _as_binary(scores, labels)
    _require_both_classes(labels)
    ranks = rankdata(scores, method="average")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    u = float(ranks[labels == 1].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def roc_points(scores, labels) -> list[tuple[float, float]]:
    """(fpr, tpr) pairs, every distinct threshold kept."""
    scores, labels = _as_binary(scores, labels)
    _require_both_classes(labels)
    fpr, tpr, _ = roc_curve(labels, scores, drop_intermediate=False)
    return [(float(a), float(b)) for a, b in zip(fpr, tpr)]


# =====================================================================
# Threshold metrics
# =====================================================================

def _counts(probs: np.ndarray, labels: np.ndarray, tau: float) -> tuple[int, int, int, int]:
    pred = probs >= tau
    pos = labels == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    tn = int(np.sum(~pred & ~pos))
    fn = int(np.sum(~pred & pos))
    return tp, fp, tn, fn


def report_from_counts(tp: int, fp: int, tn: int, fn: int, tau: float,
                       auc_value: Optional[float] = None) -> EvalReport:
    sens = _ratio(tp, tp + fn)
    spec = _ratio(tn, tn + fp)
    ppv = _ratio(tp, tp + fp)
    npv = _ratio(tn, tn + fn)
    f = None
    if sens is not None and ppv is not None:
        f = _ratio(2.0 * sens * ppv, sens + ppv)
    return EvalReport(float(tau), tp, fp, tn, fn, sens, spec, ppv, npv, f, auc_value)


def confusion_metrics(probs, labels, tau: float) -> EvalReport:
    probs, labels = _as_binary(probs, labels)
    if probs.size == 0:
        raise DataError("nothing to evaluate")
    return report_from_counts(*_counts(probs, labels, tau), tau)


def threshold_candidates(probs) -> np.ndarray:
    """0, the midpoints of sorted distinct probabilities, and 1 (ascending)."""
    u = np.unique(np.asarray(probs, dtype=float))
    mids = (u[:-1] + u[1:]) / 2.0
    return np.unique(np.concatenate([[0.0], mids, [1.0]]))


def sens_spec_gap(probs, labels, candidates: np.ndarray) -> np.ndarray:
    """|sensitivity - specificity| at each candidate threshold."""
    probs, labels = _as_binary(probs, labels)
    pos = np.sort(probs[labels == 1])
    neg = np.sort(probs[labels == 0])
    tp = pos.size - np.searchsorted(pos, candidates, side="left")
    tn = np.searchsorted(neg, candidates, side="left")
    return np.abs(tp / pos.size - tn / neg.size)


def select_threshold(probs, labels) -> float:
    """Candidate tau minimizing |sens - spec|; ties go to the smaller tau."""
    probs, labels = _as_binary(probs, labels)
    _require_both_classes(labels)
    cands = threshold_candidates(probs)
    gap = sens_spec_gap(probs, labels, cands)
    return float(cands[int(np.argmin(gap))])


def evaluate(probs, labels, tau: float) -> EvalReport:
    """Confusion metrics at tau plus AUC (None when a class is missing)."""
    probs, labels = _as_binary(probs, labels)
    report = confusion_metrics(probs, labels, tau)
    pos = int(labels.sum())
    auc_value = auc(probs, labels) if 0 < pos < labels.size else None
    return report_from_counts(report.tp, report.fp, report.tn, report.fn, tau, auc_value)
