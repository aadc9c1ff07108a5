from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from riskrules.errors import DataError
from riskrules.metrics import (REPORT_FIELDS, auc, confusion_metrics, evaluate, report_from_counts,
                               roc_points, select_threshold, sens_spec_gap, threshold_candidates)


def _pair_count_auc(scores, labels) -> float:
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = Fraction(0)
    for a in pos:
        for b in neg:
            total += 1 if a > b else Fraction(1, 2) if a == b else 0
    return float(total / (len(pos) * len(neg)))


# ---------------------------------------------------------------------------
# AUC
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("scores,labels,expected", [
    ([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0], 1.0),
    ([0.4, 0.4, 0.4, 0.4], [1, 0, 1, 0], 0.5),
    ([0.9, 0.4, 0.6, 0.2], [1, 0, 0, 1], 0.5),
])
def test_auc_examples(scores, labels, expected):
    assert auc(scores, labels) == expected


def test_auc_matches_pair_count_exactly():
    rng = np.random.default_rng(99)
    for _ in range(200):
        n = int(rng.integers(2, 201))
        labels = rng.integers(0, 2, size=n)
        labels[0], labels[1] = 0, 1
        # coarse grid so ties are common
        scores = rng.integers(0, int(rng.integers(2, 30)), size=n) / 7.0
        assert auc(scores, labels) == _pair_count_auc(scores.tolist(), labels.tolist())


def test_auc_invariant_under_increasing_transform():
    rng = np.random.default_rng(3)
    s = rng.normal(size=80)
    y = rng.integers(0, 2, size=80)
    y[:2] = [0, 1]
    assert auc(np.exp(s), y) == auc(s, y)
    assert auc(3 * s - 1, y) == auc(s, y)


def test_auc_of_negated_scores():
    rng = np.random.default_rng(4)
    s = rng.normal(size=50)
    y = rng.integers(0, 2, size=50)
    y[:2] = [0, 1]
    assert auc(s, y) + auc(-s, y) == pytest.approx(1.0, abs=1e-15)


def test_auc_single_class():
    with pytest.raises(DataError):
        auc([0.1, 0.2], [1, 1])


def test_roc_points_run_corner_to_corner():
    pts = roc_points([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0])
    assert pts[0] == (0.0, 0.0)
    assert pts[-1] == (1.0, 1.0)
    assert (0.0, 1.0) in pts


# ---------------------------------------------------------------------------
# Confusion metrics
# ---------------------------------------------------------------------------

def test_perfect_classifier():
    r = confusion_metrics([0.9, 0.6, 0.4, 0.1], [1, 1, 0, 0], 0.5)
    assert (r.tp, r.fp, r.tn, r.fn) == (2, 0, 2, 0)
    assert r.sensitivity == r.specificity == r.ppv == r.npv == r.f_measure == 1.0
    assert r.auc is None


def test_everything_positive():
    r = confusion_metrics([0.1, 0.2, 0.3, 0.4], [1, 0, 1, 0], 0.0)
    assert r.sensitivity == 1.0
    assert r.specificity == 0.0
    assert r.ppv == 0.5
    assert r.npv is None


def test_rates_from_counts():
    r = report_from_counts(tp=2, fp=1, tn=2, fn=1, tau=0.5)
    for v in (r.sensitivity, r.specificity, r.ppv, r.npv, r.f_measure):
        assert v == pytest.approx(2 / 3, abs=1e-15)


def test_undefined_rates_are_none():
    r = confusion_metrics([0.9, 0.8], [0, 0], 0.95)
    assert r.sensitivity is None and r.ppv is None and r.f_measure is None
    assert r.specificity == 1.0


def test_counts_and_rates_are_consistent():
    rng = np.random.default_rng(5)
    for _ in range(50):
        n = int(rng.integers(1, 60))
        probs = rng.random(n)
        labels = rng.integers(0, 2, size=n)
        r = confusion_metrics(probs, labels, float(rng.random()))
        assert r.n == n
        if r.tp + r.fn:
            assert r.sensitivity == r.tp / (r.tp + r.fn)
        if r.tn + r.fp:
            assert r.specificity == r.tn / (r.tn + r.fp)


def test_report_dict_field_names():
    d = report_from_counts(3, 1, 4, 2, 0.4, auc_value=0.8).to_dict()
    assert set(REPORT_FIELDS) <= set(d)
    assert list(d)[:7] == ["threshold", "sensitivity", "specificity", "ppv", "npv",
                           "f_measure", "auc"]
    assert (d["tp"], d["fp"], d["tn"], d["fn"]) == (3, 1, 4, 2)


def test_report_text_table():
    text = report_from_counts(2, 0, 0, 0, 0.5).to_text("Check")
    assert text.startswith("Check\n")
    assert "sensitivity   1.0000" in text
    assert "specificity   undefined" in text
    assert "tp=2" in text


def test_evaluate_adds_auc():
    r = evaluate([0.9, 0.4, 0.6, 0.2], [1, 0, 0, 1], 0.5)
    assert r.auc == 0.5
    assert evaluate([0.9, 0.4], [1, 1], 0.5).auc is None


# ---------------------------------------------------------------------------
# Threshold selection
# ---------------------------------------------------------------------------

def test_threshold_examples():
    assert select_threshold([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 0.5
    assert select_threshold([0.3, 0.7], [0, 1]) == 0.5


def test_inverted_labels_still_valid():
    tau = select_threshold([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0])
    assert 0.0 <= tau <= 1.0


def test_candidates():
    np.testing.assert_allclose(threshold_candidates([0.2, 0.6, 0.2]), [0.0, 0.4, 1.0])


def test_threshold_is_optimal_over_all_candidates():
    rng = np.random.default_rng(8)
    for _ in range(100):
        n = int(rng.integers(2, 80))
        probs = np.round(rng.random(n), int(rng.integers(1, 4)))
        labels = rng.integers(0, 2, size=n)
        labels[0], labels[1] = 0, 1
        tau = select_threshold(probs, labels)

        def gap(t):
            r = confusion_metrics(probs, labels, t)
            return abs(r.sensitivity - r.specificity)

        best = gap(tau)
        cands = threshold_candidates(probs)
        assert all(best <= gap(c) + 1e-15 for c in cands)
        # the vectorised gap agrees with the direct count
        np.testing.assert_allclose(sens_spec_gap(probs, labels, cands),
                                   [gap(c) for c in cands], atol=1e-15)
        # ties go to the smaller threshold
        assert all(gap(c) > best for c in cands if c < tau)


def test_threshold_needs_both_classes():
    with pytest.raises(DataError):
        select_threshold([0.2, 0.4], [0, 0])
