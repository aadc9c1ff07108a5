from __future__ import annotations

import numpy as np
import pytest

from riskrules.dataset import Dataset
from riskrules.errors import ConfigError, DataError, FitError
from riskrules.rulegen import (BootstrapSummary, PredictionRule, RankedFeature, RiskCurve,
                               RuleGenConfig, RuleItem, bootstrap_average, derive_rule,
                               feature_importance, fit_risk_curve, render_score_card,
                               replicate_selections, rule_predict_proba, rule_score,
                               summary_model)
from riskrules.similarity import cosine_similarity_matrix
from riskrules.sslr import SslrConfig, fit_sslr
from riskrules.synth import SynthConfig, generate

from conftest import make_dataset


def _summary(mean, std=None, names=None) -> BootstrapSummary:
    mean = np.asarray(mean, dtype=float)
    std = np.zeros_like(mean) if std is None else np.asarray(std, dtype=float)
    names = names or tuple(f"f{j}" for j in range(mean.size))
    return BootstrapSummary(mean, std, 0.0, 1, tuple(names), mean[None, :], np.zeros(1))


def _unit_std_ds(p: int, n: int = 4) -> Dataset:
    """Columns alternating +1/-1, population std exactly 1."""
    col = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    return Dataset(np.tile(col[:, None], (1, p)), np.arange(n) % 2, tuple(f"f{j}" for j in range(p)))


def _rule(pairs, cap: int = 10, binarize: bool = True) -> PredictionRule:
    items = tuple(RuleItem(i, f"f{i}", s, 0.0) for i, s in pairs)
    return PredictionRule(items, len(items), cap, binarize)


# ---------------------------------------------------------------------------
# Bootstrap averaging
# ---------------------------------------------------------------------------

def test_identity_resample_reproduces_single_fit(small_ds):
    S = cosine_similarity_matrix(small_ds)
    cfg = SslrConfig(lam=1.0, alpha=0.5)
    summary = bootstrap_average(small_ds, S, cfg, RuleGenConfig(k=2, B=1),
                                sampler=lambda rng, n: np.arange(n))
    single = fit_sslr(small_ds, S, cfg)
    np.testing.assert_array_equal(summary.mean_weights, single.coefficients)
    assert np.all(summary.std_weights == 0.0)
    assert summary.mean_intercept == single.intercept
    assert summary_model(summary).coefficients.tolist() == single.coefficients.tolist()


def test_bootstrap_is_deterministic(small_ds):
    S = cosine_similarity_matrix(small_ds)
    cfg, rg = SslrConfig(lam=2.0), RuleGenConfig(B=5, seed=3)
    a = bootstrap_average(small_ds, S, cfg, rg)
    b = bootstrap_average(small_ds, S, cfg, rg)
    np.testing.assert_array_equal(a.mean_weights, b.mean_weights)
    np.testing.assert_array_equal(a.std_weights, b.std_weights)
    np.testing.assert_array_equal(a.replicate_weights, b.replicate_weights)


def test_bootstrap_seed_matters(small_ds):
    S = cosine_similarity_matrix(small_ds)
    a = bootstrap_average(small_ds, S, SslrConfig(lam=2.0), RuleGenConfig(B=3, seed=1))
    b = bootstrap_average(small_ds, S, SslrConfig(lam=2.0), RuleGenConfig(B=3, seed=2))
    assert not np.array_equal(a.replicate_weights, b.replicate_weights)


def test_parallel_matches_sequential(small_ds):
    S = cosine_similarity_matrix(small_ds)
    cfg, rg = SslrConfig(lam=2.0), RuleGenConfig(B=4, seed=9)
    seq = bootstrap_average(small_ds, S, cfg, rg, n_jobs=1)
    par = bootstrap_average(small_ds, S, cfg, rg, n_jobs=2)
    np.testing.assert_allclose(par.replicate_weights, seq.replicate_weights, atol=1e-6)


def test_summary_statistics(small_ds):
    S = cosine_similarity_matrix(small_ds)
    s = bootstrap_average(small_ds, S, SslrConfig(lam=2.0), RuleGenConfig(B=6, seed=4))
    assert s.replicate_weights.shape == (6, small_ds.p)
    np.testing.assert_allclose(s.mean_weights, s.replicate_weights.mean(axis=0))
    np.testing.assert_allclose(s.std_weights, s.replicate_weights.std(axis=0))
    assert np.all(s.std_weights >= 0)


def test_single_class_resamples_exhaust_retries(small_ds):
    negatives = np.flatnonzero(small_ds.labels == 0)
    with pytest.raises(FitError, match="single class"):
        bootstrap_average(small_ds, cosine_similarity_matrix(small_ds), SslrConfig(),
                          RuleGenConfig(B=1), sampler=lambda rng, n: negatives)


@pytest.mark.slow
def test_dominant_feature_keeps_its_sign():
    cfg = SynthConfig(n=300, p=6, group_size=1, rho=0.0,
                      true_weights=(3.0, 0.0, 0.0, 0.0, 0.0, 0.0), seed=21)
    ds = generate(cfg)
    s = bootstrap_average(ds, cosine_similarity_matrix(ds), SslrConfig(),
                          RuleGenConfig(B=100, seed=21))
    assert np.all(s.replicate_weights[:, 0] > 0)


# ---------------------------------------------------------------------------
# Feature importance
# ---------------------------------------------------------------------------

def test_importance_example():
    X = np.column_stack([[2.0, -2.0, 2.0, -2.0], [1.0, -1.0, 1.0, -1.0]])
    ds = Dataset(X, [0, 1, 0, 1], ("a", "b"))
    ranking = feature_importance(_summary([0.5, -0.5]), ds)
    assert [r.index for r in ranking] == [0, 1]
    assert [r.importance for r in ranking] == [1.0, 0.5]
    assert ranking[1].mean_weight == -0.5


def test_constant_column_and_zero_weight_have_zero_importance():
    X = np.column_stack([[3.0, 3.0, 3.0, 3.0], [1.0, -1.0, 1.0, -1.0], [1.0, 0.0, 1.0, 0.0]])
    ds = Dataset(X, [0, 1, 0, 1], ("const", "zero_w", "live"))
    ranking = feature_importance(_summary([5.0, 0.0, 0.1]), ds)
    imp = {r.index: r.importance for r in ranking}
    assert imp[0] == 0.0 and imp[1] == 0.0 and imp[2] > 0
    assert ranking[0].index == 2
    # ties broken by index
    assert [r.index for r in ranking[1:]] == [0, 1]


def test_replicate_selections(small_ds):
    S = cosine_similarity_matrix(small_ds)
    s = bootstrap_average(small_ds, S, SslrConfig(lam=1.0), RuleGenConfig(B=4, seed=2))
    sel = replicate_selections(s, small_ds, k=2)
    assert len(sel) == 4
    assert all(len(x) <= 2 and x <= set(range(small_ds.p)) for x in sel)


# ---------------------------------------------------------------------------
# Rule construction
# ---------------------------------------------------------------------------

def test_derive_rule_example():
    summary = _summary([0.82, 0.41, -0.25, 0.03], std=[0.082, 0.0, 0.041, 0.0])
    ranking = feature_importance(summary, _unit_std_ds(4))
    rule = derive_rule(summary, ranking, RuleGenConfig(k=4))
    assert rule.scores.tolist() == [10, 5, -3, 1]
    assert rule.indices.tolist() == [0, 1, 2, 3]
    assert rule.items[0].score_std == pytest.approx(1.0)
    assert rule.items[2].score_std == pytest.approx(0.5)


@pytest.mark.parametrize("w,expected", [(0.003, 10), (-7.5, -10)])
def test_single_item_hits_the_cap(w, expected):
    summary = _summary([w])
    rule = derive_rule(summary, feature_importance(summary, _unit_std_ds(1)), RuleGenConfig(k=1))
    assert rule.scores.tolist() == [expected]


def test_too_few_important_features():
    summary = _summary([1.0, 0.0, 0.0])
    ranking = feature_importance(summary, _unit_std_ds(3))
    with pytest.raises(DataError, match="fewer than k=2"):
        derive_rule(summary, ranking, RuleGenConfig(k=2))


def test_risk_factors_only_skips_protective_features():
    summary = _summary([-0.9, 0.5, 0.2, -0.1])
    ranking = feature_importance(summary, _unit_std_ds(4))
    rule = derive_rule(summary, ranking, RuleGenConfig(k=2, risk_factors_only=True))
    assert rule.indices.tolist() == [1, 2]
    assert rule.scores.tolist() == [10, 4]
    with pytest.raises(DataError, match="risk factors"):
        derive_rule(summary, ranking, RuleGenConfig(k=3, risk_factors_only=True))


def test_rank_invariance_under_positive_scaling():
    rng = np.random.default_rng(5)
    ds = make_dataset(n=50, p=8, seed=5)
    mean = rng.normal(size=8)
    base = derive_rule(_summary(mean), feature_importance(_summary(mean), ds), RuleGenConfig(k=5))
    for c in (0.25, 2.0, 1024.0, 0.1, 1 / 3, 0.7, 11.0, 3.3e5):
        scaled = _summary(mean * c)
        ranking = feature_importance(scaled, ds)
        assert [r.index for r in ranking] == [r.index for r in feature_importance(_summary(mean), ds)]
        assert derive_rule(scaled, ranking, RuleGenConfig(k=5)).items == base.items


@pytest.mark.parametrize("c", [1.0, 0.1, 11.0, 1 / 3, 0.7, 3.3, 1e-6])
def test_half_way_weights_round_the_same_at_any_scale(c):
    # 0.07/0.2 and 0.05/0.2 put the scaled weights on 3.5 and 2.5
    summary = _summary(np.array([0.2, 0.05, 0.07]) * c)
    rule = derive_rule(summary, feature_importance(summary, _unit_std_ds(3)), RuleGenConfig(k=3))
    assert [(it.feature_index, it.score) for it in rule.items] == [(0, 10), (2, 4), (1, 3)]


def test_randomized_rules_keep_their_invariants():
    rng = np.random.default_rng(1000)
    for _ in range(1000):
        p = int(rng.integers(1, 25))
        k = int(rng.integers(1, p + 1))
        mean = rng.normal(size=p) * 10.0 ** rng.uniform(-3, 3)
        std = np.abs(rng.normal(size=p))
        col_sd = rng.uniform(0.1, 3.0, size=p)
        X = np.vstack([col_sd, -col_sd])
        ds = Dataset(X, [0, 1], tuple(f"f{j}" for j in range(p)))
        summary = _summary(mean, std)
        rule = derive_rule(summary, feature_importance(summary, ds), RuleGenConfig(k=k))

        scores = rule.scores
        assert len(rule.items) == k
        assert np.all(scores != 0) and np.all(np.abs(scores) <= 10)
        assert np.max(np.abs(scores)) == 10
        assert np.all(np.sign(scores) == np.sign(mean[rule.indices]))
        keys = [(-abs(it.score), it.feature_index) for it in rule.items]
        assert keys == sorted(keys)


def test_prediction_rule_validates_items():
    with pytest.raises(DataError):
        _rule([(0, 10), (1, 0)])
    with pytest.raises(DataError):
        _rule([(0, 5), (1, 3)])          # nothing reaches the cap
    with pytest.raises(DataError):
        _rule([(1, 5), (0, 10)])         # out of order


def test_rule_json_shape():
    rule = _rule([(3, 10), (1, -4)])
    d = rule.to_dict()
    assert d["items"][0] == {"feature": "f3", "index": 3, "score": 10, "std": 0.0}
    assert PredictionRule.from_dict(d) == rule


@pytest.mark.parametrize("config", [{"k": 0}, {"B": 0}, {"score_cap": 0}, {"seed": -1}])
def test_rulegen_config_validation(config):
    with pytest.raises(ConfigError):
        RuleGenConfig(**config)


# ---------------------------------------------------------------------------
# Scoring and risk curve
# ---------------------------------------------------------------------------

def test_rule_score_examples():
    rule = _rule([(1, 10), (2, -3)])
    assert rule_score(rule, [0.0, 0.0, 0.0]) == 0
    assert rule_score(rule, [5.0, 1.0, 2.0]) == 7
    assert rule_score(rule, [0.0, 3.0, 0.0]) == 10
    np.testing.assert_array_equal(rule_score(rule, np.array([[0, 1, 1], [1, 0, 0]])), [7, 0])


def test_rule_score_raw_values():
    rule = _rule([(0, 10), (1, -3)], binarize=False)
    assert rule_score(rule, [2.0, 0.5]) == pytest.approx(18.5)
    assert rule_score(rule, [2.0, 0.5], binarize=True) == 7


def test_rule_score_index_out_of_range():
    with pytest.raises(DataError, match="out of range"):
        rule_score(_rule([(4, 10)]), [1.0, 1.0])


def test_risk_curve_independent_labels():
    rng = np.random.default_rng(8)
    n = 20000
    X = (rng.random((n, 2)) < 0.5).astype(float)
    y = (rng.random(n) < 0.3).astype(int)
    ds = Dataset(X, y, ("f0", "f1"))
    curve = fit_risk_curve(_rule([(0, 10), (1, 5)]), ds)
    assert [s for s, _ in curve.table] == list(range(0, 16))
    assert abs(curve.slope) < 0.01
    for _, prob in curve.table:
        assert prob == pytest.approx(y.mean(), abs=0.02)


def test_risk_curve_separated_labels():
    x = np.array([0.0] * 20 + [1.0] * 20)
    ds = Dataset(x[:, None], x.astype(int), ("f0",))
    curve = fit_risk_curve(_rule([(0, 10)]), ds)
    table = dict(curve.table)
    assert table[0] < 0.01
    assert table[10] > 0.99
    assert all(0.0 < p < 1.0 for p in table.values())


def test_positive_slope_curves_are_strictly_increasing():
    rng = np.random.default_rng(31)
    for trial in range(20):
        n, p = 400, 3
        X = (rng.random((n, p)) < 0.4).astype(float)
        y = (rng.random(n) < 0.2 + 0.4 * X[:, 0]).astype(int)
        ds = Dataset(X, y, tuple(f"f{j}" for j in range(p)))
        rule = _rule([(0, 10), (1, int(rng.integers(1, 10))), (2, -int(rng.integers(1, 10)))])
        curve = fit_risk_curve(rule, ds)
        if curve.slope > 0:
            probs = [q for _, q in curve.table]
            assert all(a < b for a, b in zip(probs, probs[1:])), trial


def test_constant_score_is_rejected():
    ds = Dataset(np.zeros((6, 1)), [0, 1, 0, 1, 0, 1], ("f0",))
    with pytest.raises(DataError, match="constant score"):
        fit_risk_curve(_rule([(0, 10)]), ds)


def test_rule_predict_proba_follows_the_curve():
    rule = _rule([(0, 10), (1, -3)])
    curve = RiskCurve(slope=0.2, intercept=-1.0, table=())
    expected = 1.0 / (1.0 + np.exp(-(-1.0 + 0.2 * 7)))
    assert rule_predict_proba(rule, curve, [1.0, 1.0]) == pytest.approx(expected)


def test_score_card_layout():
    rule = _rule([(0, 10), (2, -4), (1, 2)])
    curve = RiskCurve(0.3, -2.0, ((-4, 0.04), (0, 0.12), (12, 0.83)))
    card = render_score_card(rule, curve, title="Preterm risk")
    assert card.startswith("Preterm risk\n")
    assert "1. f0" in card and "2. f1" in card and "3. f2" in card
    assert "Protective factor" in card
    assert "10 (±0.0)" in card
    assert "-4 (±0.0)" in card
    assert " 83.0%" in card
    assert card.index("1. f0") < card.index("Protective factor") < card.index("3. f2")
