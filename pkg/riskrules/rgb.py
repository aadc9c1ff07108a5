"""
Randomized Gradient Boosting (RGB) -- the accuracy upper bound.

P(y=1|x) = sigmoid(F0 + sum_t rate * h_t(x)), F0 the base log-odds.

Each round t:
  1. Draw a feature subset (per_tree_features, without replacement) and a
     row subsample (ceil(row_subsample * n), without replacement).
  2. Residual y - sigmoid(F) and hessian sigmoid(F)(1 - sigmoid(F)) per row.
  3. Grow a regression tree best-first on the residuals: always split the
     leaf with the largest squared-error gain; every candidate split sees a
     fresh draw of per_node_features from the tree's subset.  Stops at
     max_leaves, when nothing gains, or when a child would have fewer than
     min_samples_leaf rows.
  4. Leaf value = sum(residual) / sum(hessian) (Newton step for binomial
     deviance); F += rate * tree(x).

Ties in split search go to the lowest feature index, then the lowest
threshold.  Same seed, same model.
"""

from __future__ import annotations

import heapq
import math
import sys
from dataclasses import asdict, dataclass, replace
from typing import Iterator, Optional

import numpy as np
from tqdm import tqdm

from riskrules.dataset import Dataset
from riskrules.errors import ConfigError, DataError
from riskrules.sslr import stable_sigmoid

MIN_HESSIAN = 1e-16
LEAF = -1


@dataclass(frozen=True)
class RgbConfig:
    n_trees: int = 500
    learning_rate: float = 0.03
    max_leaves: int = 256
    per_tree_features: Optional[int] = None   # default floor(p/3)
    per_node_features: Optional[int] = None   # default ceil(per_tree/3)
    row_subsample: float = 0.5
    min_samples_leaf: int = 5
    seed: int = 0

    def __post_init__(self):
        if int(self.n_trees) != self.n_trees or self.n_trees < 0:
            raise ConfigError("n_trees must be a non-negative integer")
        if not 0.0 < self.learning_rate < 1.0:
            raise ConfigError("learning_rate must be in (0,1)")
        if int(self.max_leaves) != self.max_leaves or self.max_leaves < 1:
            raise ConfigError("max_leaves must be a positive integer")
        if not 0.0 < self.row_subsample <= 1.0:
            raise ConfigError("row_subsample must be in (0,1]")
        if int(self.min_samples_leaf) != self.min_samples_leaf or self.min_samples_leaf < 1:
            raise ConfigError("min_samples_leaf must be a positive integer")
        for name in ("per_tree_features", "per_node_features"):
            v = getattr(self, name)
            if v is not None and (int(v) != v or v < 1):
                raise ConfigError(f"{name} must be a positive integer")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")

    def resolve(self, p: int) -> "RgbConfig":
        """Fill in the feature-subset defaults for p features and check them."""
        m = self.per_tree_features if self.per_tree_features is not None else max(1, p // 3)
        m_node = (self.per_node_features if self.per_node_features is not None
                  else max(1, math.ceil(m / 3)))
        if m > p:
            raise ConfigError(f"per_tree_features ({m}) must be <= p ({p})")
        if m_node > m:
            raise ConfigError(
                f"per_node_features ({m_node}) must be <= per_tree_features ({m})")
        return replace(self, per_tree_features=m, per_node_features=m_node)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RegressionTree:
    """
    Node arrays, index-linked.  Node 0 is the root.

    feature[i] == -1 marks a leaf whose output is value[i]; otherwise rows
    with x[feature] <= threshold go to left[i], the rest to right[i].
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    feature_subset: tuple[int, ...] = ()

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature == LEAF))

    @property
    def max_feature(self) -> int:
        internal = self.feature[self.feature != LEAF]
        return int(internal.max()) if internal.size else -1

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(X.shape[0], dtype=np.intp)
        active = self.feature[node] != LEAF
        while active.any():
            rows = np.flatnonzero(active)
            cur = node[rows]
            go_left = X[rows, self.feature[cur]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] != LEAF
        return self.value[node]

    def to_dict(self) -> dict:
        nodes = []
        for i in range(self.n_nodes):
            if self.feature[i] == LEAF:
                nodes.append({"value": float(self.value[i]), "n": int(self.n_samples[i])})
            else:
                nodes.append({"feature": int(self.feature[i]),
                              "threshold": float(self.threshold[i]),
                              "left": int(self.left[i]), "right": int(self.right[i]),
                              "n": int(self.n_samples[i])})
        return {"features": list(self.feature_subset), "nodes": nodes}

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        try:
            nodes = d["nodes"]
            feature = np.array([nd.get("feature", LEAF) for nd in nodes], dtype=np.intp)
            return cls(
                feature=feature,
                threshold=np.array([nd.get("threshold", 0.0) for nd in nodes], dtype=float),
                left=np.array([nd.get("left", LEAF) for nd in nodes], dtype=np.intp),
                right=np.array([nd.get("right", LEAF) for nd in nodes], dtype=np.intp),
                value=np.array([nd.get("value", 0.0) for nd in nodes], dtype=float),
                n_samples=np.array([nd.get("n", 0) for nd in nodes], dtype=np.intp),
                feature_subset=tuple(int(f) for f in d.get("features", ())),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise DataError(f"malformed tree: {exc}") from exc


@dataclass(frozen=True)
class RgbEnsemble:
    initial_score: float
    trees: tuple[tuple[RegressionTree, float], ...]

    @property
    def max_feature(self) -> int:
        return max((t.max_feature for t, _ in self.trees), default=-1)

    def to_dict(self) -> dict:
        rates = {rate for _, rate in self.trees}
        return {
            "f0": self.initial_score,
            "rate": rates.pop() if len(rates) == 1 else None,
            "trees": [dict(tree.to_dict(), rate=rate) for tree, rate in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RgbEnsemble":
        try:
            default_rate = d.get("rate")
            trees = tuple((RegressionTree.from_dict(t), float(t.get("rate", default_rate)))
                          for t in d["trees"])
            return cls(float(d["f0"]), trees)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed ensemble: {exc}") from exc


# =====================================================================
# 1.  Tree growing
# =====================================================================

@dataclass
class _Split:
    gain: float
    feature: int
    threshold: float
    left_rows: np.ndarray
    right_rows: np.ndarray


class _Leaf:
    """Frontier leaf during growth; ordered so heapq pops the largest gain."""

    def __init__(self, node_id: int, rows: np.ndarray, split: _Split | None, order: int):
        self.node_id = node_id
        self.rows = rows
        self.split = split
        self.order = order

    def __lt__(self, other: "_Leaf") -> bool:
        if self.split.gain != other.split.gain:
            return self.split.gain > other.split.gain
        return self.order < other.order


def _best_split(X: np.ndarray, rows: np.ndarray, residuals: np.ndarray,
                features: np.ndarray, min_samples_leaf: int) -> _Split | None:
    """
    Best squared-error split of `rows` over `features` (ascending).

    gain = G_L^2/n_L + G_R^2/n_R - G^2/n on the residual sums.  Only
    strictly better candidates replace the incumbent, so ties keep the
    lowest feature index and then the lowest threshold.
    """
    n = rows.size
    if n < 2 * min_samples_leaf:
        return None
    r = residuals[rows]
    total = float(r.sum())
    parent = total * total / n
    floor = 1e-12 * max(float(r @ r), np.finfo(float).tiny)

    best: _Split | None = None
    best_gain = floor
    for f in features:
        x = X[rows, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        cs = np.cumsum(r[order])
        # split after position i: left = order[:i+1]
        i = np.arange(min_samples_leaf - 1, n - min_samples_leaf)
        if i.size == 0:
            continue
        i = i[xs[i] < xs[i + 1]]
        if i.size == 0:
            continue
        n_left = i + 1.0
        g_left = cs[i]
        g_right = total - g_left
        gain = g_left * g_left / n_left + g_right * g_right / (n - n_left) - parent
        j = int(np.argmax(gain))   # first max -> lowest threshold
        if gain[j] > best_gain:
            pos = int(i[j])
            thr = (xs[pos] + xs[pos + 1]) / 2.0
            if thr >= xs[pos + 1]:   # adjacent floats
                thr = xs[pos]
            best_gain = float(gain[j])
            best = _Split(best_gain, int(f), float(thr),
                          np.sort(rows[order[:pos + 1]]), np.sort(rows[order[pos + 1:]]))
    return best


def fit_gradient_tree(
    X: np.ndarray,
    rows: np.ndarray,
    residuals: np.ndarray,
    hessians: np.ndarray,
    feature_subset,
    cfg: RgbConfig,
    rng: np.random.Generator,
) -> RegressionTree:
    """
    Grow one best-first regression tree on the given rows.

    X, residuals and hessians are indexed by row id; only `rows` are used.
    cfg must be resolved (per_node_features set).
    """
    rows = np.asarray(rows, dtype=np.intp)
    if rows.size == 0:
        raise DataError("cannot grow a tree on zero rows")
    if np.any(hessians[rows] <= 0):
        raise DataError("hessians must be strictly positive")
    subset = np.sort(np.asarray(list(feature_subset), dtype=np.intp))
    m_node = min(cfg.per_node_features or subset.size, subset.size)

    feature, threshold, left, right, node_rows = [LEAF], [0.0], [LEAF], [LEAF], [rows]

    def _candidate(node_rows_: np.ndarray) -> _Split | None:
        feats = np.sort(rng.choice(subset, size=m_node, replace=False))
        return _best_split(X, node_rows_, residuals, feats, cfg.min_samples_leaf)

    frontier: list[_Leaf] = []
    counter = 0
    leaves = 1
    root_split = _candidate(rows) if cfg.max_leaves > 1 else None
    if root_split is not None:
        heapq.heappush(frontier, _Leaf(0, rows, root_split, counter))

    while frontier and leaves < cfg.max_leaves:
        leaf = heapq.heappop(frontier)
        sp = leaf.split
        nid = leaf.node_id
        lid, rid = len(feature), len(feature) + 1
        feature[nid], threshold[nid], left[nid], right[nid] = sp.feature, sp.threshold, lid, rid
        for child_rows in (sp.left_rows, sp.right_rows):
            feature.append(LEAF)
            threshold.append(0.0)
            left.append(LEAF)
            right.append(LEAF)
            node_rows.append(child_rows)
        leaves += 1
        if leaves >= cfg.max_leaves:
            break
        for cid, child_rows in ((lid, sp.left_rows), (rid, sp.right_rows)):
            child_split = _candidate(child_rows)
            if child_split is not None:
                counter += 1
                heapq.heappush(frontier, _Leaf(cid, child_rows, child_split, counter))

    feature_arr = np.array(feature, dtype=np.intp)
    value = np.zeros(feature_arr.size)
    for nid in np.flatnonzero(feature_arr == LEAF):
        rr = node_rows[nid]
        value[nid] = float(residuals[rr].sum()) / float(hessians[rr].sum())
    return RegressionTree(
        feature=feature_arr,
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=np.intp),
        right=np.array(right, dtype=np.intp),
        value=value,
        n_samples=np.array([r.size for r in node_rows], dtype=np.intp),
        feature_subset=tuple(int(f) for f in subset),
    )


# =====================================================================
# 2.  Boosting
# =====================================================================

def binomial_deviance(labels, scores) -> float:
    """Mean -2 log-likelihood of labels under log-odds `scores`."""
    y = np.asarray(labels, dtype=float)
    f = np.asarray(scores, dtype=float)
    return float(2.0 * np.mean(np.logaddexp(0.0, f) - y * f))


def fit_rgb(ds: Dataset, cfg: RgbConfig, verbose: bool = False) -> RgbEnsemble:
    neg, pos = ds.class_counts()
    if neg == 0 or pos == 0:
        raise DataError("both classes must be present")
    cfg = cfg.resolve(ds.p)

    X = ds.values
    y = ds.labels.astype(float)
    base = pos / ds.n
    f0 = math.log(base / (1.0 - base))
    F = np.full(ds.n, f0)
    n_rows = min(ds.n, math.ceil(cfg.row_subsample * ds.n))

    rng = np.random.default_rng(cfg.seed)
    trees: list[tuple[RegressionTree, float]] = []
    if verbose:
        print(f"  RGB: {cfg.n_trees} trees, rate {cfg.learning_rate:g}, "
              f"<= {cfg.max_leaves} leaves, {cfg.per_tree_features}/{cfg.per_node_features} "
              f"features per tree/node, {n_rows} rows per tree", file=sys.stderr)

    for _ in tqdm(range(cfg.n_trees), desc="  boosting", unit="tree",
                  disable=not verbose, file=sys.stderr):
        subset = np.sort(rng.choice(ds.p, size=cfg.per_tree_features, replace=False))
        rows = np.sort(rng.choice(ds.n, size=n_rows, replace=False))
        prob = stable_sigmoid(F)
        residuals = y - prob
        hessians = np.maximum(prob * (1.0 - prob), MIN_HESSIAN)
        tree = fit_gradient_tree(X, rows, residuals, hessians, subset, cfg, rng)
        F += cfg.learning_rate * tree.predict(X)
        trees.append((tree, cfg.learning_rate))

    if verbose:
        print(f"  Training deviance: {binomial_deviance(y, F):.4f} "
              f"(base {binomial_deviance(y, np.full(ds.n, f0)):.4f})", file=sys.stderr)
    return RgbEnsemble(f0, tuple(trees))


# =====================================================================
# 3.  Prediction
# =====================================================================

def _as_rows(model: RgbEnsemble, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or model.max_feature >= x.shape[-1]:
        raise DataError(
            f"feature index {model.max_feature} out of range for x with shape {x.shape}")
    return x


def staged_scores(model: RgbEnsemble, x) -> Iterator[np.ndarray]:
    """Log-odds after 0, 1, ..., T trees (trees added in training order)."""
    X = np.atleast_2d(_as_rows(model, x))
    F = np.full(X.shape[0], model.initial_score)
    yield F.copy()
    for tree, rate in model.trees:
        F = F + rate * tree.predict(X)
        yield F.copy()


def rgb_decision_function(model: RgbEnsemble, x):
    x = _as_rows(model, x)
    X = np.atleast_2d(x)
    F = np.full(X.shape[0], model.initial_score)
    for tree, rate in model.trees:
        F = F + rate * tree.predict(X)
    return float(F[0]) if x.ndim == 1 else F


def rgb_predict_proba(model: RgbEnsemble, x):
    p = stable_sigmoid(rgb_decision_function(model, x))
    return float(p) if np.ndim(p) == 0 else p
