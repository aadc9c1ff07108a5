"""
Synthetic benchmark -- correlated feature blocks with known true weights.

Features come in groups of group_size.  Within a group every pair has
correlation rho, across groups 0 (factor construction):

    x = sqrt(rho) * g_group + sqrt(1 - rho) * e

Labels are Bernoulli(sigmoid(intercept + x.w [+ c * x_i * x_j])).  With
count_threshold set, features are emitted as 0/1 indicators (x > threshold)
and the label model uses the emitted indicators.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import expit

from riskrules.dataset import Dataset
from riskrules.errors import ConfigError, DataError


@dataclass(frozen=True)
class SynthConfig:
    n: int = 500
    p: int = 50
    group_size: int = 5
    rho: float = 0.9
    true_weights: tuple[float, ...] = ()    # empty -> all zero
    intercept: float = 0.0
    seed: int = 0
    interaction: Optional[tuple[int, int, float]] = None
    count_threshold: Optional[float] = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError("n must be a positive integer")
        if int(self.p) != self.p or self.p < 1:
            raise ConfigError("p must be a positive integer")
        if int(self.group_size) != self.group_size or self.group_size < 1:
            raise ConfigError("group_size must be a positive integer")
        if self.p % self.group_size:
            raise ConfigError(f"p ({self.p}) must be divisible by group_size ({self.group_size})")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError("rho must be in [0,1)")
        if self.true_weights and len(self.true_weights) != self.p:
            raise ConfigError(f"true_weights has {len(self.true_weights)} entries, expected p={self.p}")
        if not all(math.isfinite(w) for w in self.true_weights) or not math.isfinite(self.intercept):
            raise ConfigError("weights must be finite")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.interaction is not None:
            i, j, _ = self.interaction
            if not (0 <= i < self.p and 0 <= j < self.p):
                raise ConfigError(f"interaction features must be in [0,{self.p})")
        object.__setattr__(self, "true_weights", tuple(float(w) for w in self.true_weights))

    @property
    def weights(self) -> np.ndarray:
        return np.asarray(self.true_weights) if self.true_weights else np.zeros(self.p)

    @property
    def n_groups(self) -> int:
        return self.p // self.group_size

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f"x{j:03d}" for j in range(self.p))

    def groups(self) -> list[list[int]]:
        g = self.group_size
        return [list(range(k * g, (k + 1) * g)) for k in range(self.n_groups)]

    def to_dict(self) -> dict:
        return {
            "n": self.n, "p": self.p, "group_size": self.group_size, "rho": self.rho,
            "intercept": self.intercept, "seed": self.seed,
            "interaction": list(self.interaction) if self.interaction else None,
            "count_threshold": self.count_threshold,
        }


def group_weights(p: int, group_size: int, n_signal: int, signal: float = 1.0) -> tuple[float, ...]:
    """Weight `signal` on the first member of groups 0..n_signal-1, zero elsewhere."""
    if p % group_size:
        raise ConfigError(f"p ({p}) must be divisible by group_size ({group_size})")
    if not 0 <= n_signal <= p // group_size:
        raise ConfigError(f"n_signal must be in [0, {p // group_size}]")
    w = np.zeros(p)
    w[np.arange(n_signal) * group_size] = signal
    return tuple(float(v) for v in w)


def generate(cfg: SynthConfig) -> Dataset:
    rng = np.random.default_rng(cfg.seed)
    shared = rng.standard_normal((cfg.n, cfg.n_groups))
    noise = rng.standard_normal((cfg.n, cfg.p))
    x = (math.sqrt(cfg.rho) * np.repeat(shared, cfg.group_size, axis=1)
         + math.sqrt(1.0 - cfg.rho) * noise)
    if cfg.count_threshold is not None:
        x = (x > cfg.count_threshold).astype(float)

    logit = cfg.intercept + x @ cfg.weights
    if cfg.interaction is not None:
        i, j, coef = cfg.interaction
        logit = logit + coef * x[:, i] * x[:, j]
    labels = (rng.random(cfg.n) < expit(logit)).astype(np.int8)
    return Dataset(x, labels, cfg.names, "y")


def ground_truth(cfg: SynthConfig) -> dict:
    """The generating model, for the truth JSON."""
    return {
        "true_weights": cfg.weights.tolist(),
        "intercept": cfg.intercept,
        "groups": cfg.groups(),
        "interaction": list(cfg.interaction) if cfg.interaction else None,
        "feature_names": list(cfg.names),
    }


def signal_groups(cfg: SynthConfig) -> list[int]:
    """Indices of groups holding at least one nonzero true weight."""
    w = cfg.weights
    return [k for k, members in enumerate(cfg.groups()) if np.any(w[members] != 0)]


def groups_hit(selected: Iterable[int], cfg: SynthConfig, groups: Sequence[int]) -> int:
    """How many of `groups` have a member among `selected`."""
    chosen = {int(j) // cfg.group_size for j in selected}
    return sum(1 for g in groups if g in chosen)


def stability_jaccard(selections: Sequence[Iterable[int]]) -> float:
    """Mean pairwise Jaccard index; two empty sets count as identical."""
    sets = [frozenset(s) for s in selections]
    if len(sets) < 2:
        raise DataError("need at least 2 selections")
    scores = []
    for a, b in itertools.combinations(sets, 2):
        union = a | b
        scores.append(1.0 if not union else len(a & b) / len(union))
    return float(np.mean(scores))
