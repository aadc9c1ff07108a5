from __future__ import annotations

import numpy as np
import pytest
from scipy.special import expit

from riskrules.dataset import Dataset


def make_dataset(n: int = 80, p: int = 4, seed: int = 0, scale: float = 1.0,
                 weights=None, intercept: float = 0.0) -> Dataset:
    """Gaussian features, labels drawn from a logistic model; both classes guaranteed."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p)) * scale
    w = rng.standard_normal(p) if weights is None else np.asarray(weights, dtype=float)
    y = (rng.random(n) < expit(intercept + X @ w)).astype(np.int8)
    y[0], y[1] = 0, 1
    return Dataset(X, y, tuple(f"f{j}" for j in range(p)))


def newton_logistic(X: np.ndarray, y: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Unregularized logistic regression with intercept, plain Newton."""
    A = np.column_stack([np.ones(len(y)), X])
    beta = np.zeros(A.shape[1])
    for _ in range(100):
        p = expit(A @ beta)
        step = np.linalg.solve(A.T @ (A * (p * (1 - p))[:, None]), A.T @ (y - p))
        beta += step
        if np.max(np.abs(step)) < tol:
            break
    return beta


@pytest.fixture
def small_ds() -> Dataset:
    return make_dataset()


@pytest.fixture
def write_csv(tmp_path):
    def _write(text: str, name: str = "data.csv"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path
    return _write
