"""
Feature-similarity matrix S for the stabilizing penalty.

S_ij is the cosine between raw (uncentered) data columns i and j with
negatives clamped to 0, the diagonal zeroed, and each row scaled to sum
to 1.  A feature with no positive similarity keeps an all-zero row.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import pandas as pd
from sklearn.metrics.pairwise import cosine_similarity

from riskrules.artifacts import write_frame
from riskrules.dataset import Dataset
from riskrules.errors import DataError

ROW_SUM_TOL = 1e-12
# |cosine| at or below this is rounding noise from orthogonal columns
COSINE_ZERO_TOL = 1e-12


@dataclass(frozen=True)
class SimilarityMatrix:
    entries: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.entries, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise DataError(f"similarity matrix must be square, got {s.shape}")
        if not np.all(np.isfinite(s)) or np.any(s < 0):
            raise DataError("similarity entries must be finite and >= 0")
        if np.any(np.diag(s) != 0):
            raise DataError("similarity diagonal must be 0")
        sums = s.sum(axis=1)
        ok = (sums == 0) | (np.abs(sums - 1.0) <= ROW_SUM_TOL)
        if not np.all(ok):
            raise DataError("similarity rows must sum to 1 or be all zero")
        s.setflags(write=False)
        object.__setattr__(self, "entries", s)

    @property
    def p(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def uniform(cls, p: int) -> "SimilarityMatrix":
        """Every off-diagonal weight 1/(p-1); the elastic-net special case."""
        if p < 2:
            return cls(np.zeros((p, p)))
        s = np.full((p, p), 1.0 / (p - 1))
        np.fill_diagonal(s, 0.0)
        return cls(s)


def raw_cosine_matrix(ds: Dataset) -> np.ndarray:
    """Symmetric p x p cosine matrix of the data columns (0 for all-zero columns)."""
    if ds.p < 2:
        raise DataError("need at least 2 features for a similarity matrix")
    raw = cosine_similarity(ds.values.T)
    # sklearn's dot product is not bit-symmetric on every BLAS
    raw = (raw + raw.T) / 2.0
    raw[np.abs(raw) <= COSINE_ZERO_TOL] = 0.0
    return raw


def cosine_similarity_matrix(ds: Dataset) -> SimilarityMatrix:
    raw = np.clip(raw_cosine_matrix(ds), 0.0, None)
    np.fill_diagonal(raw, 0.0)

    sums = raw.sum(axis=1, keepdims=True)
    s = np.divide(raw, sums, out=np.zeros_like(raw), where=sums > 0)
    return SimilarityMatrix(s)


def save_similarity_csv(S: SimilarityMatrix, feature_names, path: str | os.PathLike) -> None:
    """p x p, row-major, header row and first column carry the feature names."""
    frame = pd.DataFrame(S.entries, columns=list(feature_names))
    frame.insert(0, "feature", list(feature_names))
    write_frame(path, frame)
