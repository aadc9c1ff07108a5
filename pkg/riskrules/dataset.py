"""
Dataset ingest -- CSV table -> Dataset, rare-feature filter, balanced split.

Reads  a UTF-8 CSV with a header row; one column is the 0/1 label.
Writes (via save_table) the same format back out.

Study design:
  1. Features whose nonzero prevalence is below min_prevalence are dropped.
  2. Rows are shuffled with a seeded generator; round(train_fraction * n)
     go to training.
  3. From the held-out rows the majority class is under-sampled so the test
     set has equal class counts.  Training data is never balanced.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from riskrules.artifacts import write_frame
from riskrules.errors import ConfigError, DataError

MIN_SPLIT_ROWS = 6


@dataclass(frozen=True)
class Dataset:
    """n x p feature table with binary labels."""

    values: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    label_name: str = "y"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        labels = np.asarray(self.labels)
        if values.ndim != 2:
            raise DataError(f"values must be a 2-D table, got shape {values.shape}")
        if labels.shape != (values.shape[0],):
            raise DataError(
                f"labels length {labels.shape} does not match {values.shape[0]} rows")
        if values.shape[1] != len(self.feature_names):
            raise DataError(
                f"{values.shape[1]} columns but {len(self.feature_names)} feature names")
        if not np.all(np.isfinite(values)):
            raise DataError("values contain non-finite entries")
        if labels.size and not np.all((labels == 0) | (labels == 1)):
            raise DataError("label value outside {0,1}")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise DataError("duplicate feature name")
        values.setflags(write=False)
        labels = labels.astype(np.int8)
        labels.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def take_rows(self, rows: Sequence[int] | np.ndarray) -> "Dataset":
        rows = np.asarray(rows, dtype=np.intp)
        return Dataset(self.values[rows], self.labels[rows],
                       self.feature_names, self.label_name)

    def take_features(self, cols: Sequence[int] | np.ndarray) -> "Dataset":
        cols = np.asarray(cols, dtype=np.intp)
        return Dataset(self.values[:, cols], self.labels,
                       tuple(self.feature_names[c] for c in cols), self.label_name)

    def class_counts(self) -> tuple[int, int]:
        """(negatives, positives)"""
        pos = int(self.labels.sum())
        return self.n - pos, pos


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 2.0 / 3.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must be in (0,1)")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FilterResult:
    dataset: Dataset
    dropped: tuple[str, ...] = field(default_factory=tuple)


# =====================================================================
# 1.  CSV ingest / export
# =====================================================================

def load_table(path: str | os.PathLike, label_column: str) -> Dataset:
    """
    Parse a header-first CSV into a Dataset.

    Every non-label cell must parse as a finite real; label cells must be
    0 or 1.  Errors name the offending row (1-based file line) and column.
    """
    if not os.path.exists(path):
        raise DataError(f"Input not found: {path}")

    # Read as raw strings so duplicate headers are not silently renamed
    # and blank cells are not turned into NaN behind our back.
    try:
        raw = pd.read_csv(path, header=None, dtype=str, keep_default_na=False,
                          encoding="utf-8", skipinitialspace=True)
    except pd.errors.EmptyDataError as exc:
        raise DataError(f"{path}: empty file") from exc
    except pd.errors.ParserError as exc:
        raise DataError(f"{path}: malformed CSV ({exc})") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not valid UTF-8 ({exc})") from exc
    if raw.shape[0] == 0:
        raise DataError(f"{path}: empty file")

    header = [h.strip() for h in raw.iloc[0].tolist()]
    body = raw.iloc[1:].reset_index(drop=True)

    seen: set[str] = set()
    for name in header:
        if name in seen:
            raise DataError(f"duplicate feature name: {name!r}")
        seen.add(name)
    if label_column not in seen:
        raise DataError(f"label column {label_column!r} not found in header")

    body.columns = header
    numeric = {}
    for name in header:
        cells = body[name].str.strip()
        try:
            # numpy parses with correct rounding, so save_table output reloads exactly
            col = cells.to_numpy(dtype=str).astype(float)
        except ValueError:
            col = pd.to_numeric(cells, errors="coerce").to_numpy(dtype=float)
        bad = ~np.isfinite(col)
        if bad.any():
            r = int(np.flatnonzero(bad)[0])
            raise DataError(
                f"non-numeric cell at row {r + 2}, column {name!r}: "
                f"{body[name].iloc[r]!r}")
        numeric[name] = col

    labels = numeric.pop(label_column)
    bad = (labels != 0) & (labels != 1)
    if bad.any():
        r = int(np.flatnonzero(bad)[0])
        raise DataError(f"label value outside {{0,1}} at row {r + 2}: {labels[r]:g}")

    names = tuple(h for h in header if h != label_column)
    values = (np.column_stack([numeric[h] for h in names]) if names
              else np.empty((len(labels), 0)))
    return Dataset(values, labels.astype(np.int8), names, label_column)


def save_table(ds: Dataset, path: str | os.PathLike) -> None:
    """Write ds in the same CSV layout load_table reads (label last)."""
    frame = pd.DataFrame(ds.values, columns=list(ds.feature_names))
    frame[ds.label_name] = ds.labels.astype(int)
    write_frame(path, frame)


# =====================================================================
# 2.  Rare-feature filter
# =====================================================================

def filter_rare_features(ds: Dataset, min_prevalence: float = 0.01) -> FilterResult:
    """Keep features whose fraction of nonzero entries is >= min_prevalence."""
    if not 0.0 <= min_prevalence <= 1.0:
        raise ConfigError("min_prevalence must be in [0,1]")
    if ds.n == 0:
        raise DataError("empty dataset")

    prevalence = np.count_nonzero(ds.values, axis=0) / ds.n
    keep = np.flatnonzero(prevalence >= min_prevalence)
    if keep.size == 0:
        raise DataError("empty feature set")

    dropped = tuple(ds.feature_names[j] for j in range(ds.p)
                    if prevalence[j] < min_prevalence)
    return FilterResult(ds.take_features(keep), dropped)


# =====================================================================
# 3.  Train / balanced-test split
# =====================================================================

def split_balanced(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """
    Seeded shuffle split; the held-out part is under-sampled to balance.

    Hold-out rows dropped by the under-sampling are not returned.  Both
    outputs keep the input's row order.
    """
    neg, pos = ds.class_counts()
    if ds.n < MIN_SPLIT_ROWS:
        raise DataError(f"need at least {MIN_SPLIT_ROWS} rows to split, got {ds.n}")
    if neg == 0 or pos == 0:
        raise DataError("both classes must be present")

    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(ds.n)
    n_train = int(math.floor(spec.train_fraction * ds.n + 0.5))
    train_rows = np.sort(order[:n_train])
    held_out = order[n_train:]

    held_labels = ds.labels[held_out]
    held_pos = np.sort(held_out[held_labels == 1])
    held_neg = np.sort(held_out[held_labels == 0])
    if held_pos.size == 0 or held_neg.size == 0:
        raise DataError("cannot balance test set")

    c = min(held_pos.size, held_neg.size)
    if held_pos.size > c:
        held_pos = rng.choice(held_pos, size=c, replace=False)
    if held_neg.size > c:
        held_neg = rng.choice(held_neg, size=c, replace=False)
    test_rows = np.sort(np.concatenate([held_pos, held_neg]))

    return ds.take_rows(train_rows), ds.take_rows(test_rows)
