"""Observation storage, CSV ingestion and deterministic K-fold partitioning."""

from __future__ import annotations

import csv
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateSplitError,
    ParseError,
    SchemaError,
    ValidationError,
)


@dataclass(frozen=True)
class Observation:
    x: np.ndarray
    a: int
    y: float


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


class Dataset:
    """Immutable table of ``(x, a, y)`` rows.

    Stored column-wise as read-only numpy arrays so that slices can be
    shared across folds and threads without copying.
    """

    __slots__ = ("X", "a", "y", "feature_names")

    def __init__(self, X, a, y, feature_names: Sequence[str] | None = None):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        a = np.asarray(a)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2 or X.shape[1] < 1:
            raise ValidationError("covariates must be a 2-d array with d >= 1")
        n = X.shape[0]
        if a.shape != (n,) or y.shape != (n,):
            raise ValidationError(
                f"row count mismatch: X has {n}, a has {a.shape}, y has {y.shape}"
            )
        if not np.all(np.isin(a, (0, 1))):
            bad = int(np.flatnonzero(~np.isin(a, (0, 1)))[0])
            raise ValidationError(f"treatment must be 0/1 (row {bad})")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValidationError("all covariates and outcomes must be finite")
        if feature_names is None:
            feature_names = [f"x{j}" for j in range(X.shape[1])]
        if len(feature_names) != X.shape[1]:
            raise ValidationError("feature_names length must equal d")
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "a", _readonly(a).astype(np.int8))
        self.a.setflags(write=False)
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "feature_names", tuple(feature_names))

    def __setattr__(self, name, value):
        raise AttributeError("Dataset is immutable")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[Observation]:
        for i in range(self.n):
            yield Observation(self.X[i], int(self.a[i]), float(self.y[i]))

    @property
    def rows(self) -> list[Observation]:
        return list(self)

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.X[idx], self.a[idx], self.y[idx], self.feature_names)

    def arm(self, a: int) -> "Dataset":
        return self.take(np.flatnonzero(self.a == a))

    def permuted(self, seed: int) -> "Dataset":
        """Rows shuffled with a seeded RNG (opt-in; fold assignment itself never shuffles)."""
        perm = np.random.default_rng(seed).permutation(self.n)
        return self.take(perm)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.feature_names == other.feature_names
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.y, other.y)
        )

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, d={self.d})"


def load_csv(path, outcome_col: str, treatment_col: str,
             feature_cols: Sequence[str]) -> Dataset:
    """Read a header-first CSV into a :class:`Dataset`, rows in file order.

    Row numbers in error messages are 1-based data rows (the header is not
    counted).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise SchemaError(f"{path}: empty file or missing header row")
        header = [h.strip() for h in header]
        cols = [outcome_col, treatment_col, *feature_cols]
        for col in cols:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        pos = [header.index(c) for c in cols]
        ys, as_, xs = [], [], []
        for rownum, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            vals = []
            for c, p in zip(cols, pos):
                cell = row[p].strip() if p < len(row) else ""
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {rownum}, column {c!r}: non-numeric value {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise ParseError(f"{path}: row {rownum}, column {c!r}: non-finite value")
                vals.append(v)
            if vals[1] not in (0.0, 1.0):
                raise ValidationError(
                    f"{path}: row {rownum}: treatment {treatment_col!r} must be 0 or 1, got {row[pos[1]]!r}"
                )
            ys.append(vals[0])
            as_.append(int(vals[1]))
            xs.append(vals[2:])
    if not ys:
        raise SchemaError(f"{path}: no data rows")
    return Dataset(np.array(xs, dtype=float).reshape(len(ys), len(feature_cols)),
                   np.array(as_), np.array(ys), feature_cols)


def write_csv(data: Dataset, path, outcome_col: str = "y",
              treatment_col: str = "a") -> None:
    """Write ``data`` so that :func:`load_csv` recovers it bit-for-bit."""
    header = [outcome_col, treatment_col, *data.feature_names]
    rows = (
        [repr(float(data.y[i])), str(int(data.a[i]))] + [repr(float(v)) for v in data.X[i]]
        for i in range(data.n)
    )
    atomic_write_rows(path, header, rows)


def atomic_write_rows(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True)
class FoldAssignment:
    """``labels[i]`` is the 1-based fold of 0-based row ``i``."""

    labels: np.ndarray
    K: int

    def k_of(self, i: int) -> int:
        return int(self.labels[i])

    def indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)


def assign_folds(n: int, K: int) -> FoldAssignment:
    # row i goes to fold (i mod K) + 1, so fold k holds i = k-1 (mod K)
    if K < 2:
        raise ConfigurationError(f"K must be >= 2, got {K}")
    if n < K:
        raise ConfigurationError(f"need n >= K, got n={n}, K={K}")
    labels = np.arange(n) % K + 1
    labels.setflags(write=False)
    return FoldAssignment(labels, K)


def split(data: Dataset, folds: FoldAssignment, k: int, min_arm: int = 2,
          check_eval: bool = False) -> tuple[Dataset, Dataset]:
    """Return ``(train, eval)`` where eval is fold ``k`` and train the rest.

    The training split must contain at least ``min_arm`` rows of each arm.
    Evaluation rows are only checked when ``check_eval`` is set, since a small
    evaluation fold with one arm missing is harmless for cross-fitting.
    """
    if not 1 <= k <= folds.K:
        raise ConfigurationError(f"fold k={k} outside 1..{folds.K}")
    if len(folds.labels) != data.n:
        raise ConfigurationError("fold assignment does not match dataset size")
    mask = folds.labels == k
    train, ev = data.take(np.flatnonzero(~mask)), data.take(np.flatnonzero(mask))
    parts = [("train", train)] + ([("eval", ev)] if check_eval else [])
    for name, part in parts:
        for arm in (0, 1):
            cnt = int(np.sum(part.a == arm))
            if cnt < min_arm:
                raise DegenerateSplitError(
                    f"fold {k}: {name} split has {cnt} rows with a={arm} (need >= {min_arm})"
                )
    return train, ev
