"""Tabular data handling: CSV ingestion, Kennard-Stone splitting, auto-scaling."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np


class DataError(Exception):
    """Raised for malformed or inconsistent tabular data."""


@dataclass(frozen=True)
class Dataset:
    """A numeric table split into feature columns (x) and target columns (y)."""

    x: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]
    target_names: tuple[str, ...]

    def __post_init__(self):
        if self.x.ndim != 2 or self.y.ndim != 2:
            raise DataError("x and y must be 2-d matrices")
        n, f = self.x.shape
        ny, d = self.y.shape
        if n < 1 or f < 1 or d < 1:
            raise DataError("dataset needs at least 1 row, 1 feature and 1 target")
        if n != ny:
            raise DataError(f"x has {n} rows but y has {ny}")
        if f != len(self.feature_names) or d != len(self.target_names):
            raise DataError("column name count does not match matrix width")
        if len(set(self.feature_names)) != f:
            raise DataError("duplicate feature names")
        if len(set(self.target_names)) != d:
            raise DataError("duplicate target names")
        if not (np.isfinite(self.x).all() and np.isfinite(self.y).all()):
            raise DataError("dataset contains NaN or infinite values")

    @property
    def n(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class ScalingParams:
    """Per-column mean and sample standard deviation (ddof=1)."""

    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        if self.means.shape != self.stds.shape or self.means.ndim != 1:
            raise DataError("means and stds must be 1-d and equally long")
        if not (self.stds > 0).all():
            raise DataError("every stored std must be > 0")

    def __len__(self) -> int:
        return self.means.shape[0]


@dataclass(frozen=True)
class SplitIndices:
    """Row indices of a train/test partition; train keeps selection order."""

    train: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        both = np.concatenate([self.train, self.test])
        n = both.shape[0]
        if np.intersect1d(self.train, self.test).size:
            raise DataError("train and test overlap")
        if not np.array_equal(np.sort(both), np.arange(n)):
            raise DataError("train and test do not partition the row range")


def load_csv(path, target_names) -> Dataset:
    """Load a comma-separated table, routing ``target_names`` columns to y.

    The remaining columns become features in file order. Rows containing any
    empty cell are dropped with a warning; any other non-numeric cell is an
    error naming the offending row and column.
    """
    target_names = list(target_names)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        for t in target_names:
            if t not in header:
                raise DataError(f"{path}: unknown target column '{t}'")
        target_pos = [header.index(t) for t in target_names]
        feature_pos = [i for i in range(len(header)) if i not in set(target_pos)]

        rows = []
        dropped = 0
        for lineno, cells in enumerate(reader, start=2):
            if not cells or all(c.strip() == "" for c in cells):
                continue
            if len(cells) != len(header):
                raise DataError(
                    f"{path}:{lineno}: expected {len(header)} cells, got {len(cells)}"
                )
            if any(c.strip() == "" for c in cells):
                dropped += 1
                continue
            values = np.empty(len(header))
            for col, cell in enumerate(cells):
                try:
                    values[col] = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}:{lineno}: non-numeric cell '{cell.strip()}' "
                        f"in column '{header[col]}'"
                    ) from None
            if not np.isfinite(values).all():
                dropped += 1
                continue
            rows.append(values)

    if dropped:
        warnings.warn(f"{path}: dropped {dropped} row(s) with missing values")
    if not rows:
        raise DataError(f"{path}: no usable data rows")
    table = np.vstack(rows)
    return Dataset(
        x=table[:, feature_pos],
        y=table[:, target_pos],
        feature_names=tuple(header[i] for i in feature_pos),
        target_names=tuple(target_names),
    )


def kennard_stone_split(x: np.ndarray, train_fraction: float) -> SplitIndices:
    """Deterministic greedy max-min selection of training rows.

    Starts from the pair of rows at maximum Euclidean distance, then
    repeatedly adds the row whose minimum distance to the selected set is
    largest, until ceil(train_fraction * n) rows are selected. Ties pick the
    lower row index. The remaining rows form the test set.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise DataError("kennard_stone_split needs at least 2 rows")
    if not 0.0 < train_fraction <= 1.0:
        raise DataError("train_fraction must be in (0, 1]")
    # the starting max-distance pair means at least two rows are always selected
    n_train = max(2, math.ceil(train_fraction * n))

    # Squared distances are monotone in distance; avoids sqrt throughout.
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, -1.0)
    flat = int(np.argmax(d2))
    i, j = divmod(flat, n)
    if i > j:
        i, j = j, i

    selected = np.empty(n_train, dtype=np.int64)
    selected[0], selected[1] = i, j
    in_train = np.zeros(n, dtype=bool)
    in_train[i] = in_train[j] = True
    np.fill_diagonal(d2, 0.0)
    mindist = np.minimum(d2[i], d2[j])
    for k in range(2, n_train):
        masked = np.where(in_train, -np.inf, mindist)
        nxt = int(np.argmax(masked))
        selected[k] = nxt
        in_train[nxt] = True
        mindist = np.minimum(mindist, d2[nxt])

    test = np.flatnonzero(~in_train)
    return SplitIndices(train=selected, test=test)


def fit_autoscale(m: np.ndarray) -> ScalingParams:
    """Per-column mean and sample std (ddof=1); constant columns get std 1."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] < 2:
        raise DataError("fit_autoscale needs a matrix with at least 2 rows")
    means = m.mean(axis=0)
    stds = m.std(axis=0, ddof=1)
    stds = np.where(stds > 0, stds, 1.0)
    return ScalingParams(means=means, stds=stds)


def apply_autoscale(m: np.ndarray, p: ScalingParams) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape[-1] != len(p):
        raise DataError(f"expected {len(p)} columns, got {m.shape[-1]}")
    return (m - p.means) / p.stds


def invert_autoscale(m: np.ndarray, p: ScalingParams) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape[-1] != len(p):
        raise DataError(f"expected {len(p)} columns, got {m.shape[-1]}")
    return m * p.stds + p.means


def save_split(split: SplitIndices, path) -> None:
    """Persist a split as a two-column CSV (index, role)."""
    lines = ["index,role"]
    lines += [f"{int(i)},train" for i in split.train]
    lines += [f"{int(i)},test" for i in split.test]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def load_split(path) -> SplitIndices:
    train, test = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["index", "role"]:
            raise DataError(f"{path}: expected header 'index,role'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 or row[1] not in ("train", "test"):
                raise DataError(f"{path}:{lineno}: malformed split row {row!r}")
            try:
                idx = int(row[0])
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad index '{row[0]}'") from None
            (train if row[1] == "train" else test).append(idx)
    return SplitIndices(
        train=np.array(train, dtype=np.int64), test=np.array(test, dtype=np.int64)
    )
