"""Tabular datasets with a sensitive attribute, CSV loading and stratified splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none", "?"})
MISSING_CATEGORY = "<missing>"


class DatasetError(ValueError):
    """Raised when input data violates a dataset precondition."""


@dataclass(frozen=True)
class Dataset:
    """Encoded feature matrix, binary labels and per-row sensitive group ids.

    ``features`` may contain NaN for missing numeric cells until
    :meth:`impute` is applied (``split`` does this with training means).
    """

    features: np.ndarray
    labels: np.ndarray
    sensitive: np.ndarray
    feature_names: tuple[str, ...]
    group_names: tuple[str, ...]
    sensitive_name: str = "group"

    def __post_init__(self):
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise DatasetError("features must be a 2-d matrix")
        if self.labels.shape != (n,) or self.sensitive.shape != (n,):
            raise DatasetError("features, labels and sensitive must have the same number of rows")
        if len(self.feature_names) != self.features.shape[1]:
            raise DatasetError("feature_names does not match the feature column count")
        if n and not np.isin(self.labels, (0, 1)).all():
            raise DatasetError("labels must be 0/1")
        if len(self.group_names) < 2:
            raise DatasetError("fewer than 2 groups")
        for arr in (self.features, self.labels, self.sensitive):
            arr.setflags(write=False)

    @property
    def rows(self) -> int:
        return int(self.features.shape[0])

    @property
    def group_count(self) -> int:
        return len(self.group_names)

    def subset(self, index: np.ndarray) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(
            self.features[index].copy(),
            self.labels[index].copy(),
            self.sensitive[index].copy(),
            self.feature_names,
            self.group_names,
            self.sensitive_name,
        )

    def column_means(self) -> np.ndarray:
        if self.rows == 0:
            return np.zeros(self.features.shape[1])
        with np.errstate(invalid="ignore"):
            counts = (~np.isnan(self.features)).sum(axis=0)
            sums = np.nansum(self.features, axis=0)
        return np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)

    def impute(self, means: np.ndarray) -> "Dataset":
        """Replace NaN cells column-wise with ``means``."""
        if not np.isnan(self.features).any():
            return self
        X = np.where(np.isnan(self.features), means[None, :], self.features)
        return Dataset(X, self.labels.copy(), self.sensitive.copy(),
                       self.feature_names, self.group_names, self.sensitive_name)


@dataclass(frozen=True)
class SplitDataset:
    train: Dataset
    val: Dataset
    seed: int
    val_fraction: float
    train_index: np.ndarray = field(repr=False, default=None)
    val_index: np.ndarray = field(repr=False, default=None)


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in MISSING_TOKENS


def load_csv(
    path: str | Path,
    label_col: str,
    sensitive_col: str,
    categorical_cols: Sequence[str] = (),
    positive_label: str | None = None,
    include_sensitive: bool = False,
) -> Dataset:
    """Load a comma-delimited UTF-8 CSV with a header row.

    Categorical columns are one-hot encoded (categories in sorted order,
    missing cells become their own category); all other non-label columns
    are parsed as reals with missing cells left as NaN. The sensitive
    column is kept out of the feature matrix unless ``include_sensitive``.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file, header row expected") from None
        rows = [r for r in reader if r]

    for name in [label_col, sensitive_col, *categorical_cols]:
        if name not in header:
            raise DatasetError(f"missing column {name!r}")
    col = {name: i for i, name in enumerate(header)}
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise DatasetError(f"row {lineno}: expected {len(header)} cells, found {len(r)}")

    raw_labels = [r[col[label_col]].strip() for r in rows]
    if positive_label is not None:
        labels = np.array([1 if v == positive_label else 0 for v in raw_labels], dtype=np.int64)
    else:
        distinct = set(raw_labels)
        if not distinct <= {"0", "1", "0.0", "1.0"}:
            raise DatasetError(
                f"non-binary label values {sorted(distinct)[:5]}; pass positive_label to map them"
            )
        labels = np.array([int(float(v)) for v in raw_labels], dtype=np.int64)

    raw_groups = [r[col[sensitive_col]].strip() for r in rows]
    group_names = tuple(sorted(set(raw_groups)))
    if len(group_names) < 2:
        raise DatasetError(f"sensitive column {sensitive_col!r} has fewer than 2 groups")
    group_id = {g: i for i, g in enumerate(group_names)}
    sensitive = np.array([group_id[g] for g in raw_groups], dtype=np.int64)

    categorical = set(categorical_cols)
    if include_sensitive:
        categorical.add(sensitive_col)
    blocks: list[np.ndarray] = []
    names: list[str] = []
    for name in header:
        if name == label_col or (name == sensitive_col and not include_sensitive):
            continue
        j = col[name]
        if name in categorical:
            values = [MISSING_CATEGORY if _is_missing(r[j]) else r[j].strip() for r in rows]
            cats = sorted(set(values))
            lookup = {c: k for k, c in enumerate(cats)}
            onehot = np.zeros((len(rows), len(cats)))
            onehot[np.arange(len(rows)), [lookup[v] for v in values]] = 1.0
            blocks.append(onehot)
            names.extend(f"{name}={c}" for c in cats)
        else:
            column = np.empty(len(rows))
            for i, r in enumerate(rows):
                cell = r[j]
                if _is_missing(cell):
                    column[i] = math.nan
                    continue
                try:
                    column[i] = float(cell)
                except ValueError:
                    raise DatasetError(
                        f"unparseable numeric cell {cell!r} at row {i + 2}, column {name!r}"
                    ) from None
            blocks.append(column[:, None])
            names.append(name)
    features = np.hstack(blocks) if blocks else np.zeros((len(rows), 0))
    return Dataset(features, labels, sensitive, tuple(names), group_names, sensitive_col)


def _allocate(cell_sizes: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder apportionment of ``total`` across cells."""
    quota = cell_sizes * (total / cell_sizes.sum())
    alloc = np.floor(quota).astype(np.int64)
    remainder = quota - alloc
    for k in np.argsort(-remainder, kind="stable")[: total - alloc.sum()]:
        alloc[k] += 1
    return np.minimum(alloc, cell_sizes)


def split(d: Dataset, val_fraction: float = 0.3, seed: int = 0) -> SplitDataset:
    """Stratified train/validation split by (label, group) cell.

    Every sensitive group lands in both halves; missing numeric cells are
    filled with the training-split column mean.
    """
    if not 0.0 < val_fraction < 1.0:
        raise DatasetError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    counts = np.bincount(d.sensitive, minlength=d.group_count)
    if d.rows < 2 * d.group_count or (counts < 2).any():
        raise DatasetError("dataset too small to give every group to both splits")

    rng = np.random.default_rng(seed)
    n_val = int(round(d.rows * val_fraction))
    n_val = min(max(n_val, d.group_count), d.rows - d.group_count)

    cell = d.sensitive * 2 + d.labels
    cells = np.unique(cell)
    members = [rng.permutation(np.flatnonzero(cell == c)) for c in cells]
    alloc = _allocate(np.array([len(m) for m in members]), n_val)
    val_parts = [m[:k] for m, k in zip(members, alloc)]
    train_parts = [m[k:] for m, k in zip(members, alloc)]
    val_idx = np.concatenate(val_parts)
    train_idx = np.concatenate(train_parts)

    # repair: move single rows so each group is present on both sides
    for g in range(d.group_count):
        for src, dst in ((train_idx, val_idx), (val_idx, train_idx)):
            if not (d.sensitive[dst] == g).any():
                take = np.flatnonzero(d.sensitive[src] == g)[0]
                donor_groups = np.bincount(d.sensitive[dst], minlength=d.group_count)
                give = np.flatnonzero(d.sensitive[dst] == int(np.argmax(donor_groups)))[0]
                moved_in, moved_out = src[take], dst[give]
                src[take], dst[give] = moved_out, moved_in
    val_idx = np.sort(val_idx)
    train_idx = np.sort(train_idx)

    train = d.subset(train_idx)
    means = train.column_means()
    return SplitDataset(
        train.impute(means),
        d.subset(val_idx).impute(means),
        seed,
        val_fraction,
        train_idx,
        val_idx,
    )


def make_synthetic_biased(n: int, bias: float, seed: int = 0) -> Dataset:
    """Two-group fixture whose label base rates differ by ``bias``.

    Three features carry label signal of decreasing strength; a fourth is a
    noisy proxy of group membership, which is what lets mitigation trade a
    little accuracy for parity.
    """
    if n < 100:
        raise DatasetError(f"n must be at least 100, got {n}")
    if not 0.0 <= bias <= 1.0:
        raise DatasetError(f"bias must lie in [0, 1], got {bias}")
    rng = np.random.default_rng(seed)
    groups = rng.integers(0, 2, n)
    groups[:2] = (0, 1)
    base_rate = np.where(groups == 0, 0.5 + bias / 2, 0.5 - bias / 2)
    labels = (rng.random(n) < base_rate).astype(np.int64)
    signal = np.array([0.7, 0.5, 0.2])
    X = rng.normal(size=(n, 3)) + (2 * labels - 1)[:, None] * signal
    proxy = rng.normal(size=n) + (1 - 2 * groups)
    features = np.column_stack([X, proxy])
    return Dataset(
        features,
        labels,
        groups.astype(np.int64),
        ("x0", "x1", "x2", "proxy"),
        ("a", "b"),
        "group",
    )
