"""Tabular data ingestion: CSV parsing, standardization and train/test splits."""
from __future__ import annotations

import csv
import enum
import hashlib
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none", "?"})


class DataError(ValueError):
    """Raised when input data cannot be turned into a usable Dataset."""


class TaskKind(str, enum.Enum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"

    @classmethod
    def parse(cls, value) -> "TaskKind":
        if isinstance(value, TaskKind):
            return value
        key = str(value).strip().lower()
        if key in ("c", "clf", "classification"):
            return cls.CLASSIFICATION
        if key in ("r", "reg", "regression"):
            return cls.REGRESSION
        raise ValueError(f"unknown task kind {value!r}; use 'c' or 'r'")


@dataclass(frozen=True)
class Dataset:
    """Standardized feature matrix plus an optional target.

    ``raw`` keeps the unscaled values so that a split can refit the
    standardization on its training rows. ``scale`` is 0 for constant
    columns, which are left at 0 after centering.
    """

    features: np.ndarray
    target: Optional[np.ndarray]
    task: TaskKind
    feature_names: tuple
    raw: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    classes: Optional[tuple] = None
    dropped_rows: int = 0
    source_hash: Optional[str] = None

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def constant_columns(self) -> np.ndarray:
        return self.scale == 0.0

    def without_target(self) -> "Dataset":
        return replace(self, target=None, classes=None)

    def take(self, rows: np.ndarray) -> "Dataset":
        """Row subset, keeping the current standardization statistics."""
        rows = np.asarray(rows)
        target = None if self.target is None else self.target[rows]
        return replace(self, features=self.features[rows], raw=self.raw[rows], target=target)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0


def standardize(raw: np.ndarray):
    """Z-score columns with the population std; constant columns get scale 0."""
    raw = np.asarray(raw, dtype=float)
    center = raw.mean(axis=0)
    centered = raw - center
    scale = np.sqrt((centered ** 2).mean(axis=0))
    # tolerance relative to magnitude so float noise on a constant column does not count as spread
    tiny = scale <= 1e-12 * np.maximum(1.0, np.abs(center))
    scale = np.where(tiny, 0.0, scale)
    return _apply(raw, center, scale), center, scale


def _apply(raw, center, scale):
    safe = np.where(scale == 0.0, 1.0, scale)
    out = (raw - center) / safe
    out[:, scale == 0.0] = 0.0
    return out


def make_dataset(raw, target=None, task=TaskKind.REGRESSION, feature_names=None,
                 classes=None, dropped_rows=0, source_hash=None) -> Dataset:
    raw = np.array(raw, dtype=float, copy=True)
    if raw.ndim != 2:
        raise DataError("feature matrix must be 2-D")
    n, d = raw.shape
    if n < 2:
        raise DataError(f"need at least 2 rows, got {n}")
    if d < 2:
        raise DataError(f"need at least 2 feature columns, got {d}")
    if not np.all(np.isfinite(raw)):
        raise DataError("feature matrix contains NaN or Inf")
    if feature_names is None:
        feature_names = [f"f{j + 1}" for j in range(d)]
    if len(feature_names) != d:
        raise DataError("feature_names length does not match column count")
    if target is not None:
        target = np.asarray(target)
        if target.shape != (n,):
            raise DataError("target length does not match row count")
    features, center, scale = standardize(raw)
    return Dataset(
        features=features,
        target=target,
        task=TaskKind.parse(task),
        feature_names=tuple(feature_names),
        raw=raw,
        center=center,
        scale=scale,
        classes=None if classes is None else tuple(classes),
        dropped_rows=dropped_rows,
        source_hash=source_hash,
    )


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in MISSING_TOKENS


def load_csv(path, target_column: Optional[str] = None, task="c") -> Dataset:
    """Read a headered CSV into a standardized Dataset.

    Rows with a missing cell anywhere are dropped and counted in
    ``Dataset.dropped_rows``. A classification target may hold arbitrary
    strings; it is label-encoded in order of first appearance.
    """
    path = Path(path)
    task = TaskKind.parse(task)
    if not path.is_file():
        raise FileNotFoundError(f"no such data file: {path}")

    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh]
    start = 1 if lines and lines[0].lstrip().startswith("#") else 0
    reader = csv.reader(lines[start:])
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError(f"{path}: empty file") from None

    if target_column is not None and target_column not in header:
        raise DataError(f"{path}: target column {target_column!r} not in header {header}")
    t_idx = header.index(target_column) if target_column is not None else None
    feat_idx = [j for j in range(len(header)) if j != t_idx]
    if len(feat_idx) < 2:
        raise DataError(f"{path}: need at least 2 feature columns, found {len(feat_idx)}")

    rows, targets = [], []
    dropped = 0
    first_data_line = start + 2
    for offset, cells in enumerate(reader):
        line_no = first_data_line + offset
        if not cells or all(not c.strip() for c in cells):
            continue
        if len(cells) != len(header):
            raise DataError(f"{path}: line {line_no} has {len(cells)} cells, expected {len(header)}")
        if any(_is_missing(c) for c in cells):
            dropped += 1
            continue
        values = []
        for j in feat_idx:
            try:
                v = float(cells[j])
            except ValueError:
                raise DataError(
                    f"{path}: cannot parse {cells[j]!r} as a number at line {line_no}, column {header[j]!r}"
                ) from None
            if not math.isfinite(v):
                raise DataError(f"{path}: non-finite value at line {line_no}, column {header[j]!r}")
            values.append(v)
        rows.append(values)
        if t_idx is not None:
            targets.append(cells[t_idx].strip())

    if len(rows) < 2:
        raise DataError(f"{path}: fewer than 2 usable rows after dropping {dropped} incomplete rows")

    target, classes = None, None
    if t_idx is not None:
        target, classes = _encode_target(targets, task, path, header[t_idx])

    return make_dataset(
        np.array(rows, dtype=float),
        target=target,
        task=task,
        feature_names=[header[j] for j in feat_idx],
        classes=classes,
        dropped_rows=dropped,
        source_hash=file_sha256(path),
    )


def _encode_target(values: Sequence[str], task: TaskKind, path, name):
    if task is TaskKind.REGRESSION:
        try:
            return np.array([float(v) for v in values]), None
        except ValueError:
            raise DataError(f"{path}: regression target {name!r} has non-numeric values") from None
    order = {}
    for v in values:
        order.setdefault(_canonical_label(v), len(order))
    return np.array([order[_canonical_label(v)] for v in values], dtype=int), tuple(order)


def _canonical_label(v: str) -> str:
    # "1" and "1.0" denote the same class
    try:
        f = float(v)
    except ValueError:
        return v
    return repr(int(f)) if f.is_integer() else repr(f)


def save_csv(ds: Dataset, path, target_column: str = "target") -> None:
    """Write the standardized features (and target) with full float precision."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header = list(ds.feature_names)
        if ds.target is not None:
            header.append(target_column)
        w.writerow(header)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.features[i]]
            if ds.target is not None:
                t = ds.target[i]
                if ds.task is TaskKind.CLASSIFICATION and ds.classes is not None:
                    row.append(ds.classes[int(t)])
                else:
                    row.append(repr(float(t)))
            w.writerow(row)


def split(ds: Dataset, spec: SplitSpec):
    """Seeded shuffle split; train gets floor(fraction * n) rows.

    Standardization is refit on the train rows and applied unchanged to
    the test rows.
    """
    if not 0.0 < spec.train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    tr, te = split_indices(ds.n, spec)
    if len(tr) == 0 or len(te) == 0:
        raise DataError(f"split of {ds.n} rows at fraction {spec.train_fraction} leaves one side empty")

    tr_feat, center, scale = standardize(ds.raw[tr])
    te_feat = _apply(ds.raw[te], center, scale)

    def part(rows, feats):
        target = None if ds.target is None else ds.target[rows]
        return replace(ds, features=feats, raw=ds.raw[rows], target=target, center=center, scale=scale)

    return part(tr, tr_feat), part(te, te_feat)


def split_indices(n: int, spec: SplitSpec):
    order = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(math.floor(spec.train_fraction * n))
    return order[:n_train], order[n_train:]
