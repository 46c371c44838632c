"""Tabular data: CSV ingestion, min-max normalization, splitting, synthetic blobs.

Counterfactual search runs in normalized space, so every dataset handed to
the generators should first go through :func:`normalize`.  Categorical
features are one-hot encoded at load time and are never mutable.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError, SchemaError

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str = CONTINUOUS
    mutable: bool = True
    # one-hot levels, filled in by load_csv for categorical features
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise SchemaError(f"feature '{self.name}': kind must be '{CONTINUOUS}' or "
                              f"'{CATEGORICAL}', got {self.kind!r}")

    @property
    def columns(self) -> list[str]:
        if self.kind == CONTINUOUS:
            return [self.name]
        return [f"{self.name}={level}" for level in self.categories]


@dataclass(frozen=True)
class FeatureSchema:
    """Feature descriptions plus the name of the label column."""

    features: tuple[Feature, ...]
    label: str

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate feature names in schema: {names}")
        if self.label in names:
            raise SchemaError(f"label '{self.label}' is also listed as a feature")
        if not any(f.kind == CONTINUOUS and f.mutable for f in self.features):
            raise SchemaError("schema needs at least one continuous mutable feature")

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureSchema":
        try:
            feats = tuple(Feature(f["name"], f.get("kind", CONTINUOUS), bool(f.get("mutable", True)),
                                  tuple(f.get("categories", ()))) for f in doc["features"])
            return cls(feats, doc["label"])
        except KeyError as exc:
            raise SchemaError(f"schema is missing field {exc}") from exc

    @classmethod
    def from_json(cls, path) -> "FeatureSchema":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from exc

    def to_dict(self) -> dict:
        return {
            "features": [{"name": f.name, "kind": f.kind, "mutable": f.mutable,
                          **({"categories": list(f.categories)} if f.categories else {})}
                         for f in self.features],
            "label": self.label,
        }

    @property
    def columns(self) -> list[str]:
        """Encoded column names, in matrix order."""
        return [c for f in self.features for c in f.columns]

    @property
    def mutable_mask(self) -> np.ndarray:
        """True on encoded columns the generators may change."""
        return np.array([f.kind == CONTINUOUS and f.mutable
                         for f in self.features for _ in f.columns], dtype=bool)

    @property
    def continuous_mask(self) -> np.ndarray:
        return np.array([f.kind == CONTINUOUS for f in self.features for _ in f.columns], dtype=bool)

    def one_hot_groups(self) -> list[list[int]]:
        groups, col = [], 0
        for f in self.features:
            width = len(f.columns)
            if f.kind == CATEGORICAL:
                groups.append(list(range(col, col + width)))
            col += width
        return groups


@dataclass(frozen=True, eq=False)
class Dataset:
    """Encoded feature matrix, binary labels and (once normalized) the scaling.

    ``lower``/``upper`` are the per-column raw minimum and maximum used by
    :func:`normalize`; both are ``None`` for raw data.
    """

    X: np.ndarray
    y: np.ndarray
    schema: FeatureSchema
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y).astype(np.int64).reshape(-1)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DataError(f"feature matrix {X.shape} does not match {y.shape[0]} labels")
        if X.shape[1] != len(self.schema.columns):
            raise DataError(f"feature matrix has {X.shape[1]} columns, schema encodes "
                            f"{len(self.schema.columns)}")
        if not np.isin(y, (0, 1)).all():
            raise DataError("labels must be 0 or 1")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return len(self.y)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def normalized(self) -> bool:
        return self.lower is not None

    def subset(self, rows) -> "Dataset":
        return replace(self, X=self.X[rows], y=self.y[rows])


def _parse_float(text: str, column: str, row: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"column '{column}', row {row}: non-numeric value {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"column '{column}', row {row}: non-finite value {text!r}")
    return value


def load_csv(path, schema: FeatureSchema) -> Dataset:
    """Read a headed CSV file, one-hot encoding categorical features.

    Categorical levels are sorted so the encoding does not depend on row
    order; the levels found are recorded in the returned schema.  Missing
    values are rejected.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: file is empty (no header row)") from None
        rows = [r for r in reader if r]

    index = {name: i for i, name in enumerate(header)}
    needed = [schema.label] + [f.name for f in schema.features]
    missing = [name for name in needed if name not in index]
    if missing:
        raise SchemaError(f"{path}: columns missing from CSV: {missing}")
    extra = [name for name in header if name not in needed]
    if extra:
        raise SchemaError(f"{path}: columns not described by the schema: {extra}")
    for r, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}, line {r}: expected {len(header)} cells, got {len(row)}")
        empty = [header[i] for i, cell in enumerate(row) if not cell.strip()]
        if empty:
            raise DataError(f"{path}, line {r}: missing value in column(s) {empty}")

    features, blocks = [], []
    for feat in schema.features:
        cells = [row[index[feat.name]].strip() for row in rows]
        if feat.kind == CONTINUOUS:
            blocks.append(np.array([_parse_float(c, feat.name, r) for r, c in enumerate(cells, 2)],
                                   dtype=np.float64).reshape(-1, 1))
            features.append(feat)
        else:
            levels = tuple(feat.categories) or tuple(sorted(set(cells)))
            unknown = sorted(set(cells) - set(levels))
            if unknown:
                raise DataError(f"column '{feat.name}': levels {unknown} not in declared categories")
            lookup = {level: j for j, level in enumerate(levels)}
            block = np.zeros((len(cells), len(levels)))
            block[np.arange(len(cells)), [lookup[c] for c in cells]] = 1.0
            blocks.append(block)
            # one-hot columns are never optimized
            features.append(replace(feat, categories=levels, mutable=False))

    labels = []
    for r, row in enumerate(rows, start=2):
        value = _parse_float(row[index[schema.label]].strip(), schema.label, r)
        if value not in (0.0, 1.0):
            raise DataError(f"column '{schema.label}', row {r}: label must be 0 or 1, got {value}")
        labels.append(int(value))

    encoded = FeatureSchema(tuple(features), schema.label)
    X = np.hstack(blocks) if rows else np.zeros((0, len(encoded.columns)))
    return Dataset(X, np.array(labels, dtype=np.int64), encoded)


def normalize(dataset: Dataset) -> Dataset:
    """Min-max scale continuous columns to [0, 1].

    One-hot columns keep their 0/1 values.  Raises DataError listing every
    constant continuous feature, since those cannot be scaled.
    """
    if dataset.normalized:
        return dataset
    if len(dataset) == 0:
        raise DataError("cannot normalize an empty dataset")
    cont = dataset.schema.continuous_mask
    lower = np.where(cont, dataset.X.min(axis=0), 0.0)
    upper = np.where(cont, dataset.X.max(axis=0), 1.0)
    constant = [c for c, flag, lo, hi in zip(dataset.schema.columns, cont, lower, upper)
                if flag and not lo < hi]
    if constant:
        raise DataError(f"constant features cannot be normalized: {constant}")
    X = (dataset.X - lower) / (upper - lower)
    return replace(dataset, X=X, lower=lower, upper=upper)


def denormalize(dataset: Dataset, x_normalized) -> np.ndarray:
    """Map normalized points (any leading shape) back to raw feature units."""
    if not dataset.normalized:
        raise DataError("dataset carries no normalization parameters")
    x = np.asarray(x_normalized, dtype=np.float64)
    return x * (dataset.upper - dataset.lower) + dataset.lower


def normalize_point(dataset: Dataset, x_raw) -> np.ndarray:
    if not dataset.normalized:
        raise DataError("dataset carries no normalization parameters")
    return (np.asarray(x_raw, dtype=np.float64) - dataset.lower) / (dataset.upper - dataset.lower)


def split(dataset: Dataset, fraction: float = 0.75, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Random train/test partition; ``fraction`` of the rows go to train."""
    if not 0.0 < fraction <= 1.0:
        raise DataError(f"train fraction must lie in (0, 1], got {fraction}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    n_train = int(round(fraction * len(dataset)))
    if n_train == len(dataset):
        warnings.warn("split leaves the test set empty", stacklevel=2)
    return dataset.subset(np.sort(order[:n_train])), dataset.subset(np.sort(order[n_train:]))


def synth_two_gaussians(n: int, separation: float = 4.0, seed: int = 0, scale: float = 1.0) -> Dataset:
    """Two isotropic 2D Gaussian blobs of standard deviation ``scale``.

    Class 0 is centred at ``-separation/2`` and class 1 at ``+separation/2``
    along the diagonal, so the Bayes-optimal boundary is the line
    ``x1 + x2 = 0`` with error ``Phi(-separation / (2 * scale))``.
    Returns raw (unnormalized) data with balanced classes.
    """
    if n <= 0:
        raise DataError("synthetic dataset needs n >= 1 rows")
    rng = np.random.default_rng(seed)
    y = np.zeros(n, dtype=np.int64)
    y[n // 2:] = 1
    y = rng.permutation(y)
    direction = np.array([1.0, 1.0]) / np.sqrt(2.0)
    centres = np.where(y[:, None] == 1, 0.5, -0.5) * separation * direction
    X = centres + rng.normal(0.0, scale, size=(n, 2))
    schema = FeatureSchema((Feature("x1"), Feature("x2")), "y")
    return Dataset(X, y, schema)
