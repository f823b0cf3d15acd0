"""Datasets, CSV ingestion, splitting and the synthetic generators."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .schema import Feature, FeatureSchema, Kind, SchemaError

# Component means for the three-blob example. One cluster sits fully below the
# x2 = 6 boundary, one has its upper tail across it, one lies above it.
BLOB_MEANS = ((0.0, 0.0), (8.0, 4.0), (0.0, 9.0))
BLOB_STD = 1.0
BLOB_THRESHOLD = 6.0

# Discretized moons: x2 takes 19 values on a 0.1 grid from -0.8 to 1.0.
MOONS_X2_MIN = -0.8
MOONS_N_CATEGORIES = 19


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Row-major mixed-type table with binary labels.

    Categorical, ordinal and count values are stored as integral floats so the
    whole table fits one ``float64`` array.
    """

    schema: FeatureSchema
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        y = np.array(self.y)
        if X.ndim != 2:
            raise DataError(f"X must be 2-D, got shape {X.shape}")
        if X.shape[0] < 1:
            raise DataError("dataset needs at least one row")
        if y.shape != (X.shape[0],):
            raise DataError(f"labels shape {y.shape} does not match {X.shape[0]} rows")
        if not np.isin(y, (0, 1)).all():
            raise DataError("labels must be 0 or 1")
        self.schema.validate(X)
        X.setflags(write=False)
        y = y.astype(int)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def X_free(self) -> np.ndarray:
        return self.X[:, self.schema.free_indices]

    @property
    def X_protected(self) -> np.ndarray:
        return self.X[:, self.schema.protected_indices]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.schema, self.X[idx], self.y[idx])

    def to_csv(self, path: str | Path) -> None:
        write_table(path, self.schema, self.X, labels=self.y)


def format_value(feature: Feature, value: float) -> str:
    if feature.kind in (Kind.COUNT, Kind.CATEGORICAL, Kind.ORDINAL):
        return str(int(value))
    return repr(float(value))


def write_table(path, schema: FeatureSchema, X, labels=None, prefix: str = "") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = [prefix + n for n in schema.names]
        if labels is not None:
            header.append(schema.label)
        w.writerow(header)
        for i, row in enumerate(np.asarray(X)):
            cells = [format_value(f, v) for f, v in zip(schema.features, row)]
            if labels is not None:
                cells.append(str(int(labels[i])))
            w.writerow(cells)


def load_csv(path: str | Path, schema: FeatureSchema, on_invalid: str = "raise",
             positive_offset: float = 0.0) -> Dataset:
    """Read a headered CSV into a validated :class:`Dataset`.

    Columns are matched by name, so extra columns are ignored and order may
    differ from the schema. Empty or out-of-domain cells raise unless
    ``on_invalid="drop"``, which skips the whole row instead.
    ``positive_offset`` is added to positive_real columns before validation
    (raw credit data often holds exact zeros there).
    """
    if on_invalid not in ("raise", "drop"):
        raise ValueError("on_invalid must be 'raise' or 'drop'")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [c for c in schema.names + [schema.label] if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}")
        cols = [header.index(n) for n in schema.names]
        label_col = header.index(schema.label)
        rows, labels = [], []
        for i, rec in enumerate(reader):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: row {i} has {len(rec)} cells, expected {len(header)}")
            try:
                vals = [_parse_cell(rec[c], i, feat, path, positive_offset)
                        for feat, c in zip(schema.features, cols)]
                lab = rec[label_col].strip()
                try:
                    y = schema.parse_label(lab)
                except ValueError:
                    raise DataError(f"{path}: row {i}, column {schema.label!r}: "
                                    f"cannot parse label {lab!r}") from None
            except DataError:
                if on_invalid == "drop":
                    continue
                raise
            rows.append(vals)
            labels.append(y)
    if not rows:
        raise DataError(f"{path}: no data rows")
    X = np.array(rows, dtype=float)
    try:
        schema.validate(X)
    except SchemaError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return Dataset(schema, X, np.array(labels))


def _parse_cell(cell: str, row: int, feature: Feature, path, positive_offset: float = 0.0) -> float:
    s = cell.strip()
    if not s or s.upper() in ("NA", "NAN"):
        raise DataError(f"{path}: row {row}, column {feature.name!r}: missing value")
    try:
        v = float(s)
    except ValueError:
        raise DataError(f"{path}: row {row}, column {feature.name!r}: cannot parse {s!r}") from None
    if feature.kind is Kind.POSITIVE_REAL:
        v += positive_offset
    reason = feature.check_value(v)
    if reason:
        raise DataError(f"{path}: row {row}, column {feature.name!r}: {s!r} ({reason})")
    return v


def split(d: Dataset, train_fraction: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Random disjoint train/test partition with ``round(N * train_fraction)`` train rows."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    n = len(d)
    if n < 2:
        raise DataError("need at least 2 rows to split")
    n_train = int(np.clip(np.floor(n * train_fraction + 0.5), 1, n - 1))
    perm = np.random.default_rng(seed).permutation(n)
    return d.subset(np.sort(perm[:n_train])), d.subset(np.sort(perm[n_train:]))


def blobs_schema() -> FeatureSchema:
    return FeatureSchema(
        (Feature("x1", Kind.REAL), Feature("x2", Kind.REAL)),
        label="y",
    )


def gen_blobs(n: int = 10000, seed: int = 0, means=BLOB_MEANS, std: float = BLOB_STD,
              threshold: float = BLOB_THRESHOLD) -> Dataset:
    """Three isotropic Gaussian blobs labelled by ``x2 > threshold``."""
    if n < 3:
        raise ValueError("gen_blobs needs n >= 3")
    means = np.asarray(means, dtype=float)
    k = len(means)
    rng = np.random.default_rng(seed)
    counts = np.full(k, n // k)
    counts[: n % k] += 1
    comp = np.repeat(np.arange(k), counts)
    X = means[comp] + std * rng.standard_normal((n, means.shape[1]))
    X = X[rng.permutation(n)]
    y = (X[:, 1] > threshold).astype(int)
    return Dataset(blobs_schema(), X, y)


def moons_schema() -> FeatureSchema:
    return FeatureSchema(
        (
            Feature("x1", Kind.REAL),
            Feature("x2", Kind.CATEGORICAL, n_categories=MOONS_N_CATEGORIES),
        ),
        label="y",
    )


def gen_moons_discretized(n: int = 1000, seed: int = 0) -> Dataset:
    """Two interleaved half circles with a categorical second coordinate.

    Upper half: ``(cos t, sin t)``; lower half: ``(1 - cos t, 0.2 - sin t)`` for
    ``t ~ U(0, pi)``. Both coordinates are rounded to one decimal, so x2 lives
    on the 19-point grid ``-0.8, -0.7, ..., 1.0`` and is stored as the grid
    index. Label is ``x1 > 0``.
    """
    if n < 2 or n % 2:
        raise ValueError("gen_moons_discretized needs an even n >= 2")
    half = n // 2
    rng = np.random.default_rng(seed)
    t_up = rng.uniform(0.0, np.pi, half)
    t_lo = rng.uniform(0.0, np.pi, half)
    x1 = np.concatenate([np.cos(t_up), 1.0 - np.cos(t_lo)])
    x2 = np.concatenate([np.sin(t_up), 0.2 - np.sin(t_lo)])
    x1 = np.round(x1, 1) + 0.0  # drop negative zeros
    cat = np.rint((np.round(x2, 1) - MOONS_X2_MIN) * 10).astype(int)
    X = np.column_stack([x1, cat.astype(float)])
    y = (x1 > 0).astype(int)
    return Dataset(moons_schema(), X, y)


def moons_category_value(index) -> np.ndarray:
    """Grid value of a moons x2 category index."""
    return MOONS_X2_MIN + 0.1 * np.asarray(index, dtype=float)


def is_upper_moon(d: Dataset) -> np.ndarray:
    """Half-circle membership; rows are generated upper half first."""
    n = len(d)
    return np.arange(n) < n // 2
