"""Declarative feature schemas for mixed-type tabular data."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


class Kind(str, Enum):
    REAL = "real"
    POSITIVE_REAL = "positive_real"
    COUNT = "count"
    CATEGORICAL = "categorical"
    ORDINAL = "ordinal"

    @property
    def is_discrete(self) -> bool:
        return self in (Kind.CATEGORICAL, Kind.ORDINAL)

    @property
    def is_ordered(self) -> bool:
        return self is not Kind.CATEGORICAL


class Mutability(str, Enum):
    FREE = "free"
    PROTECTED = "protected"


class SchemaError(ValueError):
    pass


class DomainError(ValueError):
    """A value lies outside the domain of its feature kind."""


@dataclass(frozen=True)
class Feature:
    name: str
    kind: Kind
    mutability: Mutability = Mutability.FREE
    n_categories: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "mutability", Mutability(self.mutability))
        if self.kind.is_discrete:
            if self.n_categories is None or int(self.n_categories) < 2:
                raise SchemaError(
                    f"feature {self.name!r}: {self.kind.value} needs n_categories >= 2"
                )
            object.__setattr__(self, "n_categories", int(self.n_categories))
        elif self.n_categories is not None:
            raise SchemaError(f"feature {self.name!r}: n_categories only applies to discrete kinds")

    @property
    def is_free(self) -> bool:
        return self.mutability is Mutability.FREE

    def check_value(self, value: float) -> str | None:
        """Return a reason string if ``value`` is outside this feature's domain."""
        if not np.isfinite(value):
            return "non-finite value"
        if self.kind is Kind.POSITIVE_REAL and not value > 0:
            return "positive_real value must be > 0"
        if self.kind is Kind.COUNT and (value < 0 or value != np.floor(value)):
            return "count value must be a non-negative integer"
        if self.kind.is_discrete and (
            value != np.floor(value) or not 0 <= value < self.n_categories
        ):
            return f"{self.kind.value} value must be an integer in [0, {self.n_categories - 1}]"
        return None

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind.value, "mutability": self.mutability.value}
        if self.n_categories is not None:
            d["n_categories"] = self.n_categories
        return d


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature list plus the label column.

    ``positive_label`` is the raw label value that encodes the favourable
    outcome (mapped to ``y = 1``); ``None`` means the column already holds 0/1.
    """

    features: tuple[Feature, ...]
    label: str = "y"
    positive_label: str | float | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        feats = tuple(f if isinstance(f, Feature) else Feature(**f) for f in self.features)
        object.__setattr__(self, "features", feats)
        names = [f.name for f in feats]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate feature names: {dupes}")
        if self.label in names:
            raise SchemaError(f"label column {self.label!r} is also listed as a feature")
        if not any(f.is_free for f in feats):
            raise SchemaError("schema needs at least one free feature")

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def free_indices(self) -> np.ndarray:
        return np.array([i for i, f in enumerate(self.features) if f.is_free], dtype=int)

    @property
    def protected_indices(self) -> np.ndarray:
        return np.array([i for i, f in enumerate(self.features) if not f.is_free], dtype=int)

    @property
    def n_free(self) -> int:
        return len(self.free_indices)

    @property
    def n_protected(self) -> int:
        return len(self.protected_indices)

    def __getitem__(self, i: int) -> Feature:
        return self.features[i]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no feature named {name!r}") from None

    def validate(self, X: np.ndarray, row_offset: int = 0) -> None:
        """Raise DomainError naming the first offending row and column."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise SchemaError(
                f"expected rows with {self.n_features} features, got shape {X.shape}"
            )
        for j, feat in enumerate(self.features):
            col = X[:, j]
            bad = ~np.isfinite(col)
            if feat.kind is Kind.POSITIVE_REAL:
                bad |= ~(col > 0)
            elif feat.kind is Kind.COUNT:
                bad |= (col < 0) | (col != np.floor(col))
            elif feat.kind.is_discrete:
                bad |= (col != np.floor(col)) | (col < 0) | (col >= feat.n_categories)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                reason = feat.check_value(col[i])
                raise DomainError(
                    f"row {i + row_offset}, column {feat.name!r}: {col[i]!r} ({reason})"
                )

    def to_dict(self) -> dict:
        d = {
            "version": SCHEMA_VERSION,
            "label": self.label,
            "positive_label": self.positive_label,
            "features": [f.to_dict() for f in self.features],
        }
        if self.meta:
            d["meta"] = self.meta
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        version = d.get("version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise SchemaError(f"unsupported schema version {version}")
        try:
            feats = tuple(Feature(**f) for f in d["features"])
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema: {exc}") from exc
        return cls(feats, label=d.get("label", "y"), positive_label=d.get("positive_label"),
                   meta=d.get("meta", {}))

    def parse_label(self, cell: str) -> int:
        """Map a raw label cell to 0/1."""
        s = cell.strip()
        if self.positive_label is None:
            v = float(s)
            if v not in (0.0, 1.0):
                raise ValueError(f"label must be 0 or 1, got {s!r}")
            return int(v)
        try:
            return int(float(s) == float(self.positive_label))
        except ValueError:
            return int(s == str(self.positive_label))


def load_schema(path: str | Path) -> FeatureSchema:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"schema file not found: {path}")
    return FeatureSchema.from_dict(json.loads(path.read_text(encoding="utf-8")))


def save_schema(schema: FeatureSchema, path: str | Path) -> None:
    Path(path).write_text(json.dumps(schema.to_dict(), indent=2) + "\n", encoding="utf-8")
