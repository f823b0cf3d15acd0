"""Column transforms fitted on training data."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import Dataset
from .schema import FeatureSchema, Kind


class ColumnStandardizer(TransformerMixin, BaseEstimator):
    """Standardize the ``real`` columns of a schema; leave every other kind as is.

    Constant columns are left unscaled and listed in ``degenerate_``.
    """

    def __init__(self, schema: FeatureSchema | None = None, *, min_std: float = 1e-12):
        self.schema = schema
        self.min_std = min_std

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if self.schema is None or self.schema.n_features != X.shape[1]:
            raise ValueError("schema missing or inconsistent with X")
        self.mean_ = np.zeros(X.shape[1])
        self.scale_ = np.ones(X.shape[1])
        degenerate = []
        for j, feat in enumerate(self.schema.features):
            if feat.kind is not Kind.REAL:
                continue
            sd = X[:, j].std()
            if sd > self.min_std:
                self.mean_[j] = X[:, j].mean()
                self.scale_[j] = sd
            else:
                degenerate.append(j)
        self.degenerate_ = np.array(degenerate, dtype=int)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=np.float64)
        return (X - self.mean_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=np.float64)
        return X * self.scale_ + self.mean_

    def to_dict(self) -> dict:
        return {"mean": self.mean_.tolist(), "scale": self.scale_.tolist(),
                "degenerate": self.degenerate_.tolist()}

    @classmethod
    def from_dict(cls, schema: FeatureSchema, d: dict) -> "ColumnStandardizer":
        obj = cls(schema)
        obj.mean_ = np.array(d["mean"], dtype=float)
        obj.scale_ = np.array(d["scale"], dtype=float)
        obj.degenerate_ = np.array(d["degenerate"], dtype=int)
        obj.n_features_in_ = len(obj.mean_)
        return obj


def fit_transform(d: Dataset) -> tuple[ColumnStandardizer, Dataset]:
    t = ColumnStandardizer(d.schema).fit(d.X)
    return t, Dataset(d.schema, t.transform(d.X), d.y)
