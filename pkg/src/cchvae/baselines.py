"""Growing Spheres: model-agnostic counterfactual search in input space."""

from __future__ import annotations

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .schema import FeatureSchema, Kind
from .search import Counterfactual, sample_annulus


class GrowingSpheres(BaseEstimator):
    """Sample growing annuli around ``x`` in a scaled free-feature space until
    the classifier's label flips; return the nearest flip.

    Only free features move. Numeric free features are divided by their
    training standard deviation (``standardize=True``), categorical ones are
    one-hot encoded and snapped back by argmax; counts and ordinals are
    rounded into their domain.
    """

    def __init__(self, classifier=None, schema: FeatureSchema | None = None, step: float = 0.1,
                 samples_per_ring: int = 200, max_rings: int = 1000, standardize: bool = True,
                 seed: int = 0, n_jobs: int | None = None):
        self.classifier = classifier
        self.schema = schema
        self.step = step
        self.samples_per_ring = samples_per_ring
        self.max_rings = max_rings
        self.standardize = standardize
        self.seed = seed
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        if not self.step > 0:
            raise ValueError("step must be > 0")
        X = check_array(X, dtype=np.float64)
        self.free_idx_ = self.schema.free_indices
        sd = X.std(axis=0)
        self.scale_ = np.where((sd > 1e-12) & self.standardize, sd, 1.0)
        self.min_ = X.min(axis=0)
        return self

    # free-feature encoding ---------------------------------------------------
    def _encode(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        blocks = []
        for j in self.free_idx_:
            feat = self.schema[j]
            if feat.kind is Kind.CATEGORICAL:
                blocks.append(np.eye(feat.n_categories)[X[:, j].astype(int)])
            else:
                blocks.append(X[:, j:j + 1] / self.scale_[j])
        return np.hstack(blocks)

    def _decode(self, V, x) -> np.ndarray:
        out = np.repeat(np.asarray(x, float)[None], len(V), axis=0)
        pos = 0
        for j in self.free_idx_:
            feat = self.schema[j]
            if feat.kind is Kind.CATEGORICAL:
                out[:, j] = np.argmax(V[:, pos:pos + feat.n_categories], axis=1)
                pos += feat.n_categories
                continue
            v = V[:, pos] * self.scale_[j]
            pos += 1
            if feat.kind is Kind.POSITIVE_REAL:
                v = np.maximum(v, self.min_[j])
            elif feat.kind is Kind.COUNT:
                v = np.maximum(np.rint(v), 0.0)
            elif feat.kind is Kind.ORDINAL:
                v = np.clip(np.rint(v), 0, feat.n_categories - 1)
            out[:, j] = v
        return out

    # search --------------------------------------------------------------
    def explain_one(self, x, index: int = 0) -> Counterfactual | None:
        check_is_fitted(self, "scale_")
        x = np.asarray(x, dtype=float)
        rng = np.random.default_rng([self.seed, index])
        y_before = int(self.classifier.predict(x[None])[0])
        v0 = self._encode(x)[0]
        for ring in range(self.max_rings):
            r = ring * self.step
            V = sample_annulus(v0, r, r + self.step, self.samples_per_ring, 2, rng)
            E = self._decode(V, x)
            y = np.asarray(self.classifier.predict(E))
            flips = np.flatnonzero(y != y_before)
            if flips.size:
                enc = self._encode(E[flips])
                dist = np.linalg.norm(enc - v0, axis=1)
                j = int(np.argmin(dist))
                return Counterfactual(
                    x=x, e=E[flips[j]], z_hat=v0, z_star=enc[j], c_star=-1,
                    radius=r + self.step, y_before=y_before, y_after=int(y[flips[j]]))
        return None

    def explain(self, X) -> list:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.n_jobs in (None, 1):
            return [self.explain_one(X[i], i) for i in range(len(X))]
        return Parallel(n_jobs=self.n_jobs, prefer="threads")(
            delayed(self.explain_one)(X[i], i) for i in range(len(X)))


def growing_spheres(f, x, cfg: dict | None = None, train=None, schema: FeatureSchema | None = None,
                    index: int = 0) -> Counterfactual | None:
    """Functional form: ``cfg`` holds GrowingSpheres parameters; ``train`` rows
    set the feature scales (unit scales if omitted)."""
    cfg = dict(cfg or {})
    if schema is None:
        schema = train.schema
    gs = GrowingSpheres(classifier=f, schema=schema, **cfg)
    X = train.X if train is not None else np.asarray(x, float)[None]
    if train is None:
        gs.standardize = False
    gs.fit(X)
    return gs.explain_one(x, index)
