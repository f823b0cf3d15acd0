"""Black-box binary classifiers and the instance sets derived from them."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset
from .schema import FeatureSchema, Kind

MODEL_FORMAT = "cchvae.linear_classifier"
MODEL_VERSION = 1


class LinearClassifier(ClassifierMixin, BaseEstimator):
    """Linear score over a one-hot / standardized encoding of raw rows.

    ``predict`` returns ``1`` iff ``sigmoid(score) >= threshold``. Subclasses
    supply ``fit``; the fitted state is ``coef_``, ``intercept_`` and the
    encoding statistics ``enc_mean_`` / ``enc_scale_``.
    """

    def __init__(self, schema: FeatureSchema | None = None, threshold: float = 0.5):
        self.schema = schema
        self.threshold = threshold

    # encoding ------------------------------------------------------------
    def _check_rows(self, X) -> np.ndarray:
        X = check_array(X, dtype=np.float64)
        expected = getattr(self, "n_features_in_", None)
        if expected is not None and X.shape[1] != expected:
            raise ValueError(f"rows have {X.shape[1]} features, classifier expects {expected}")
        return X

    def _expand(self, X: np.ndarray) -> np.ndarray:
        if self.schema is None:
            return X
        blocks = []
        for j, feat in enumerate(self.schema.features):
            col = X[:, j]
            if feat.kind.is_discrete:
                blocks.append(np.eye(feat.n_categories)[col.astype(int)])
            else:
                blocks.append(col[:, None])
        return np.hstack(blocks)

    def encode(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = self._check_rows(X)
        return (self._expand(X) - self.enc_mean_) / self.enc_scale_

    # prediction ----------------------------------------------------------
    def decision_function(self, X) -> np.ndarray:
        return self.encode(X) @ self.coef_ + self.intercept_

    def predict_proba(self, X) -> np.ndarray:
        p1 = expit(self.decision_function(X))
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X) -> np.ndarray:
        return (expit(self.decision_function(X)) >= self.threshold).astype(int)

    # persistence ---------------------------------------------------------
    def to_dict(self) -> dict:
        check_is_fitted(self, "coef_")
        params = {k: v for k, v in self.get_params().items() if k != "schema"}
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "type": type(self).__name__,
            "params": params,
            "schema": None if self.schema is None else self.schema.to_dict(),
            "arrays": {
                name: {"shape": list(np.shape(v)), "data": np.ravel(v).tolist()}
                for name, v in (
                    ("coef", self.coef_),
                    ("intercept", np.array([self.intercept_])),
                    ("enc_mean", self.enc_mean_),
                    ("enc_scale", self.enc_scale_),
                )
            },
            "n_features_in": int(self.n_features_in_),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")


class L2LogisticRegression(LinearClassifier):
    """Ridge-penalized logistic regression fitted by full-batch gradient descent.

    Minimizes ``mean(logloss) + l2 / 2 * ||w||^2`` (intercept unpenalized) with
    Armijo backtracking until the gradient norm drops below ``tol``. Steps are
    scaled per coordinate by a bound on the diagonal curvature so a large
    ``l2`` does not stall the unpenalized intercept. Numeric
    columns are standardized and discrete columns one-hot encoded when
    ``standardize`` is true and a schema is given.
    """

    def __init__(self, schema: FeatureSchema | None = None, threshold: float = 0.5,
                 l2: float = 1e-3, tol: float = 1e-6, max_iter: int = 50000,
                 fit_intercept: bool = True, standardize: bool = True):
        super().__init__(schema=schema, threshold=threshold)
        self.l2 = l2
        self.tol = tol
        self.max_iter = max_iter
        self.fit_intercept = fit_intercept
        self.standardize = standardize

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        classes = np.unique(y)
        if len(classes) < 2:
            raise ValueError("training data contains a single class")
        if not np.isin(classes, (0, 1)).all():
            raise ValueError("labels must be 0/1")
        if self.schema is not None and self.schema.n_features != X.shape[1]:
            raise ValueError("schema inconsistent with X")
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        Phi = self._expand(X)
        if self.standardize:
            self.enc_mean_ = Phi.mean(axis=0)
            sd = Phi.std(axis=0)
            self.enc_scale_ = np.where(sd > 1e-12, sd, 1.0)
        else:
            self.enc_mean_ = np.zeros(Phi.shape[1])
            self.enc_scale_ = np.ones(Phi.shape[1])
        Phi = (Phi - self.enc_mean_) / self.enc_scale_
        w, b, gnorm, n_iter = self._descend(Phi, y.astype(float))
        self.coef_, self.intercept_ = w, b
        self.grad_norm_, self.n_iter_ = gnorm, n_iter
        return self

    def _objective(self, Phi, y, w, b):
        s = Phi @ w + b
        loss = np.mean(np.logaddexp(0.0, s) - y * s) + 0.5 * self.l2 * (w @ w)
        r = expit(s) - y
        gw = Phi.T @ r / len(y) + self.l2 * w
        gb = r.mean() if self.fit_intercept else 0.0
        return loss, gw, gb

    def _descend(self, Phi, y):
        w = np.zeros(Phi.shape[1])
        b = 0.0
        if self.fit_intercept:
            p = np.clip(y.mean(), 1e-12, 1 - 1e-12)
            b = float(np.log(p / (1 - p)))
        # logistic curvature is at most 1/4 per sample
        pw = 1.0 / (0.25 * np.mean(Phi ** 2, axis=0) + self.l2 + 1e-12)
        pb = 4.0
        step = 1.0
        loss, gw, gb = self._objective(Phi, y, w, b)
        for it in range(1, self.max_iter + 1):
            g2 = gw @ gw + gb * gb
            if np.sqrt(g2) < self.tol:
                return w, b, float(np.sqrt(g2)), it - 1
            dw, db = pw * gw, pb * gb
            gd = gw @ dw + gb * db
            step *= 2.0
            while True:
                w_new, b_new = w - step * dw, b - step * db
                loss_new, gw_new, gb_new = self._objective(Phi, y, w_new, b_new)
                if loss_new <= loss - 0.5 * step * gd or step < 1e-16:
                    break
                step *= 0.5
            w, b, loss, gw, gb = w_new, b_new, loss_new, gw_new, gb_new
        gnorm = float(np.sqrt(gw @ gw + gb * gb))
        if gnorm >= self.tol:
            warnings.warn(
                f"gradient descent stopped after {self.max_iter} iterations "
                f"with gradient norm {gnorm:.2e}", ConvergenceWarning, stacklevel=3)
        return w, b, gnorm, self.max_iter

    def loss(self, X, y) -> float:
        """Penalized training objective at the fitted parameters."""
        Phi = self.encode(X)
        return float(self._objective(Phi, np.asarray(y, float), self.coef_, self.intercept_)[0])


class IndicatorClassifier(LinearClassifier):
    """``f(x) = I(x[feature_index] > cutoff)`` expressed as a linear model."""

    def __init__(self, schema: FeatureSchema | None = None, feature_index: int = 0,
                 cutoff: float = 0.0, n_features: int | None = None):
        super().__init__(schema=schema, threshold=0.5)
        self.feature_index = feature_index
        self.cutoff = cutoff
        self.n_features = n_features
        n = schema.n_features if schema is not None else n_features
        if n is None:
            raise ValueError("need a schema or n_features")
        if schema is not None and schema[feature_index].kind is not Kind.REAL:
            raise ValueError(f"feature {schema[feature_index].name!r} is not real-valued")
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = n
        self.coef_ = np.zeros(n)
        self.coef_[feature_index] = 1.0
        self.intercept_ = -float(cutoff)
        self.enc_mean_ = np.zeros(n)
        self.enc_scale_ = np.ones(n)

    def _expand(self, X):
        return X

    def fit(self, X=None, y=None):
        return self

    def predict(self, X) -> np.ndarray:
        X = self._check_rows(X)
        return (X[:, self.feature_index] > self.cutoff).astype(int)


def train_logreg(train: Dataset, l2_strength: float = 1e-3, **config) -> L2LogisticRegression:
    return L2LogisticRegression(schema=train.schema, l2=l2_strength, **config).fit(train.X, train.y)


def indicator_classifier(feature_index: int, threshold: float,
                         schema: FeatureSchema | None = None,
                         n_features: int | None = None) -> IndicatorClassifier:
    return IndicatorClassifier(schema, feature_index=feature_index, cutoff=threshold,
                               n_features=n_features)


def load_classifier(path: str | Path) -> LinearClassifier:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"corrupt classifier file {path}: {exc}") from exc
    if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported classifier format/version")
    schema = FeatureSchema.from_dict(d["schema"]) if d["schema"] else None
    arrays = {k: np.array(v["data"], dtype=float).reshape(v["shape"])
              for k, v in d["arrays"].items()}
    cls = {"L2LogisticRegression": L2LogisticRegression,
           "IndicatorClassifier": IndicatorClassifier,
           "LinearClassifier": LinearClassifier}[d["type"]]
    clf = cls(schema=schema, **d["params"])
    clf.classes_ = np.array([0, 1])
    clf.n_features_in_ = d["n_features_in"]
    clf.coef_ = arrays["coef"]
    clf.intercept_ = float(arrays["intercept"][0])
    clf.enc_mean_ = arrays["enc_mean"]
    clf.enc_scale_ = arrays["enc_scale"]
    return clf


@dataclass(frozen=True)
class ClassSets:
    """Index sets H+, H-, D+ and H+ ∩ D+ over one dataset."""

    h_plus: np.ndarray
    h_minus: np.ndarray
    d_plus: np.ndarray
    positive_correct: np.ndarray


def class_sets(d: Dataset, f) -> ClassSets:
    pred = np.asarray(f.predict(d.X))
    h_plus = np.flatnonzero(pred == 1)
    d_plus = np.flatnonzero(d.y == 1)
    return ClassSets(
        h_plus=h_plus,
        h_minus=np.flatnonzero(pred == 0),
        d_plus=d_plus,
        positive_correct=np.intersect1d(h_plus, d_plus),
    )
