"""Faithfulness and difficulty metrics for counterfactual explanations.

Faithfulness is judged against the correctly classified positive
instances (``H+ ∩ D+``): *proximity* is a local-outlier ratio and
*connectedness* asks for an ε-chain through that reference sample. The
difficulty of a suggestion is measured in percentile shifts of the free
features under the training marginals.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .schema import FeatureSchema, Kind

DEFAULT_EPS_QUANTILES = (0.01, 0.02, 0.05, 0.10, 0.20)


class InputMetric(BaseEstimator):
    """Schema-aware distance on raw rows.

    Ordered features contribute ``|a - b| / sd`` (training standard deviation),
    categorical ones a 0/1 mismatch; contributions are combined Euclidean-wise.
    ``embed`` maps rows into a space where this metric is plain Euclidean
    distance, so KD-trees apply.
    """

    def __init__(self, schema: FeatureSchema | None = None, scale: float = 1.0):
        self.schema = schema
        self.scale = scale

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        sd = X.std(axis=0)
        self.sd_ = np.where(sd > 1e-12, sd, 1.0)
        self.categorical_ = np.array(
            [self.schema is not None and f.kind is Kind.CATEGORICAL for f in self.schema.features]
            if self.schema is not None else [False] * X.shape[1])
        return self

    def embed(self, X) -> np.ndarray:
        check_is_fitted(self, "sd_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        blocks = []
        for j in range(X.shape[1]):
            if self.categorical_[j]:
                R = self.schema[j].n_categories
                # one-hot scaled so two distinct categories sit at distance 1
                blocks.append(np.eye(R)[X[:, j].astype(int)] / np.sqrt(2.0))
            else:
                blocks.append(X[:, j:j + 1] / self.sd_[j])
        return self.scale * np.hstack(blocks)

    def __call__(self, a, b) -> float:
        check_is_fitted(self, "sd_")
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        diff = np.where(self.categorical_, (a != b).astype(float), np.abs(a - b) / self.sd_)
        return float(self.scale * np.sqrt(np.sum(diff ** 2)))


class EmpiricalCdf(BaseEstimator):
    """Midpoint-rank percentiles of each free feature's training values."""

    def __init__(self, schema: FeatureSchema | None = None):
        self.schema = schema

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.n_ = X.shape[0]
        self.sorted_ = {}
        self.freq_ = {}
        for j in self.schema.free_indices:
            feat = self.schema[j]
            if feat.kind is Kind.CATEGORICAL:
                counts = np.bincount(X[:, j].astype(int), minlength=feat.n_categories)
                self.freq_[j] = counts / counts.sum()
            else:
                self.sorted_[j] = np.sort(X[:, j])
        return self

    def percentile(self, d: int, value) -> np.ndarray:
        check_is_fitted(self, "sorted_")
        if d in self.freq_:
            raise ValueError(f"feature {self.schema[d].name!r} is categorical and has no percentile")
        if d not in self.sorted_:
            raise ValueError(f"feature index {d} is not a free feature")
        v = self.sorted_[d]
        value = np.asarray(value, dtype=float)
        below = np.searchsorted(v, value, side="left")
        upto = np.searchsorted(v, value, side="right")
        return 100.0 * (below + 0.5 * (upto - below)) / len(v)

    def shifts(self, x, e) -> np.ndarray:
        """Absolute percentile shift per free feature; rows broadcast."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        e = np.atleast_2d(np.asarray(e, dtype=float))
        cols = []
        for j in self.schema.free_indices:
            if j in self.freq_:
                fx = self.freq_[j][x[:, j].astype(int)]
                fe = self.freq_[j][e[:, j].astype(int)]
                cols.append(np.where(x[:, j] == e[:, j], 0.0, 100.0 * np.abs(fe - fx)))
            else:
                cols.append(np.abs(self.percentile(j, e[:, j]) - self.percentile(j, x[:, j])))
        return np.column_stack(cols)


def percentile(q: EmpiricalCdf, d: int, value) -> float:
    return float(q.percentile(d, value))


def cost_total(x, e, q: EmpiricalCdf):
    out = q.shifts(x, e).sum(axis=1)
    return float(out[0]) if np.ndim(x) == 1 and np.ndim(e) == 1 else out


def cost_max(x, e, q: EmpiricalCdf):
    out = q.shifts(x, e).max(axis=1)
    return float(out[0]) if np.ndim(x) == 1 and np.ndim(e) == 1 else out


def total_shift(shifts) -> float:
    """Total percentile shift from precomputed per-feature shifts."""
    return float(np.sum(np.abs(shifts)))


def max_shift(shifts) -> float:
    return float(np.max(np.abs(shifts)))


def _pairwise(metric, A, B) -> np.ndarray:
    return np.array([[metric(a, b) for b in B] for a in A])


def proximity(e, reference, metric) -> float:
    """Distance from ``e`` to its nearest reference point ``a0`` over the distance
    from ``a0`` to the nearest reference point different from it.

    ``metric`` is any callable distance. Exact duplicates of ``a0`` are not
    "different", so discretized data does not produce zero denominators.
    Returns 0 when ``e`` coincides with a reference point and ``inf`` when every
    reference point equals ``a0``.
    """
    reference = np.atleast_2d(np.asarray(reference, dtype=float))
    if len(reference) < 2:
        raise ValueError("proximity needs at least 2 reference points")
    d_e = np.array([metric(e, r) for r in reference])
    i0 = int(np.argmin(d_e))
    num = d_e[i0]
    if num == 0:
        return 0.0
    d_a0 = np.array([metric(reference[i0], r) for r in reference])
    d_a0 = d_a0[d_a0 > 0]
    return float(num / d_a0.min()) if d_a0.size else float("inf")


def connectedness(e, label_e, reference, eps: float, metric, reference_labels=None) -> bool:
    """Breadth-first search for an ε-chain from ``e`` to a same-label reference point.

    Chain nodes are ``e`` and the reference rows; consecutive nodes must be
    strictly closer than ``eps``.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    reference = np.asarray(reference, dtype=float)
    if reference.size == 0:
        return False
    reference = np.atleast_2d(reference)
    labels = np.ones(len(reference), int) if reference_labels is None else np.asarray(reference_labels)
    target = labels == label_e
    if not target.any():
        return False
    seen = np.zeros(len(reference), bool)
    queue = deque()
    for k, r in enumerate(reference):
        if metric(e, r) < eps:
            seen[k] = True
            queue.append(k)
    while queue:
        k = queue.popleft()
        if target[k]:
            return True
        for m, r in enumerate(reference):
            if not seen[m] and metric(reference[k], r) < eps:
                seen[m] = True
                queue.append(m)
    return False


class ReferenceIndex:
    """KD-tree over embedded reference rows for batch proximity/connectedness."""

    def __init__(self, reference, metric: InputMetric, reference_labels=None):
        self.points = metric.embed(reference)
        self.metric = metric
        self.labels = (np.ones(len(self.points), int) if reference_labels is None
                       else np.asarray(reference_labels, int))
        self.tree = cKDTree(self.points)
        # points at distance 0 collapse for the outlier ratio (bitwise-distinct
        # rows can still underflow to 0); the chain graph keeps them all
        pts = np.unique(self.points, axis=0)
        pairs = cKDTree(pts).query_pairs(0.0, output_type="ndarray")
        if len(pairs):
            g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])),
                           shape=(len(pts), len(pts)))
            _, comp = connected_components(g, directed=False)
            _, first = np.unique(comp, return_index=True)
            pts = pts[np.sort(first)]
        self.unique_points = pts
        self.unique_tree = cKDTree(self.unique_points)
        self._components = {}

    def nn_distances(self) -> np.ndarray:
        """Distance from each distinct reference point to its nearest other one."""
        if len(self.unique_points) < 2:
            return np.full(len(self.unique_points), np.inf)
        d, _ = self.unique_tree.query(self.unique_points, k=2)
        return d[:, 1]

    def proximity(self, E) -> np.ndarray:
        if len(self.points) < 2:
            raise ValueError("proximity needs at least 2 reference points")
        emb = self.metric.embed(E)
        num, i0 = self.unique_tree.query(emb, k=1)
        den = self.nn_distances()[i0]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(num == 0, 0.0, num / den)
        return out

    def _component_targets(self, eps):
        if eps not in self._components:
            r = np.nextafter(eps, 0.0)
            pairs = self.tree.query_pairs(r, output_type="ndarray")
            n = len(self.points)
            g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
            _, comp = connected_components(g, directed=False)
            has = {lab: np.zeros(comp.max() + 1, bool) for lab in np.unique(self.labels)}
            for lab in has:
                has[lab][np.unique(comp[self.labels == lab])] = True
            self._components[eps] = (comp, has)
        return self._components[eps]

    def connected(self, E, labels_e, eps: float) -> np.ndarray:
        if eps <= 0:
            raise ValueError("eps must be > 0")
        comp, has = self._component_targets(eps)
        emb = self.metric.embed(E)
        labels_e = np.broadcast_to(np.asarray(labels_e, int), (len(emb),))
        r = np.nextafter(eps, 0.0)
        out = np.zeros(len(emb), bool)
        for i, nbrs in enumerate(self.tree.query_ball_point(emb, r)):
            if nbrs and labels_e[i] in has:
                out[i] = has[labels_e[i]][comp[nbrs]].any()
        return out


def default_eps_grid(reference, metric: InputMetric, quantiles=DEFAULT_EPS_QUANTILES) -> list[float]:
    """ε values at quantiles of within-reference nearest-neighbour distances
    (between distinct points)."""
    nn = ReferenceIndex(reference, metric).nn_distances()
    grid = np.quantile(nn, quantiles)
    return [float(g) for g in np.maximum(grid, np.finfo(float).eps)]


@dataclass
class EvalReport:
    """Per-counterfactual metrics plus aggregates."""

    proximity: np.ndarray
    connected: dict
    cost1: np.ndarray
    cost2: np.ndarray
    eps_grid: list = field(default_factory=list)

    def __len__(self):
        return len(self.proximity)

    @property
    def aggregates(self) -> dict:
        n = len(self)
        agg = {
            "n": n,
            "mean_proximity": float(np.mean(self.proximity)) if n else float("nan"),
            "frac_proximity_le_1": float(np.mean(self.proximity <= 1)) if n else float("nan"),
            "mean_cost1": float(np.mean(self.cost1)) if n else float("nan"),
            "median_cost1": float(np.median(self.cost1)) if n else float("nan"),
            "mean_cost2": float(np.mean(self.cost2)) if n else float("nan"),
            "median_cost2": float(np.median(self.cost2)) if n else float("nan"),
        }
        agg["frac_connected"] = {
            eps: float(np.mean(self.connected[eps])) if n else float("nan") for eps in self.eps_grid
        }
        return agg

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "proximity", "cost1", "cost2"]
                       + [f"connected_eps{k}" for k in range(len(self.eps_grid))])
            for i in range(len(self)):
                w.writerow([i, repr(float(self.proximity[i])), repr(float(self.cost1[i])),
                            repr(float(self.cost2[i]))]
                           + [int(self.connected[eps][i]) for eps in self.eps_grid])

    def aggregate_csv(self, path: str | Path) -> None:
        agg = self.aggregates
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["statistic", "eps", "value"])
            for key in ("n", "mean_proximity", "frac_proximity_le_1", "mean_cost1",
                        "median_cost1", "mean_cost2", "median_cost2"):
                w.writerow([key, "", repr(agg[key])])
            for eps in self.eps_grid:
                w.writerow(["frac_connected", repr(eps), repr(agg["frac_connected"][eps])])


def evaluate_batch(originals, explanations, reference, eps_grid, cdf: EmpiricalCdf,
                   metric: InputMetric, labels=None, reference_labels=None) -> EvalReport:
    """Score explanations ``explanations[i]`` of ``originals[i]``.

    ``labels`` are the classifier labels of the explanations (default 1, the
    label shared by the ``H+ ∩ D+`` reference set).
    """
    X = np.atleast_2d(np.asarray(originals, dtype=float))
    E = np.atleast_2d(np.asarray(explanations, dtype=float))
    if X.shape != E.shape:
        raise ValueError("originals and explanations must align")
    if len(E) == 0:
        raise ValueError("no counterfactuals to evaluate")
    index = ReferenceIndex(reference, metric, reference_labels)
    labels = np.ones(len(E), int) if labels is None else np.asarray(labels, int)
    eps_grid = [float(e) for e in eps_grid]
    shifts = cdf.shifts(X, E)
    return EvalReport(
        proximity=index.proximity(E),
        connected={eps: index.connected(E, labels, eps) for eps in eps_grid},
        cost1=shifts.sum(axis=1),
        cost2=shifts.max(axis=1),
        eps_grid=eps_grid,
    )
