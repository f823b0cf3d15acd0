"""Stochastic counterfactual search in the latent space of a trained CHVAE.

Around the latent code of an instance, candidates are drawn from growing
annuli ``{z : r <= ||z - z_hat||_p <= r + dr}``, decoded back to input space
with the protected features held fixed, and passed to the classifier. The
first annulus that produces a label flip ends the search; the flip closest
in latent space is returned.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import format_value
from .schema import FeatureSchema


def _norm(v, p) -> np.ndarray:
    return np.linalg.norm(np.atleast_2d(v), ord=np.inf if p in ("inf", np.inf) else p, axis=1)


def _check_order(p):
    if p in ("inf", float("inf")):
        return np.inf
    if p not in (1, 2):
        raise ValueError(f"norm order must be 1, 2 or inf, got {p!r}")
    return p


@dataclass
class SearchConfig:
    samples_per_ring: int = 100
    ring_width: float | None = None  # None: 0.1 x mean side length of the latent box
    norm_order: float = 2
    max_rings: int = 200
    seed: int = 0
    component: str = "prior"  # "prior": argmax_l p(c=l | z~); "fixed": argmax q(c | x)

    def __post_init__(self):
        if self.component not in ("prior", "fixed"):
            raise ValueError("component must be 'prior' or 'fixed'")
        self.norm_order = _check_order(self.norm_order)
        if self.samples_per_ring < 1:
            raise ValueError("samples_per_ring must be >= 1")
        if self.ring_width is not None and not self.ring_width > 0:
            raise ValueError("ring_width must be > 0")


@dataclass(frozen=True)
class LatentBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.lower) > np.asarray(self.upper)):
            raise ValueError("box lower bound exceeds upper bound")

    @classmethod
    def from_codes(cls, Z) -> "LatentBox":
        Z = np.atleast_2d(Z)
        return cls(Z.min(axis=0), Z.max(axis=0))

    @classmethod
    def from_model(cls, m) -> "LatentBox":
        return cls(m.latent_min_, m.latent_max_)

    def contains(self, Z) -> np.ndarray:
        Z = np.atleast_2d(Z)
        return np.all((Z >= self.lower) & (Z <= self.upper), axis=1)

    @property
    def mean_width(self) -> float:
        return float(np.mean(self.upper - self.lower))


@dataclass
class Counterfactual:
    x: np.ndarray
    e: np.ndarray
    z_hat: np.ndarray
    z_star: np.ndarray
    c_star: int
    radius: float
    y_before: int
    y_after: int
    norm_order: float = 2

    @property
    def latent_distance(self) -> float:
        """``||z_star - z_hat||_p``; for input-space searches the codes are the
        scaled free coordinates, so this is the input distance."""
        return float(_norm(self.z_star - self.z_hat, self.norm_order)[0])


def unit_directions(n: int, k: int, norm_order, rng) -> np.ndarray:
    """Directions uniform on the unit ``l_p`` sphere (cone measure).

    Draw i.i.d. coordinates with density ``~ exp(-|t|^p)`` and divide by the
    ``p``-norm: Gaussian for p=2, Laplace for p=1, uniform for p=inf.
    """
    p = _check_order(norm_order)
    if p == 2:
        g = rng.standard_normal((n, k))
    elif p == 1:
        g = rng.laplace(size=(n, k))
    else:
        g = rng.uniform(-1.0, 1.0, size=(n, k))
    nrm = _norm(g, p)
    while np.any(nrm == 0):  # measure-zero, but keep the division safe
        bad = nrm == 0
        g[bad] = rng.standard_normal((int(bad.sum()), k))
        nrm = _norm(g, p)
    return g / nrm[:, None]


def sample_annulus(center, r1: float, r2: float, count: int, norm_order=2, seed=None) -> np.ndarray:
    """``count`` points at uniform direction and radius ``U[r1, r2]`` around ``center``.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if r1 < 0 or r1 > r2:
        raise ValueError(f"need 0 <= r1 <= r2, got r1={r1}, r2={r2}")
    center = np.asarray(center, dtype=float).ravel()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dirs = unit_directions(count, center.size, norm_order, rng)
    radii = rng.uniform(r1, r2, size=count)
    return center + dirs * radii[:, None]


def latent_distance(m, x_i, x_j, norm_order=2) -> float:
    z = m.encode(np.vstack([x_i, x_j])).z
    return float(_norm(z[0] - z[1], _check_order(norm_order))[0])


def _search(f, m, x, cfg: SearchConfig, box: LatentBox, k: int, rng) -> list[Counterfactual]:
    x = np.asarray(x, dtype=float)
    code = m.encode(x[None])
    z_hat, c_star = code.z[0], int(code.c_star[0])
    y_before = int(f.predict(x[None])[0])
    p = cfg.norm_order
    dr = cfg.ring_width if cfg.ring_width is not None else 0.1 * box.mean_width
    if not dr > 0:
        raise ValueError("latent box is degenerate; set ring_width explicitly")
    found, seen = [], set()
    for ring in range(cfg.max_rings):
        r = ring * dr
        Z = sample_annulus(z_hat, r, r + dr, cfg.samples_per_ring, p, rng)
        inside = box.contains(Z)
        if not inside.any():
            break
        Z = Z[inside]
        comp = m.prior_component(Z) if cfg.component == "prior" else c_star
        E = m.decode_rows(Z, comp, x)
        y = np.asarray(f.predict(E))
        for j in np.flatnonzero(y != y_before):
            key = E[j].tobytes()
            if key in seen:
                continue
            seen.add(key)
            found.append(Counterfactual(
                x=x, e=E[j], z_hat=z_hat, z_star=Z[j],
                c_star=int(np.broadcast_to(comp, len(Z))[j]), radius=r + dr,
                y_before=y_before, y_after=int(y[j]), norm_order=p))
        if len(found) >= k:
            break
    # stable sort keeps sample order for ties
    found.sort(key=lambda cf: cf.latent_distance)
    return found[:k]


def _instance_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def find_counterfactual(f, m, x, cfg: SearchConfig, box: LatentBox | None = None,
                        index: int = 0) -> Counterfactual | None:
    """Closest label flip found by the ring search, or ``None`` if the search
    left the latent box or ran out of rings."""
    box = box if box is not None else LatentBox.from_model(m)
    res = _search(f, m, x, cfg, box, 1, _instance_rng(cfg.seed, index))
    return res[0] if res else None


def find_flipset(f, m, x, cfg: SearchConfig, box: LatentBox | None = None, k: int = 5,
                 index: int = 0) -> list[Counterfactual]:
    """Up to ``k`` distinct flips, nearest first; rings keep growing until ``k``
    are collected or the search terminates."""
    if k < 1:
        raise ValueError("k must be >= 1")
    box = box if box is not None else LatentBox.from_model(m)
    return _search(f, m, x, cfg, box, k, _instance_rng(cfg.seed, index))


class LatentCounterfactualSearch(BaseEstimator):
    """Estimator wrapper: ``fit`` records the latent box of the training data,
    ``explain`` runs the ring search for each row."""

    def __init__(self, classifier=None, model=None, samples_per_ring: int = 100,
                 ring_width: float | None = None, norm_order=2, max_rings: int = 200,
                 seed: int = 0, component: str = "prior", n_jobs: int | None = None):
        self.classifier = classifier
        self.model = model
        self.samples_per_ring = samples_per_ring
        self.ring_width = ring_width
        self.norm_order = norm_order
        self.max_rings = max_rings
        self.seed = seed
        self.component = component
        self.n_jobs = n_jobs

    @property
    def config(self) -> SearchConfig:
        return SearchConfig(self.samples_per_ring, self.ring_width, self.norm_order,
                            self.max_rings, self.seed, self.component)

    def fit(self, X, y=None):
        self.box_ = LatentBox.from_codes(self.model.transform(X))
        return self

    def explain(self, X, k: int = 1):
        """One result per row: a Counterfactual (or None) for ``k=1``, else a list."""
        check_is_fitted(self, "box_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        cfg = self.config
        run = (lambda i: _search(self.classifier, self.model, X[i], cfg, self.box_, k,
                                 _instance_rng(cfg.seed, i)))
        if self.n_jobs in (None, 1):
            results = [run(i) for i in range(len(X))]
        else:
            results = Parallel(n_jobs=self.n_jobs, prefer="threads")(
                delayed(run)(i) for i in range(len(X)))
        if k == 1:
            return [r[0] if r else None for r in results]
        return results


# ----------------------------------------------------------------------
# CSV exchange


def write_counterfactuals(path, schema: FeatureSchema, X, results, y_before=None) -> None:
    """One row per original; ``results[i]`` is a Counterfactual or None."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema.names + ["cf_" + n for n in schema.names]
                   + ["radius", "latent_distance", "y_before", "y_after", "found"])
        for i, (x, cf) in enumerate(zip(np.atleast_2d(X), results)):
            orig = [format_value(f, v) for f, v in zip(schema.features, x)]
            if cf is None:
                yb = "" if y_before is None else str(int(y_before[i]))
                w.writerow(orig + [""] * schema.n_features + ["", "", yb, "", 0])
                continue
            w.writerow(orig + [format_value(f, v) for f, v in zip(schema.features, cf.e)]
                       + [repr(float(cf.radius)),
                          "" if np.isnan(cf.latent_distance) else repr(cf.latent_distance),
                          cf.y_before, cf.y_after, 1])


@dataclass
class CounterfactualTable:
    X: np.ndarray
    E: np.ndarray  # NaN rows where not found
    found: np.ndarray
    y_after: np.ndarray


def read_counterfactuals(path, schema: FeatureSchema) -> CounterfactualTable:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"counterfactual file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = schema.names + ["cf_" + n for n in schema.names]
        if header[: len(expected)] != expected:
            raise ValueError(f"{path}: columns do not match the schema {schema.names}")
        D = schema.n_features
        X, E, found, y_after = [], [], [], []
        for rec in reader:
            X.append([float(v) for v in rec[:D]])
            ok = rec[header.index("found")] == "1"
            found.append(ok)
            E.append([float(v) for v in rec[D:2 * D]] if ok else [np.nan] * D)
            ya = rec[header.index("y_after")]
            y_after.append(int(ya) if ya else -1)
    return CounterfactualTable(np.array(X, float).reshape(-1, D), np.array(E, float).reshape(-1, D),
                               np.array(found, bool), np.array(y_after, int))
