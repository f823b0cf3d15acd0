"""Per-feature likelihood heads of the heterogeneous decoder.

Every head maps a block of raw decoder outputs to its distribution
parameters, scores targets under that distribution, and produces a
deterministic point estimate that respects the feature's domain.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

from .schema import DomainError, Feature, Kind

LOG_2PI = math.log(2 * math.pi)
MIN_SCALE = 1e-3
MIN_RATE = 1e-6
MIN_PROB = 1e-12


def _inv_softplus(y: float) -> float:
    y = max(float(y), 1e-6)
    return y + math.log(-math.expm1(-y))


def gaussian_log_prob(x, mean, std):
    return -0.5 * LOG_2PI - torch.log(std) - 0.5 * ((x - mean) / std) ** 2


def lognormal_log_prob(x, mean, std):
    logx = torch.log(x)
    return gaussian_log_prob(logx, mean, std) - logx


def poisson_log_prob(k, rate):
    return k * torch.log(rate) - rate - torch.lgamma(k + 1.0)


def categorical_log_prob(k, free_logits):
    """Multinomial logit with the first category's logit pinned to zero."""
    logits = F.pad(free_logits, (1, 0))
    return torch.gather(F.log_softmax(logits, dim=-1), -1, k.long().unsqueeze(-1)).squeeze(-1)


def ordinal_probs(location, thresholds):
    """Cumulative-link probabilities ``P(x = r)`` for ``r = 0..R-1``."""
    cdf = torch.sigmoid(thresholds - location.unsqueeze(-1))
    ones = torch.ones_like(cdf[..., :1])
    zeros = torch.zeros_like(cdf[..., :1])
    cdf = torch.cat([zeros, cdf, ones], dim=-1)
    return cdf[..., 1:] - cdf[..., :-1]


def ordinal_log_prob(k, location, thresholds):
    p = ordinal_probs(location, thresholds)
    p = torch.gather(p, -1, k.long().unsqueeze(-1)).squeeze(-1)
    return torch.log(torch.clamp(p, min=MIN_PROB))


class Head:
    """Likelihood head for one free feature.

    ``target`` values passed to :meth:`log_prob` are on the model scale:
    standardized for real features, natural scale otherwise.
    """

    n_outputs = 1

    def __init__(self, feature: Feature):
        self.feature = feature

    def init_bias(self, target: np.ndarray) -> np.ndarray:
        return np.zeros(self.n_outputs)

    def params(self, raw: torch.Tensor) -> dict:
        raise NotImplementedError

    def log_prob(self, params: dict, target: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def point(self, params: dict) -> torch.Tensor:
        raise NotImplementedError


class GaussianHead(Head):
    n_outputs = 2

    def params(self, raw):
        return {"mean": raw[..., 0], "std": F.softplus(raw[..., 1]) + MIN_SCALE}

    def init_bias(self, target):
        return np.array([target.mean(), _inv_softplus(max(target.std(), 0.1))])

    def log_prob(self, params, target):
        return gaussian_log_prob(target, params["mean"], params["std"])

    def point(self, params):
        return params["mean"]


class LogNormalHead(GaussianHead):
    def init_bias(self, target):
        return super().init_bias(np.log(target))

    def log_prob(self, params, target):
        return lognormal_log_prob(target, params["mean"], params["std"])

    def point(self, params):
        return torch.exp(params["mean"])


class PoissonHead(Head):
    n_outputs = 1

    def params(self, raw):
        return {"rate": F.softplus(raw[..., 0]) + MIN_RATE}

    def init_bias(self, target):
        return np.array([_inv_softplus(max(target.mean(), 0.1))])

    def log_prob(self, params, target):
        return poisson_log_prob(target, params["rate"])

    def point(self, params):
        return torch.clamp(torch.floor(params["rate"]), min=0.0)


class CategoricalHead(Head):
    def __init__(self, feature):
        super().__init__(feature)
        self.n_outputs = feature.n_categories - 1

    def params(self, raw):
        return {"logits": raw}

    def init_bias(self, target):
        freq = np.bincount(target.astype(int), minlength=self.feature.n_categories) + 1.0
        logf = np.log(freq / freq.sum())
        return logf[1:] - logf[0]

    def log_prob(self, params, target):
        return categorical_log_prob(target, params["logits"])

    def point(self, params):
        logits = F.pad(params["logits"], (1, 0))
        return torch.argmax(logits, dim=-1).to(params["logits"].dtype)


class OrdinalHead(Head):
    """Cumulative-link head; thresholds kept increasing via positive increments."""

    def __init__(self, feature):
        super().__init__(feature)
        self.n_outputs = feature.n_categories

    def params(self, raw):
        first = raw[..., 1:2]
        steps = F.softplus(raw[..., 2:]) + MIN_SCALE
        thresholds = torch.cumsum(torch.cat([first, steps], dim=-1), dim=-1)
        return {"location": raw[..., 0], "thresholds": thresholds}

    def init_bias(self, target):
        R = self.feature.n_categories
        freq = np.bincount(target.astype(int), minlength=R) + 1.0
        cdf = np.cumsum(freq / freq.sum())[:-1]
        theta = np.log(cdf / (1 - cdf))
        steps = np.maximum(np.diff(theta), 2 * MIN_SCALE) - MIN_SCALE
        return np.concatenate([[0.0, theta[0]], [_inv_softplus(s) for s in steps]])

    def log_prob(self, params, target):
        return ordinal_log_prob(target, params["location"], params["thresholds"])

    def point(self, params):
        p = ordinal_probs(params["location"], params["thresholds"])
        return torch.argmax(p, dim=-1).to(p.dtype)


HEADS = {
    Kind.REAL: GaussianHead,
    Kind.POSITIVE_REAL: LogNormalHead,
    Kind.COUNT: PoissonHead,
    Kind.CATEGORICAL: CategoricalHead,
    Kind.ORDINAL: OrdinalHead,
}


def make_head(feature: Feature) -> Head:
    return HEADS[feature.kind](feature)


def likelihood_logpdf(kind, params: dict, value: float, n_categories: int | None = None) -> float:
    """Exact log density / mass of ``value`` under one head's parameters.

    ``params`` keys by kind:

    * real, positive_real: ``mean``, ``std`` (log-space for positive_real)
    * count: ``rate``
    * categorical: ``logits`` for categories ``1..R-1`` (category 0 is pinned at 0)
    * ordinal: ``location``, ``thresholds`` (``R-1`` increasing cut points)
    """
    kind = Kind(kind)
    if kind is Kind.CATEGORICAL:
        n_categories = len(params["logits"]) + 1
    elif kind is Kind.ORDINAL:
        n_categories = len(params["thresholds"]) + 1
    feat = Feature("value", kind, n_categories=n_categories if kind.is_discrete else None)
    reason = feat.check_value(float(value))
    if reason:
        raise DomainError(f"{value!r}: {reason}")
    t = {k: torch.as_tensor(np.asarray(v, dtype=float)) for k, v in params.items()}
    x = torch.tensor(float(value), dtype=torch.float64)
    if kind is Kind.REAL:
        out = gaussian_log_prob(x, t["mean"], t["std"])
    elif kind is Kind.POSITIVE_REAL:
        out = lognormal_log_prob(x, t["mean"], t["std"])
    elif kind is Kind.COUNT:
        out = poisson_log_prob(x, t["rate"])
    elif kind is Kind.CATEGORICAL:
        out = categorical_log_prob(x, t["logits"])
    else:
        out = ordinal_log_prob(x, t["location"], t["thresholds"])
    return float(out)
