"""Conditional heterogeneous VAE with a uniform Gaussian-mixture prior.

Generative model for the free features given the protected ones::

    c ~ Cat(1/L)                      (independent of x_p)
    z | c ~ N(mu_p[c], I_K)
    x_f[d] | z, c, x_p ~ head_d(decoder(z, onehot(c), x_p))

Inference model::

    q(c | x_f, x_p) = Cat(softmax(.))
    q(z | x_f, x_p, c) = N(mu_q, diag(sigma_q^2))

The ELBO sums the expectation over ``c`` exactly across all L components and
reparameterizes ``z``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted
from torch import nn
from torch.nn import functional as F

from .data import Dataset
from .likelihoods import make_head
from .preprocessing import ColumnStandardizer
from .schema import FeatureSchema, Kind

logger = logging.getLogger(__name__)

DTYPE = torch.float64
MODEL_FORMAT = "cchvae.chvae"
MODEL_VERSION = 1


class ModelFileError(ValueError):
    pass


class ModelVersionError(ModelFileError):
    pass


@dataclass
class ChvaeConfig:
    latent_dim: int = 2
    n_components: int = 3
    hidden_sizes: tuple = (64, 64)
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if self.latent_dim < 1 or self.n_components < 1 or self.epochs < 1:
            raise ValueError("latent_dim, n_components and epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class LatentCode:
    z: np.ndarray
    c_probs: np.ndarray
    c_star: np.ndarray


def _mlp(sizes, out=None):
    layers = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        layers += [nn.Linear(a, b, dtype=DTYPE), nn.Tanh()]
    if out is not None:
        layers.append(nn.Linear(sizes[-1], out, dtype=DTYPE))
    return nn.Sequential(*layers)


class _Network(nn.Module):
    def __init__(self, in_dim, prot_dim, head_sizes, latent_dim, n_components, hidden):
        super().__init__()
        self.latent_dim = latent_dim
        self.n_components = n_components
        self.enc_trunk = _mlp([in_dim, *hidden])
        self.enc_c = nn.Linear(hidden[-1], n_components, dtype=DTYPE)
        self.enc_z = nn.Linear(hidden[-1] + n_components, 2 * latent_dim, dtype=DTYPE)
        self.prior_means = nn.Parameter(torch.randn(n_components, latent_dim, dtype=DTYPE))
        self.dec = _mlp([latent_dim + n_components + prot_dim, *hidden], out=sum(head_sizes))
        self.head_sizes = list(head_sizes)

    def encode(self, x_in):
        """Return ``(log q(c|x) [B,L], mu [B,L,K], std [B,L,K])``."""
        h = self.enc_trunk(x_in)
        log_qc = F.log_softmax(self.enc_c(h), dim=-1)
        B, L = h.shape[0], self.n_components
        eye = torch.eye(L, dtype=h.dtype).expand(B, L, L)
        hz = torch.cat([h.unsqueeze(1).expand(B, L, h.shape[1]), eye], dim=-1)
        out = self.enc_z(hz)
        mu, pre = out[..., : self.latent_dim], out[..., self.latent_dim:]
        return log_qc, mu, F.softplus(pre) + 1e-6

    def decode(self, z, c_onehot, xp_in):
        raw = self.dec(torch.cat([z, c_onehot, xp_in], dim=-1))
        return torch.split(raw, self.head_sizes, dim=-1)


class CHVAE(TransformerMixin, BaseEstimator):
    """Conditional heterogeneous VAE estimator.

    ``fit`` takes raw rows laid out per ``schema``; ``transform`` returns the
    deterministic latent code (posterior mean under the most likely
    component). Real columns are standardized internally and restored on
    decode.
    """

    def __init__(self, schema: FeatureSchema | None = None, latent_dim: int = 2,
                 n_components: int = 3, hidden_sizes=(64, 64), epochs: int = 50,
                 batch_size: int = 64, learning_rate: float = 1e-3, seed: int = 0,
                 verbose: bool = False):
        self.schema = schema
        self.latent_dim = latent_dim
        self.n_components = n_components
        self.hidden_sizes = hidden_sizes
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.verbose = verbose

    # ------------------------------------------------------------------
    @property
    def config(self) -> ChvaeConfig:
        return ChvaeConfig(self.latent_dim, self.n_components, tuple(self.hidden_sizes),
                           self.epochs, self.batch_size, self.learning_rate, self.seed)

    def _check_rows(self, X) -> np.ndarray:
        X = check_array(X, dtype=np.float64, ensure_all_finite=True)
        if X.shape[1] != self.schema.n_features:
            raise ValueError(
                f"rows have {X.shape[1]} features, schema has {self.schema.n_features}")
        return X

    def _setup(self, X):
        schema = self.schema
        self.free_idx_ = schema.free_indices
        self.prot_idx_ = schema.protected_indices
        self.standardizer_ = ColumnStandardizer(schema).fit(X)
        # encoder input statistics for numeric kinds, computed on a log scale
        # for positive reals and counts
        num = self._numeric_view(X)
        numeric = ~np.isnan(num).all(axis=0)
        self.input_mean_ = np.zeros(X.shape[1])
        self.input_scale_ = np.ones(X.shape[1])
        if numeric.any():
            self.input_mean_[numeric] = num[:, numeric].mean(axis=0)
            sd = num[:, numeric].std(axis=0)
            self.input_scale_[numeric] = np.where(sd > 1e-12, sd, 1.0)
        self.heads_ = [make_head(schema[j]) for j in self.free_idx_]

    def _numeric_view(self, X, idx=None):
        out = np.full(X.shape, np.nan)
        for j in range(X.shape[1]) if idx is None else idx:
            feat = self.schema[j]
            if feat.kind is Kind.REAL:
                out[:, j] = X[:, j]
            elif feat.kind is Kind.POSITIVE_REAL:
                out[:, j] = np.log(X[:, j])
            elif feat.kind is Kind.COUNT:
                out[:, j] = np.log1p(X[:, j])
        return out

    def _encode_inputs(self, X, idx) -> np.ndarray:
        num = (self._numeric_view(X, idx) - self.input_mean_) / self.input_scale_
        blocks = []
        for j in idx:
            feat = self.schema[j]
            if feat.kind.is_discrete:
                blocks.append(np.eye(feat.n_categories)[X[:, j].astype(int)])
            else:
                blocks.append(num[:, j:j + 1])
        if not blocks:
            return np.zeros((X.shape[0], 0))
        return np.hstack(blocks)

    def _targets(self, X) -> np.ndarray:
        """Free features on the likelihood scale (real columns standardized)."""
        return self.standardizer_.transform(X)[:, self.free_idx_]

    def _tensors(self, X):
        x_in = torch.as_tensor(self._encode_inputs(X, range(self.schema.n_features)), dtype=DTYPE)
        xp_in = torch.as_tensor(self._encode_inputs(X, self.prot_idx_), dtype=DTYPE)
        tgt = torch.as_tensor(self._targets(X), dtype=DTYPE)
        return x_in, xp_in, tgt

    def _build(self, X):
        torch.manual_seed(self.seed)
        x_in, xp_in, tgt = self._tensors(X[:1])
        net = _Network(x_in.shape[1], xp_in.shape[1], [h.n_outputs for h in self.heads_],
                       self.latent_dim, self.n_components, tuple(self.hidden_sizes))
        # data-dependent output biases so every head starts at the marginal
        targets = self._targets(X)
        bias = np.concatenate([h.init_bias(targets[:, i]) for i, h in enumerate(self.heads_)])
        with torch.no_grad():
            net.dec[-1].bias.copy_(torch.as_tensor(bias, dtype=DTYPE))
        return net

    # ------------------------------------------------------------------
    def _elbo_terms(self, x_in, xp_in, tgt, eps, net=None):
        """Per-row ``(elbo, recon, kl_z, kl_c)`` with fixed noise ``eps`` [B,L,K]."""
        net = self.module_ if net is None else net
        log_qc, mu, std = net.encode(x_in)
        qc = log_qc.exp()
        B, L, K = mu.shape
        z = mu + std * eps
        onehot = torch.eye(L, dtype=DTYPE).expand(B, L, L)
        xp_rep = xp_in.unsqueeze(1).expand(B, L, xp_in.shape[1])
        raws = net.decode(z, onehot, xp_rep)
        recon_l = torch.zeros(B, L, dtype=DTYPE)
        for d, (head, raw) in enumerate(zip(self.heads_, raws)):
            recon_l = recon_l + head.log_prob(head.params(raw), tgt[:, d].unsqueeze(1).expand(B, L))
        recon = (qc * recon_l).sum(-1)
        prior_mu = net.prior_means.unsqueeze(0)
        kl_zl = 0.5 * (std ** 2 + (mu - prior_mu) ** 2 - 1.0 - 2.0 * torch.log(std)).sum(-1)
        kl_z = (qc * kl_zl).sum(-1)
        kl_c = (qc * (log_qc + np.log(L))).sum(-1)
        return recon - kl_z - kl_c, recon, kl_z, kl_c

    def fit(self, X, y=None):
        if self.schema is None:
            raise ValueError("CHVAE needs a schema")
        X = self._check_rows(X)
        self.schema.validate(X)
        self.config  # validates hyper-parameters
        self._setup(X)
        self.module_ = self._build(X)
        x_in, xp_in, tgt = self._tensors(X)
        gen = torch.Generator().manual_seed(self.seed)
        opt = torch.optim.Adam(self.module_.parameters(), lr=self.learning_rate)
        n = X.shape[0]
        bs = min(self.batch_size, n)
        trace = []
        for epoch in range(self.epochs):
            perm = torch.randperm(n, generator=gen)
            sums = np.zeros(4)
            for b, start in enumerate(range(0, n, bs)):
                idx = perm[start:start + bs]
                eps = torch.randn(len(idx), self.n_components, self.latent_dim,
                                  generator=gen, dtype=DTYPE)
                terms = self._elbo_terms(x_in[idx], xp_in[idx], tgt[idx], eps)
                elbo = terms[0].mean()
                if not torch.isfinite(elbo):
                    raise FloatingPointError(
                        f"non-finite ELBO at epoch {epoch}, batch {b}")
                opt.zero_grad()
                (-elbo).backward()
                opt.step()
                sums += len(idx) * np.array([t.detach().mean().item() for t in terms])
            row = dict(zip(("elbo", "recon", "kl_z", "kl_c"), sums / n))
            trace.append({"epoch": epoch + 1, **row})
            if self.verbose:
                logger.info("epoch %d elbo %.4f", epoch + 1, row["elbo"])
        self.elbo_trace_ = trace
        self.module_.eval()
        self._compute_latent_box(X)
        return self

    def _compute_latent_box(self, X):
        Z = self.encode(X).z
        self.latent_min_ = Z.min(axis=0)
        self.latent_max_ = Z.max(axis=0)

    # ------------------------------------------------------------------
    def encode(self, X) -> LatentCode:
        check_is_fitted(self, "module_")
        X = self._check_rows(X)
        x_in = torch.as_tensor(self._encode_inputs(X, range(self.schema.n_features)), dtype=DTYPE)
        with torch.no_grad():
            log_qc, mu, _ = self.module_.encode(x_in)
        probs = log_qc.exp().numpy()
        c_star = probs.argmax(axis=1)
        z = mu.numpy()[np.arange(len(X)), c_star]
        return LatentCode(z=z, c_probs=probs, c_star=c_star)

    def prior_component(self, z) -> np.ndarray:
        """Most probable mixture component of latent codes under the prior,
        ``argmax_l N(z; mu_p[l], I)`` (the weights are uniform)."""
        check_is_fitted(self, "module_")
        z = np.atleast_2d(np.asarray(z, dtype=float))
        mu = self.module_.prior_means.detach().numpy()
        d2 = ((z[:, None, :] - mu[None]) ** 2).sum(-1)
        return d2.argmin(axis=1)

    def transform(self, X) -> np.ndarray:
        return self.encode(X).z

    def decode(self, z, c, x_p) -> np.ndarray:
        """Point-estimate free features for latent codes ``z`` under component ``c``.

        ``z`` is [n, K] (or [K]); ``c`` a component index or [n] array;
        ``x_p`` the raw protected features, [n, D_p] or [D_p].
        """
        check_is_fitted(self, "module_")
        z = np.atleast_2d(np.asarray(z, dtype=float))
        n = z.shape[0]
        if z.shape[1] != self.latent_dim or not np.isfinite(z).all():
            raise ValueError("z must be finite with latent_dim columns")
        c = np.broadcast_to(np.asarray(c, dtype=int), (n,))
        if (c < 0).any() or (c >= self.n_components).any():
            raise ValueError("component index out of range")
        n_prot = len(self.prot_idx_)
        x_p = np.asarray(x_p, dtype=float)
        x_p = np.broadcast_to(x_p.reshape(-1, n_prot) if n_prot else np.zeros((n, 0)), (n, n_prot))
        full = np.zeros((n, self.schema.n_features))
        full[:, self.prot_idx_] = x_p
        xp_in = torch.as_tensor(self._encode_inputs(full, self.prot_idx_), dtype=DTYPE)
        onehot = torch.as_tensor(np.eye(self.n_components)[c], dtype=DTYPE)
        with torch.no_grad():
            raws = self.module_.decode(torch.as_tensor(z, dtype=DTYPE), onehot, xp_in)
            pts = torch.stack([h.point(h.params(r)) for h, r in zip(self.heads_, raws)], -1)
        full[:, self.free_idx_] = pts.numpy()
        # only the free columns are read back, so un-standardizing the raw
        # protected ones in ``full`` is harmless
        free = self.standardizer_.inverse_transform(full)[:, self.free_idx_]
        for i, j in enumerate(self.free_idx_):
            if self.schema[j].kind is Kind.POSITIVE_REAL:
                free[:, i] = np.maximum(free[:, i], np.finfo(float).tiny)
        return free

    def decode_rows(self, z, c, x) -> np.ndarray:
        """Full rows: protected features copied from ``x``, free ones decoded."""
        x = np.asarray(x, dtype=float)
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = np.broadcast_to(x, (z.shape[0], x.shape[-1])).copy()
        out[:, self.free_idx_] = self.decode(z, c, x[..., self.prot_idx_])
        return out

    def inverse_transform(self, Z, X):
        """Decode ``Z`` under each row's own most likely component, keeping X's protected features."""
        code = self.encode(X)
        out = np.array(X, dtype=float, copy=True)
        for i in range(len(out)):
            out[i] = self.decode_rows(Z[i], code.c_star[i], X[i])[0]
        return out

    def reconstruct(self, X) -> np.ndarray:
        X = self._check_rows(X)
        code = self.encode(X)
        out = X.copy()
        out[:, self.free_idx_] = self.decode(code.z, code.c_star, X[:, self.prot_idx_])
        return out

    # ------------------------------------------------------------------
    def elbo_terms(self, X, seed: int = 0) -> dict:
        """Batch-mean ELBO and its parts, one reparameterized sample per component."""
        check_is_fitted(self, "module_")
        X = self._check_rows(X)
        x_in, xp_in, tgt = self._tensors(X)
        gen = torch.Generator().manual_seed(seed)
        eps = torch.randn(len(X), self.n_components, self.latent_dim, generator=gen, dtype=DTYPE)
        with torch.no_grad():
            terms = self._elbo_terms(x_in, xp_in, tgt, eps)
        return dict(zip(("elbo", "recon", "kl_z", "kl_c"), (float(t.mean()) for t in terms)))

    def score(self, X, y=None) -> float:
        return self.elbo_terms(X)["elbo"]

    # ------------------------------------------------------------------
    def to_dict(self) -> dict:
        check_is_fitted(self, "module_")
        state = {k: {"shape": list(v.shape), "data": v.detach().reshape(-1).tolist()}
                 for k, v in self.module_.state_dict().items()}
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "config": {**asdict(self.config), "hidden_sizes": list(self.hidden_sizes)},
            "schema": self.schema.to_dict(),
            "standardizer": self.standardizer_.to_dict(),
            "input_mean": self.input_mean_.tolist(),
            "input_scale": self.input_scale_.tolist(),
            "latent_min": self.latent_min_.tolist(),
            "latent_max": self.latent_max_.tolist(),
            "elbo_trace": self.elbo_trace_,
            "arrays": state,
        }

    @classmethod
    def from_dict(cls, d: dict, expect: dict | None = None) -> "CHVAE":
        if d.get("format") != MODEL_FORMAT:
            raise ModelFileError("not a CHVAE model file")
        if d.get("version") != MODEL_VERSION:
            raise ModelVersionError(f"unsupported model version {d.get('version')}")
        cfg = d["config"]
        for key, val in (expect or {}).items():
            stored = cfg.get(key)
            if key == "hidden_sizes":
                stored, val = list(stored), list(val)
            if stored != val:
                raise ModelVersionError(f"model {key}={stored!r} but {val!r} was expected")
        schema = FeatureSchema.from_dict(d["schema"])
        m = cls(schema=schema, **cfg)
        m.free_idx_ = schema.free_indices
        m.prot_idx_ = schema.protected_indices
        m.standardizer_ = ColumnStandardizer.from_dict(schema, d["standardizer"])
        m.input_mean_ = np.array(d["input_mean"], dtype=float)
        m.input_scale_ = np.array(d["input_scale"], dtype=float)
        m.heads_ = [make_head(schema[j]) for j in m.free_idx_]
        x0 = np.ones((1, schema.n_features))  # in every kind's domain
        in_dim = m._encode_inputs(x0, range(schema.n_features)).shape[1]
        prot_dim = m._encode_inputs(x0, m.prot_idx_).shape[1]
        net = _Network(in_dim, prot_dim, [h.n_outputs for h in m.heads_],
                       m.latent_dim, m.n_components, tuple(m.hidden_sizes))
        expected = net.state_dict()
        state = {}
        for k, ref in expected.items():
            if k not in d["arrays"]:
                raise ModelFileError(f"missing array {k!r}")
            a = d["arrays"][k]
            if list(a["shape"]) != list(ref.shape):
                raise ModelVersionError(
                    f"array {k!r} has shape {a['shape']}, config implies {list(ref.shape)}")
            state[k] = torch.tensor(a["data"], dtype=DTYPE).reshape(ref.shape)
        net.load_state_dict(state)
        net.eval()
        m.module_ = net
        m.latent_min_ = np.array(d["latent_min"], dtype=float)
        m.latent_max_ = np.array(d["latent_max"], dtype=float)
        m.elbo_trace_ = d.get("elbo_trace", [])
        return m


# ----------------------------------------------------------------------
# functional surface


def train_chvae(train: Dataset, config: ChvaeConfig | None = None, **kwargs) -> CHVAE:
    config = config or ChvaeConfig()
    params = {**asdict(config), **kwargs}
    return CHVAE(schema=train.schema, **params).fit(train.X)


def encode(m: CHVAE, x) -> LatentCode:
    x = np.asarray(x, dtype=float)
    code = m.encode(np.atleast_2d(x))
    if x.ndim == 1:
        return LatentCode(code.z[0], code.c_probs[0], int(code.c_star[0]))
    return code


def decode(m: CHVAE, z, c, x_p) -> np.ndarray:
    out = m.decode(z, c, x_p)
    return out[0] if np.ndim(z) == 1 else out


def elbo(m: CHVAE, batch, seed: int = 0) -> float:
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    if len(batch) == 0:
        raise ValueError("empty batch")
    return m.elbo_terms(batch, seed)["elbo"]


def save_model(m: CHVAE, path: str | Path) -> None:
    Path(path).write_text(json.dumps(m.to_dict()) + "\n", encoding="utf-8")


def load_model(path: str | Path, expect: dict | None = None) -> CHVAE:
    """Load a model file; ``expect`` pins config keys (e.g. ``{"latent_dim": 6}``)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFileError(f"corrupt model file {path}: {exc}") from exc
    try:
        return CHVAE.from_dict(d, expect=expect)
    except (KeyError, TypeError, RuntimeError) as exc:
        raise ModelFileError(f"corrupt model file {path}: {exc}") from exc


def write_elbo_trace(m: CHVAE, path: str | Path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "elbo", "recon", "kl_z", "kl_c"])
        for row in m.elbo_trace_:
            w.writerow([row["epoch"]] + [repr(row[k]) for k in ("elbo", "recon", "kl_z", "kl_c")])


# ----------------------------------------------------------------------
# gradient verification


def check_gradient(fn, params, probes: int = 50, h: float = 1e-5, seed: int = 0) -> float:
    """Worst relative error between autograd and central differences.

    ``fn`` is a zero-argument closure returning a scalar tensor that depends
    on the tensors in ``params``. ``probes`` scalar coordinates are drawn at
    random (proportionally to tensor size).
    """
    params = [p for p in params if p.requires_grad]
    for p in params:
        p.grad = None
    fn().backward()
    grads = [p.grad.detach().clone() for p in params]
    sizes = np.array([p.numel() for p in params], dtype=float)
    rng = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for _ in range(probes):
            k = rng.choice(len(params), p=sizes / sizes.sum())
            i = int(rng.integers(params[k].numel()))
            flat = params[k].view(-1)
            orig = flat[i].item()
            flat[i] = orig + h
            f_plus = fn().item()
            flat[i] = orig - h
            f_minus = fn().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2 * h)
            analytic = grads[k].view(-1)[i].item()
            denom = max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def grad_check(m: CHVAE, batch, probes: int = 50, h: float = 1e-5, seed: int = 0) -> float:
    """Check the ELBO gradient of ``m`` on ``batch`` with the noise held fixed."""
    batch = m._check_rows(np.atleast_2d(batch))
    x_in, xp_in, tgt = m._tensors(batch)
    gen = torch.Generator().manual_seed(seed)
    eps = torch.randn(len(batch), m.n_components, m.latent_dim, generator=gen, dtype=DTYPE)

    def fn():
        return m._elbo_terms(x_in, xp_in, tgt, eps)[0].mean()

    return check_gradient(fn, list(m.module_.parameters()), probes=probes, h=h, seed=seed)
