"""Acceptance criteria, one test per criterion.

Each test records a one-line PASS/FAIL/SKIP verdict that is printed in the
pytest terminal summary (see ``conftest.py``). Criteria 3 and 4 need the
public GMSC and HELOC CSVs; point ``CCHVAE_DATA_DIR`` at a directory holding
``cs-training.csv`` and ``heloc_dataset_v1.csv`` to run them.

    pytest tests/test_acceptance.py
"""

import copy
import csv
import functools
import os
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from cchvae import chvae as C
from cchvae.baselines import GrowingSpheres
from cchvae.classifier import train_logreg
from cchvae.cli import evaluate, explain, train
from cchvae.config import ExperimentConfig
from cchvae.data import load_csv
from cchvae.evaluation import (EmpiricalCdf, InputMetric, ReferenceIndex, connectedness, cost_max,
                               cost_total, proximity)
from cchvae.schema import Feature, FeatureSchema, Kind, load_schema
from cchvae.search import (LatentCounterfactualSearch, SearchConfig, find_flipset,
                           read_counterfactuals, sample_annulus)

from conftest import gen_mixed

RESULTS: dict[int, str] = {}


def criterion(number: int, title: str):
    """Record the outcome of a criterion test under ``RESULTS[number]``."""
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except pytest.skip.Exception as exc:
                RESULTS[number] = f"SKIP criterion {number}: {title} ({exc.msg})"
                raise
            except AssertionError as exc:
                msg = str(exc).splitlines()[0] if str(exc) else "assertion failed"
                RESULTS[number] = f"FAIL criterion {number}: {title}: {msg}"
                raise
            RESULTS[number] = f"PASS criterion {number}: {title}" + (f": {detail}" if detail else "")
        return run
    return wrap


def run_pipeline(cfg: ExperimentConfig) -> list[dict]:
    train(cfg)
    explain(cfg, "cchvae")
    explain(cfg, "gs")
    with open(evaluate(cfg), newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def by_method(rows, method):
    return [r for r in rows if r["method"] == method]


@pytest.fixture(scope="module")
def blobs_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("blobs")
    cfg = ExperimentConfig.load("builtin:blobs").with_overrides(output_dir=out)
    return cfg, run_pipeline(cfg)


# ---------------------------------------------------------------------------


@criterion(1, "synthetic faithfulness on blobs")
def test_criterion_1_synthetic_faithfulness(blobs_run):
    cfg, rows = blobs_run
    c = cfg.chvae_config()
    assert (cfg["dataset"]["n"], c.latent_dim, c.n_components, c.epochs) == (10000, 2, 3, 50)
    ours, gs = by_method(rows, "cchvae")[0], by_method(rows, "gs")[0]
    p_ours, p_gs = float(ours["mean_proximity"]), float(gs["mean_proximity"])
    f_ours, f_gs = float(ours["frac_proximity_le_1"]), float(gs["frac_proximity_le_1"])
    detail = (f"mean proximity {p_ours:.3f} vs GS {p_gs:.3f}; "
              f"share <= 1 {f_ours:.1%} vs GS {f_gs:.1%} "
              f"(found {ours['n_found']}/{ours['n_explained']} vs {gs['n_found']}/{gs['n_explained']})")
    assert p_ours < p_gs, detail
    assert f_ours - f_gs >= 0.10, detail
    return detail


@criterion(2, "synthetic heterogeneity on discretized moons")
def test_criterion_2_heterogeneity(tmp_path):
    cfg = ExperimentConfig.load("builtin:moons").with_overrides(output_dir=tmp_path)
    train(cfg)
    path = explain(cfg, "cchvae")
    schema = load_schema(tmp_path / "schema.json")
    tab = read_counterfactuals(path, schema)
    tr = load_csv(tmp_path / "train.csv", schema)
    assert tab.found.any(), "no counterfactuals found"
    cats = tab.E[tab.found, 1]
    assert np.all(np.isin(cats, np.arange(19))), "category outside {0..18}"
    populated = set(np.unique(tr.X[tr.y == 1, 1]).astype(int))
    used = {int(c) for c in cats}
    assert used <= populated, f"categories {sorted(used - populated)} have no positive training rows"
    return f"{int(tab.found.sum())} counterfactuals in categories {sorted(used)}"


def _real_data_run(name: str, filename: str, tmp_path) -> tuple[list[dict], list[float]]:
    root = os.environ.get("CCHVAE_DATA_DIR")
    if not root or not (Path(root) / filename).exists():
        pytest.skip(f"set CCHVAE_DATA_DIR to a directory containing {filename}")
    base = ExperimentConfig.load(f"builtin:{name}")
    data = copy.deepcopy(base.data)
    data["dataset"]["csv"] = str(Path(root) / filename)
    data["output_dir"] = str(tmp_path)
    data["n_jobs"] = -1
    cfg = ExperimentConfig(data)
    rows = run_pipeline(cfg)
    eps = sorted({float(r["eps"]) for r in rows})
    return rows, eps


def _per_eps(rows, method, key):
    return {float(r["eps"]): float(r[key]) for r in by_method(rows, method)}


@criterion(3, "GMSC ordinal reproduction")
def test_criterion_3_gmsc(tmp_path):
    rows, eps = _real_data_run("gmsc", "cs-training.csv", tmp_path)
    ours, gs = by_method(rows, "cchvae")[0], by_method(rows, "gs")[0]
    conn_o, conn_g = _per_eps(rows, "cchvae", "frac_connected"), _per_eps(rows, "gs", "frac_connected")
    gaps = [conn_o[e] - conn_g[e] for e in eps]
    detail = (f"proximity {float(ours['mean_proximity']):.3f} vs {float(gs['mean_proximity']):.3f}; "
              f"connected gaps {[round(g, 3) for g in gaps]}; cost1 {float(ours['mean_cost1']):.1f} "
              f"vs {float(gs['mean_cost1']):.1f}; cost2 {float(ours['mean_cost2']):.1f} "
              f"vs {float(gs['mean_cost2']):.1f}")
    assert float(ours["mean_proximity"]) < float(gs["mean_proximity"]), detail
    assert all(g > 0 for g in gaps), detail
    assert max(gaps) >= 0.10, detail
    assert float(ours["mean_cost1"]) >= float(gs["mean_cost1"]), detail
    assert float(ours["mean_cost2"]) >= float(gs["mean_cost2"]), detail
    return detail


@criterion(4, "HELOC ordinal reproduction")
def test_criterion_4_heloc(tmp_path):
    rows, eps = _real_data_run("heloc", "heloc_dataset_v1.csv", tmp_path)
    ours, gs = by_method(rows, "cchvae")[0], by_method(rows, "gs")[0]
    conn_o, conn_g = _per_eps(rows, "cchvae", "frac_connected"), _per_eps(rows, "gs", "frac_connected")
    detail = (f"proximity {float(ours['mean_proximity']):.3f} vs {float(gs['mean_proximity']):.3f}; "
              f"connected {[round(conn_o[e] - conn_g[e], 3) for e in eps]}; "
              f"cost2 {float(ours['mean_cost2']):.1f} vs {float(gs['mean_cost2']):.1f}")
    assert float(ours["mean_proximity"]) < float(gs["mean_proximity"]), detail
    assert all(conn_o[e] > conn_g[e] for e in eps), detail
    assert float(ours["mean_cost2"]) >= float(gs["mean_cost2"]), detail
    return detail


@criterion(5, "validity and invariance")
def test_criterion_5_validity(mixed_data, mixed_model, blobs_run):
    tr, te = mixed_data
    f = train_logreg(tr)
    neg = te.X[f.predict(te.X) == 0]
    cfs = [r for r in LatentCounterfactualSearch(f, mixed_model, samples_per_ring=50).fit(tr.X)
           .explain(neg) if r is not None]
    cfs += [r for r in GrowingSpheres(f, tr.schema, samples_per_ring=100).fit(tr.X).explain(neg)
            if r is not None]
    cfg = SearchConfig(samples_per_ring=50)
    for i, x in enumerate(neg[:5]):
        cfs += find_flipset(f, mixed_model, x, cfg, k=3, index=i)
    assert cfs
    prot = tr.schema.protected_indices
    E = np.array([cf.e for cf in cfs])
    Xs = np.array([cf.x for cf in cfs])
    assert np.all(f.predict(E) == 1), "label not flipped"
    assert np.array_equal(E[:, prot], Xs[:, prot]), "protected feature changed"
    tr.schema.validate(E)

    # the blobs run: every found row flips the indicator classifier and is in-domain
    bcfg, _ = blobs_run
    schema = load_schema(bcfg.output_dir / "schema.json")
    n_blobs = 0
    for method in ("cchvae", "gs"):
        tab = read_counterfactuals(bcfg.output_dir / f"counterfactuals_{method}.csv", schema)
        assert np.all(tab.E[tab.found, 1] > 6) and np.all(tab.y_after[tab.found] == 1)
        schema.validate(tab.E[tab.found])
        n_blobs += int(tab.found.sum())

    two = FeatureSchema((Feature("a", Kind.REAL), Feature("b", Kind.REAL)))
    grid = np.arange(1.0, 101.0)
    q = EmpiricalCdf(two).fit(np.column_stack([grid, grid]))
    pairs = [((55, 45), (75, 65), 40, 20), ((40, 85), (95, 65), 75, 55)]
    for x, e, total, mx in pairs:
        x, e = np.array(x) + 0.5, np.array(e) + 0.5  # midpoint percentile of v + 0.5 is v
        assert cost_total(x, e, q) == total and cost_max(x, e, q) == mx
    return f"{len(cfs)} mixed-schema and {n_blobs} blobs counterfactuals valid; cost arithmetic exact"


@criterion(6, "numerics")
def test_criterion_6_numerics(mixed_data, mixed_model, blobs_run):
    tr, _ = mixed_data
    err = C.grad_check(mixed_model, tr.X[:64], probes=50)
    assert err < 1e-4, f"grad_check relative error {err:.2e}"
    for start in range(0, len(tr), 50):
        t = mixed_model.elbo_terms(tr.X[start:start + 50], seed=start)
        assert t["kl_z"] >= 0 and t["kl_c"] >= 0, f"negative KL at batch {start}"
    assert all(r["kl_z"] >= 0 and r["kl_c"] >= 0 for r in mixed_model.elbo_trace_)

    single = C.CHVAE(tr.schema, latent_dim=2, n_components=1, hidden_sizes=(16,), epochs=2).fit(tr.X)
    assert all(r["kl_c"] == 0.0 for r in single.elbo_trace_)
    assert single.elbo_terms(tr.X, seed=1)["kl_c"] == 0.0

    bcfg, _ = blobs_run
    schema = load_schema(bcfg.output_dir / "schema.json")
    m = C.load_model(bcfg.output_dir / "chvae.json")
    btr = load_csv(bcfg.output_dir / "train.csv", schema)
    held_out = load_csv(bcfg.output_dir / "test.csv", schema)
    fresh = C.CHVAE(schema, latent_dim=2, n_components=3, epochs=1, learning_rate=1e-12,
                    seed=0).fit(btr.X)
    trained, rand = C.elbo(m, held_out.X, seed=0), C.elbo(fresh, held_out.X, seed=0)
    assert trained > rand, f"ELBO trained {trained:.3f} <= random {rand:.3f}"
    return f"grad_check {err:.1e}; held-out ELBO {trained:.3f} vs random init {rand:.3f}"


@criterion(7, "annulus sampling")
def test_criterion_7_sampling():
    c = np.array([0.3, -1.0, 2.0])
    for p in (1, 2, np.inf):
        pts = sample_annulus(c, 0.5, 1.5, 10_000, norm_order=p, seed=0)
        r = np.linalg.norm(pts - c, ord=p, axis=1)
        assert np.all((r >= 0.5 - 1e-12) & (r <= 1.5 + 1e-12)), f"norm bound violated for p={p}"
    pts = sample_annulus([0.0, 0.0], 1.0, 2.0, 100_000, seed=0)
    counts, _ = np.histogram(np.arctan2(pts[:, 1], pts[:, 0]), bins=36, range=(-np.pi, np.pi))
    pval = stats.chisquare(counts).pvalue
    assert pval > 0.01, f"chi-square p = {pval:.4f}"
    line = sample_annulus([2.0], 0.7, 0.7, 1000, seed=0)
    assert set(np.round(line[:, 0], 12)) == {1.3, 2.7}
    return f"direction chi-square p = {pval:.3f}"


@criterion(8, "metric suite")
def test_criterion_8_metrics():
    d = gen_mixed(400, seed=5)
    q = EmpiricalCdf(d.schema).fit(d.X)
    rng = np.random.default_rng(0)
    i, j = rng.integers(0, len(d), (2, 1000))
    c1, c2 = cost_total(d.X[i], d.X[j], q), cost_max(d.X[i], d.X[j], q)
    assert np.all(c2 <= c1 + 1e-12) and np.all(c1 <= d.schema.n_free * c2 + 1e-12)
    assert np.all(cost_total(d.X, d.X, q) == 0) and np.all(cost_max(d.X, d.X, q) == 0)

    # monotone in percentile displacement: push one ordered free feature further out
    x = d.X[0].copy()
    steps = [cost_total(x, np.where(np.arange(7) == 1, x + s, x), q) for s in np.linspace(0, 3, 30)]
    assert np.all(np.diff(steps) >= 0)

    one = FeatureSchema((Feature("a", Kind.REAL),))
    absdiff = lambda a, b: float(np.abs(np.asarray(a) - np.asarray(b)).sum())  # noqa: E731

    def unit(ref):
        m = InputMetric(one).fit(ref)
        m.sd_ = np.ones_like(m.sd_)
        return m

    ref3 = np.array([[0.0], [1.0], [10.0]])
    for e, want in (([1.0], 0.0), ([0.4], 0.4), ([6.0], 4 / 9)):
        assert proximity(e, ref3, absdiff) == pytest.approx(want)
        assert ReferenceIndex(ref3, unit(ref3)).proximity(np.array([e]))[0] == pytest.approx(want)
    ref2 = np.array([[0.5], [1.0]])
    for eps, want in ((0.6, True), (0.4, False)):
        assert connectedness([0.0], 1, ref2, eps, absdiff) is want
        assert bool(ReferenceIndex(ref2, unit(ref2)).connected(np.array([[0.0]]), 1, eps)[0]) is want
    assert connectedness([1.0], 1, ref2, 1e-9, absdiff)
    assert not connectedness([0.0], 1, np.zeros((0, 1)), 1.0, absdiff)

    # connectedness monotone in eps on random point sets
    for seed in range(20):
        r = np.random.default_rng(seed)
        pts, e = r.normal(size=(5, 1)) * 3, r.normal(size=1) * 3
        flags = [connectedness(e, 1, pts, eps, absdiff) for eps in np.linspace(0.05, 5, 40)]
        assert flags == sorted(flags)
    return "cost bounds on 1000 pairs, hand-set oracles and eps monotonicity hold"
