from __future__ import annotations

import numpy as np
import pytest

from cchvae import CHVAE, Dataset, Feature, FeatureSchema, Kind, gen_blobs, split
from cchvae.classifier import indicator_classifier


def mixed_schema() -> FeatureSchema:
    """Every feature kind, plus two protected columns."""
    return FeatureSchema((
        Feature("income", Kind.POSITIVE_REAL),
        Feature("score", Kind.REAL),
        Feature("n_loans", Kind.COUNT),
        Feature("region", Kind.CATEGORICAL, n_categories=4),
        Feature("grade", Kind.ORDINAL, n_categories=5),
        Feature("age", Kind.COUNT, mutability="protected"),
        Feature("sector", Kind.CATEGORICAL, mutability="protected", n_categories=3),
    ))


def gen_mixed(n: int = 400, seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    age = rng.integers(18, 80, n)
    sector = rng.integers(0, 3, n)
    income = np.exp(rng.normal(3 + 0.01 * age, 0.4))
    score = rng.normal(0.5 * sector, 1.0)
    loans = rng.poisson(1 + age / 40)
    region = rng.integers(0, 4, n)
    grade = np.clip(np.rint(2 + score + rng.normal(0, 0.7, n)), 0, 4)
    X = np.column_stack([income, score, loans, region, grade, age, sector]).astype(float)
    y = (score + 0.3 * grade - 0.2 * loans > 0.8).astype(int)
    return Dataset(mixed_schema(), X, y)


@pytest.fixture(scope="session")
def blobs_small():
    return split(gen_blobs(1500, seed=1), 0.8, seed=1)


@pytest.fixture(scope="session")
def small_model(blobs_small):
    tr, _ = blobs_small
    return CHVAE(tr.schema, latent_dim=2, n_components=3, epochs=15, seed=0).fit(tr.X)


@pytest.fixture(scope="session")
def blobs_clf():
    from cchvae.data import blobs_schema

    return indicator_classifier(1, 6.0, blobs_schema())


@pytest.fixture(scope="session")
def mixed_data():
    return split(gen_mixed(500, seed=3), 0.8, seed=3)


@pytest.fixture(scope="session")
def mixed_model(mixed_data):
    tr, _ = mixed_data
    return CHVAE(tr.schema, latent_dim=3, n_components=2, hidden_sizes=(16, 16), epochs=30,
                 seed=0).fit(tr.X)


@pytest.fixture(scope="session")
def blobs_full():
    """The full-size synthetic setup: 10000 rows, K=2, L=3, 50 epochs."""
    tr, te = split(gen_blobs(10000, seed=0), 0.8, seed=0)
    m = CHVAE(tr.schema, latent_dim=2, n_components=3, epochs=50, seed=0).fit(tr.X)
    return tr, te, m


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
