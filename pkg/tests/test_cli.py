import csv
import json
from pathlib import Path

import numpy as np
import pytest

from cchvae.cli import main
from cchvae.config import ConfigError, ExperimentConfig
from cchvae.data import load_csv
from cchvae.schema import Kind, load_schema
from cchvae.search import read_counterfactuals

SMALL = {
    "dataset": {"source": "blobs", "n": 900},
    "classifier": {"type": "indicator", "feature": "x2", "threshold": 6.0},
    "chvae": {"n_components": 3, "latent_dim": 2, "hidden_sizes": [64, 64], "epochs": 20},
    "search": {"samples_per_ring": 50},
    "growing_spheres": {"samples_per_ring": 100},
}


def write_config(path: Path, out: Path, **overrides) -> Path:
    cfg = json.loads(json.dumps(SMALL))
    for key, val in overrides.items():
        cfg.setdefault(key, {}).update(val) if isinstance(val, dict) else cfg.update({key: val})
    cfg["output_dir"] = str(out)
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    out = root / "out"
    cfg = write_config(root / "cfg.json", out)
    assert main(["train", "--config", str(cfg)]) == 0
    assert main(["explain", "--config", str(cfg), "--method", "cchvae"]) == 0
    assert main(["explain", "--config", str(cfg), "--method", "gs"]) == 0
    assert main(["evaluate", "--config", str(cfg)]) == 0
    return cfg, out


# -- synth -----------------------------------------------------------------------


def test_synth_blobs_rows(tmp_path):
    assert main(["synth", "--kind", "blobs", "--out", str(tmp_path)]) == 0
    d = load_csv(tmp_path / "data.csv", load_schema(tmp_path / "schema.json"))
    assert len(d) == 10000


def test_synth_moons_schema(tmp_path):
    assert main(["synth", "--kind", "moons", "--n", "1000", "--out", str(tmp_path)]) == 0
    s = load_schema(tmp_path / "schema.json")
    assert s[1].kind is Kind.CATEGORICAL and s[1].n_categories == 19


def test_synth_byte_identical(tmp_path):
    for sub in ("a", "b"):
        main(["synth", "--kind", "moons", "--seed", "3", "--out", str(tmp_path / sub)])
    assert (tmp_path / "a/data.csv").read_bytes() == (tmp_path / "b/data.csv").read_bytes()


# -- config -----------------------------------------------------------------------


@pytest.mark.parametrize("name, dims, epochs", [("gmsc", (5, 6), 50), ("heloc", (1, 10), 60)])
def test_builtin_configs_echo_latent_dims(name, dims, epochs, tmp_path):
    cfg = ExperimentConfig.load(f"builtin:{name}").with_overrides(None, tmp_path)
    c = cfg.chvae_config()
    assert (c.n_components, c.latent_dim) == dims
    assert c.epochs == epochs
    cfg.dump(tmp_path / "config.json")
    echoed = json.loads((tmp_path / "config.json").read_text())["chvae"]
    assert (echoed["n_components"], echoed["latent_dim"]) == dims
    assert cfg.schema().n_features == {"gmsc": 10, "heloc": 21}[name]


def test_missing_csv_names_path(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dataset": {"source": "csv", "csv": "nowhere/cs-training.csv",
                                           "schema": "builtin:gmsc"},
                               "output_dir": str(tmp_path / "o")}))
    assert main(["train", "--config", str(cfg)]) == 1
    assert "nowhere/cs-training.csv" in capsys.readouterr().err


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="chvae.epoch"):
        ExperimentConfig({"chvae": {"epoch": 3}})


def test_seed_propagates():
    cfg = ExperimentConfig({}).with_overrides(17, None)
    assert cfg.seed == 17 and cfg.chvae_config().seed == 17 and cfg.search_config().seed == 17


# -- pipeline ---------------------------------------------------------------------


def test_train_artifacts(pipeline):
    _, out = pipeline
    for name in ("train.csv", "test.csv", "schema.json", "config.json", "classifier.json",
                 "chvae.json", "elbo_trace.csv"):
        assert (out / name).exists(), name
    assert len(read_rows(out / "elbo_trace.csv")) == 20


def test_cchvae_rows_flip(pipeline):
    _, out = pipeline
    rows = read_rows(out / "counterfactuals_cchvae.csv")
    test = load_csv(out / "test.csv", load_schema(out / "schema.json"))
    assert len(rows) == int(np.sum(test.X[:, 1] <= 6))
    found = [r for r in rows if r["found"] == "1"]
    assert found
    assert all(float(r["cf_x2"]) > 6 for r in found)
    assert all(r["cf_x2"] == "" for r in rows if r["found"] == "0")


def test_gs_uses_configured_step(pipeline):
    cfg, out = pipeline
    assert json.loads((out / "config.json").read_text())["growing_spheres"]["step"] == 0.1
    radii = [float(r["radius"]) for r in read_rows(out / "counterfactuals_gs.csv")
             if r["found"] == "1"]
    # GS reports the outer radius of its ring: a whole multiple of the step
    assert radii and np.allclose(np.round(np.array(radii) / 0.1) * 0.1, radii)


def test_comparison_table(pipeline):
    _, out = pipeline
    rows = read_rows(out / "comparison.csv")
    by_eps = {}
    for r in rows:
        by_eps.setdefault(r["eps"], []).append(r["method"])
    assert len(by_eps) == 5 and all(sorted(m) == ["cchvae", "gs"] for m in by_eps.values())
    assert "found_rate" in rows[0]
    for method in ("cchvae", "gs"):
        per_item = read_rows(out / f"eval_{method}.csv")
        mean = np.mean([float(r["proximity"]) for r in per_item])
        row = next(r for r in rows if r["method"] == method)
        assert float(row["mean_proximity"]) == pytest.approx(mean, rel=1e-12)
        assert int(row["n_found"]) == len(per_item)


def test_rerun_is_idempotent(pipeline, tmp_path):
    cfg, out = pipeline
    before = {p.name: p.read_bytes() for p in out.iterdir()}
    other = write_config(tmp_path / "cfg.json", tmp_path / "again")
    for argv in (["train"], ["explain", "--method", "cchvae"], ["explain", "--method", "gs"],
                 ["evaluate"]):
        assert main([argv[0], "--config", str(other), *argv[1:]]) == 0
    after = {p.name: p.read_bytes() for p in (tmp_path / "again").iterdir()}
    before.pop("config.json"), after.pop("config.json")  # output_dir differs
    assert before == after


def test_evaluate_schema_drift(pipeline, tmp_path, capsys):
    cfg, out = pipeline
    bad = tmp_path / "counterfactuals_bad.csv"
    bad.write_text("a,b,cf_a,cf_b,radius,latent_distance,y_before,y_after,found\n")
    assert main(["evaluate", "--config", str(cfg), str(bad)]) == 1
    assert "do not match the schema" in capsys.readouterr().err


def test_explain_without_training(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", tmp_path / "empty")
    assert main(["explain", "--config", str(cfg), "--method", "gs"]) == 1
    assert "run 'train' first" in capsys.readouterr().err


def test_empty_negative_class(tmp_path):
    cfg = write_config(tmp_path / "c.json", tmp_path / "o",
                       classifier={"threshold": -1e6}, chvae={"epochs": 1})
    assert main(["train", "--config", str(cfg)]) == 0
    for method in ("cchvae", "gs"):
        assert main(["explain", "--config", str(cfg), "--method", method]) == 0
        text = (tmp_path / "o" / f"counterfactuals_{method}.csv").read_text()
        assert text.count("\n") == 1 and text.startswith("x1,x2,cf_x1,cf_x2")
        schema = load_schema(tmp_path / "o" / "schema.json")
        assert len(read_counterfactuals(tmp_path / "o" / f"counterfactuals_{method}.csv",
                                        schema).found) == 0
