"""Command-line harness: synth, train, explain, evaluate.

Each verb reads one JSON config (``--config``, or ``builtin:<name>`` for a
packaged one) and writes CSV/JSON artefacts to the configured output
directory. Files never contain timestamps, so reruns with the same seed are
byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import chvae as chvae_mod
from .baselines import GrowingSpheres
from .classifier import class_sets, indicator_classifier, load_classifier, train_logreg
from .config import ConfigError, ExperimentConfig
from .data import DataError, Dataset, gen_blobs, gen_moons_discretized, load_csv, split
from .evaluation import EmpiricalCdf, InputMetric, default_eps_grid, evaluate_batch
from .schema import DomainError, SchemaError, load_schema, save_schema
from .search import LatentCounterfactualSearch, read_counterfactuals, write_counterfactuals

log = logging.getLogger("cchvae")

METHODS = ("cchvae", "gs")
SYNTH_DEFAULT_N = {"blobs": 10000, "moons": 1000}


# ----------------------------------------------------------------------
# artefact layout


def _paths(out: Path) -> dict:
    return {
        "train": out / "train.csv",
        "test": out / "test.csv",
        "schema": out / "schema.json",
        "classifier": out / "classifier.json",
        "chvae": out / "chvae.json",
        "trace": out / "elbo_trace.csv",
        "config": out / "config.json",
    }


def counterfactual_path(out: Path, method: str) -> Path:
    return out / f"counterfactuals_{method}.csv"


def _require(*paths: Path):
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise FileNotFoundError(f"missing artefact(s): {', '.join(missing)}; run 'train' first")


# ----------------------------------------------------------------------
# verbs


def synthesize(kind: str, n: int | None, seed: int, out: Path) -> Dataset:
    if kind not in SYNTH_DEFAULT_N:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    n = SYNTH_DEFAULT_N[kind] if n is None else n
    d = gen_blobs(n, seed) if kind == "blobs" else gen_moons_discretized(n, seed)
    out.mkdir(parents=True, exist_ok=True)
    d.to_csv(out / "data.csv")
    save_schema(d.schema, out / "schema.json")
    return d


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    ds = cfg["dataset"]
    if ds["source"] == "blobs":
        return gen_blobs(ds["n"] or SYNTH_DEFAULT_N["blobs"], cfg.seed)
    if ds["source"] == "moons":
        return gen_moons_discretized(ds["n"] or SYNTH_DEFAULT_N["moons"], cfg.seed)
    return load_csv(cfg.resolve(ds["csv"]), cfg.schema(), on_invalid=ds["on_invalid"],
                    positive_offset=ds["positive_offset"])


def build_classifier(cfg: ExperimentConfig, train: Dataset):
    c = cfg["classifier"]
    if c["type"] == "indicator":
        if c["feature"] is None:
            raise ConfigError("classifier.feature is required for the indicator classifier")
        return indicator_classifier(train.schema.index(c["feature"]), c["threshold"], train.schema)
    return train_logreg(train, c["l2"], tol=c["tol"], max_iter=c["max_iter"])


def train(cfg: ExperimentConfig) -> dict:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    p = _paths(out)
    data = load_dataset(cfg)
    tr, te = split(data, cfg["dataset"]["train_fraction"], cfg.seed)
    log.info("dataset: %d train / %d test rows, %d features", len(tr), len(te), data.n_features)
    tr.to_csv(p["train"])
    te.to_csv(p["test"])
    save_schema(data.schema, p["schema"])
    cfg.dump(p["config"])

    f = build_classifier(cfg, tr)
    f.save(p["classifier"])
    log.info("classifier: train accuracy %.4f", float(np.mean(f.predict(tr.X) == tr.y)))

    t0 = time.perf_counter()
    m = chvae_mod.train_chvae(tr, cfg.chvae_config())
    log.info("chvae: K=%d L=%d, %d epochs in %.1fs, final ELBO %.4f", m.latent_dim,
             m.n_components, m.epochs, time.perf_counter() - t0, m.elbo_trace_[-1]["elbo"])
    chvae_mod.save_model(m, p["chvae"])
    chvae_mod.write_elbo_trace(m, p["trace"])
    return {"classifier": f, "model": m, "train": tr, "test": te}


def _load_split(cfg: ExperimentConfig):
    p = _paths(cfg.output_dir)
    _require(p["schema"], p["train"], p["test"])
    schema = load_schema(p["schema"])
    return schema, load_csv(p["train"], schema), load_csv(p["test"], schema)


def explain(cfg: ExperimentConfig, method: str) -> Path:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    out = cfg.output_dir
    p = _paths(out)
    _require(p["classifier"], *([p["chvae"]] if method == "cchvae" else []))
    schema, tr, te = _load_split(cfg)
    f = load_classifier(p["classifier"])
    X = te.X[f.predict(te.X) == 0]
    log.info("%s: explaining %d test rows with f(x) = 0", method, len(X))
    jobs = cfg["n_jobs"]
    if method == "cchvae":
        m = chvae_mod.load_model(p["chvae"])
        s = cfg.search_config()
        est = LatentCounterfactualSearch(
            classifier=f, model=m, samples_per_ring=s.samples_per_ring, ring_width=s.ring_width,
            norm_order=s.norm_order, max_rings=s.max_rings, seed=s.seed, component=s.component,
            n_jobs=jobs).fit(tr.X)
    else:
        g = cfg["growing_spheres"]
        est = GrowingSpheres(classifier=f, schema=schema, step=g["step"],
                             samples_per_ring=g["samples_per_ring"], max_rings=g["max_rings"],
                             standardize=g["standardize"], seed=cfg.seed, n_jobs=jobs).fit(tr.X)
    results = est.explain(X) if len(X) else []
    path = counterfactual_path(out, method)
    write_counterfactuals(path, schema, X.reshape(-1, schema.n_features), results,
                          y_before=np.zeros(len(X), int))
    found = sum(r is not None for r in results)
    log.info("%s: found %d / %d -> %s", method, found, len(X), path)
    return path


COMPARISON_COLUMNS = ["method", "eps", "n_explained", "n_found", "found_rate", "mean_proximity",
                      "frac_proximity_le_1", "frac_connected", "mean_cost1", "mean_cost2",
                      "median_cost1", "median_cost2"]


def evaluate(cfg: ExperimentConfig, files: list[Path] | None = None) -> Path:
    """Score counterfactual files; defaults to every method file in the output dir."""
    out = cfg.output_dir
    p = _paths(out)
    _require(p["classifier"])
    schema, tr, _ = _load_split(cfg)
    if not files:
        files = [counterfactual_path(out, m) for m in METHODS
                 if counterfactual_path(out, m).exists()]
        if not files:
            raise FileNotFoundError(f"no counterfactual files in {out}; run 'explain' first")
    f = load_classifier(p["classifier"])
    ref = tr.X[class_sets(tr, f).positive_correct]
    if len(ref) < 2:
        raise DataError("need at least two correctly classified positive training rows")
    metric = InputMetric(schema).fit(tr.X)
    cdf = EmpiricalCdf(schema).fit(tr.X)
    ev = cfg["evaluation"]
    eps_grid = ev["eps_grid"] or default_eps_grid(ref, metric, ev["eps_quantiles"])

    rows = []
    for path in files:
        path = Path(path)
        method = path.stem.removeprefix("counterfactuals_")
        table = read_counterfactuals(path, schema)
        X, E = table.X[table.found], table.E[table.found]
        n_total, n_found = len(table.found), int(table.found.sum())
        if n_found:
            try:
                schema.validate(E)
            except (SchemaError, DomainError) as exc:
                raise DataError(f"{path}: {exc}") from exc
            rep = evaluate_batch(X, E, ref, eps_grid, cdf, metric, labels=f.predict(E))
            rep.to_csv(out / f"eval_{method}.csv")
            rep.aggregate_csv(out / f"eval_{method}_aggregate.csv")
            agg = rep.aggregates
        else:
            agg = None
        for eps in eps_grid:
            row = {"method": method, "eps": repr(float(eps)), "n_explained": n_total,
                   "n_found": n_found,
                   "found_rate": repr(n_found / n_total) if n_total else ""}
            for key in COMPARISON_COLUMNS[5:]:
                if agg is None:
                    row[key] = ""
                elif key == "frac_connected":
                    row[key] = repr(agg["frac_connected"][float(eps)])
                else:
                    row[key] = repr(agg[key])
            rows.append(row)
        log.info("%s: %d/%d found%s", method, n_found, n_total,
                 f", mean proximity {agg['mean_proximity']:.3f}" if agg else "")
    target = out / "comparison.csv"
    with open(target, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, COMPARISON_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return target


# ----------------------------------------------------------------------
# argument parsing


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cchvae", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("synth", help="write a synthetic dataset and its schema")
    s.add_argument("--kind", choices=sorted(SYNTH_DEFAULT_N), required=True)
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, required=True)

    for verb, hlp in (("train", "train the classifier and the CHVAE"),
                      ("explain", "generate counterfactuals for negatively classified test rows"),
                      ("evaluate", "score counterfactual files")):
        v = sub.add_parser(verb, help=hlp)
        v.add_argument("--config", required=True, help="JSON config path or builtin:<name>")
        v.add_argument("--out", type=Path, default=None, help="override output_dir")
        v.add_argument("--seed", type=int, default=None, help="override the global seed")
        if verb == "explain":
            v.add_argument("--method", choices=METHODS, required=True)
        if verb == "evaluate":
            v.add_argument("files", nargs="*", type=Path,
                           help="counterfactual CSVs (default: all in the output dir)")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.verb == "synth":
            synthesize(args.kind, args.n, args.seed, args.out)
            return 0
        cfg = ExperimentConfig.load(args.config).with_overrides(args.seed, args.out)
        if args.verb == "train":
            train(cfg)
        elif args.verb == "explain":
            explain(cfg, args.method)
        else:
            evaluate(cfg, args.files)
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"cchvae {args.verb}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
