"""Experiment configuration: one JSON document per experiment."""

from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

from .chvae import ChvaeConfig
from .schema import FeatureSchema, load_schema
from .search import SearchConfig

BUILTIN_PREFIX = "builtin:"

DEFAULTS = {
    "seed": 0,
    "output_dir": "runs/default",
    "dataset": {
        "source": "blobs",  # blobs | moons | csv
        "n": None,
        "csv": None,
        "schema": None,
        "train_fraction": 0.8,
        "on_invalid": "raise",
        "positive_offset": 0.0,
    },
    "classifier": {"type": "logreg", "l2": 1e-3, "tol": 1e-6, "max_iter": 50000,
                   "feature": None, "threshold": 0.0},
    "chvae": {"n_components": 3, "latent_dim": 2, "hidden_sizes": [64, 64], "epochs": 50,
              "batch_size": 64, "learning_rate": 1e-3},
    "search": {"samples_per_ring": 100, "ring_width": None, "norm_order": 2, "max_rings": 200,
               "component": "prior"},
    "growing_spheres": {"step": 0.1, "samples_per_ring": 200, "max_rings": 1000,
                        "standardize": True},
    "evaluation": {"eps_quantiles": [0.01, 0.02, 0.05, 0.10, 0.20], "eps_grid": None},
    "n_jobs": 1,
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {path + key!r} must be an object")
            out[key] = _merge(base[key], val, f"{path}{key}.")
        else:
            out[key] = val
    return out


def builtin_path(name: str) -> Path:
    """Path of a packaged resource file such as ``config_blobs.json``."""
    p = Path(str(resources.files("cchvae") / "resources" / name))
    if not p.exists():
        raise FileNotFoundError(f"no builtin resource {name!r}")
    return p


class ExperimentConfig:
    """Validated view over a config dictionary.

    Unknown keys are rejected so typos fail loudly. Relative paths resolve
    against ``base_dir`` (the working directory by default).
    """

    def __init__(self, data: dict | None = None, base_dir: str | Path | None = None):
        self.data = _merge(DEFAULTS, data or {})
        self.base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
        self._validate()

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        if str(path).startswith(BUILTIN_PREFIX):
            path = builtin_path(f"config_{str(path)[len(BUILTIN_PREFIX):]}.json")
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls(data)

    def _validate(self):
        ds = self.data["dataset"]
        if ds["source"] not in ("blobs", "moons", "csv"):
            raise ConfigError("dataset.source must be 'blobs', 'moons' or 'csv'")
        if ds["source"] == "csv" and not (ds["csv"] and ds["schema"]):
            raise ConfigError("dataset.source 'csv' needs dataset.csv and dataset.schema")
        if self.data["classifier"]["type"] not in ("logreg", "indicator"):
            raise ConfigError("classifier.type must be 'logreg' or 'indicator'")
        if not isinstance(self.data["seed"], int):
            raise ConfigError("seed must be an integer")
        # Construct once so invariant violations surface at load time.
        self.chvae_config()
        self.search_config()
        if not self.data["growing_spheres"]["step"] > 0:
            raise ConfigError("growing_spheres.step must be > 0")

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def with_overrides(self, seed: int | None = None, output_dir=None) -> "ExperimentConfig":
        data = copy.deepcopy(self.data)
        if seed is not None:
            data["seed"] = int(seed)
        if output_dir is not None:
            data["output_dir"] = str(output_dir)
        return ExperimentConfig(data, self.base_dir)

    def resolve(self, p: str | Path) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        return self.resolve(self.data["output_dir"])

    def schema(self) -> FeatureSchema | None:
        ref = self.data["dataset"]["schema"]
        if ref is None:
            return None
        if ref.startswith(BUILTIN_PREFIX):
            return load_schema(builtin_path(f"schema_{ref[len(BUILTIN_PREFIX):]}.json"))
        return load_schema(self.resolve(ref))

    def chvae_config(self) -> ChvaeConfig:
        c = self.data["chvae"]
        try:
            return ChvaeConfig(latent_dim=c["latent_dim"], n_components=c["n_components"],
                               hidden_sizes=tuple(c["hidden_sizes"]), epochs=c["epochs"],
                               batch_size=c["batch_size"], learning_rate=c["learning_rate"],
                               seed=self.seed)
        except ValueError as exc:
            raise ConfigError(f"chvae: {exc}") from exc

    def search_config(self) -> SearchConfig:
        s = self.data["search"]
        try:
            return SearchConfig(samples_per_ring=s["samples_per_ring"], ring_width=s["ring_width"],
                                norm_order=s["norm_order"], max_rings=s["max_rings"],
                                seed=self.seed, component=s["component"])
        except ValueError as exc:
            raise ConfigError(f"search: {exc}") from exc

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")
