"""Counterfactual explanations for tabular classifiers via a conditional
heterogeneous variational autoencoder."""

from .baselines import GrowingSpheres, growing_spheres
from .chvae import (CHVAE, ChvaeConfig, LatentCode, ModelFileError, ModelVersionError, decode,
                    elbo, encode, grad_check, load_model, save_model, train_chvae)
from .classifier import (ClassSets, IndicatorClassifier, L2LogisticRegression, LinearClassifier,
                         class_sets, indicator_classifier, load_classifier, train_logreg)
from .config import ExperimentConfig
from .data import DataError, Dataset, gen_blobs, gen_moons_discretized, load_csv, split
from .evaluation import (EmpiricalCdf, EvalReport, InputMetric, ReferenceIndex, connectedness,
                         cost_max, cost_total, default_eps_grid, evaluate_batch, percentile,
                         proximity)
from .likelihoods import likelihood_logpdf
from .schema import DomainError, Feature, FeatureSchema, Kind, Mutability, SchemaError
from .search import (Counterfactual, LatentBox, LatentCounterfactualSearch, SearchConfig,
                     find_counterfactual, find_flipset, latent_distance, sample_annulus)

__all__ = [
    "CHVAE",
    "ChvaeConfig",
    "class_sets",
    "ClassSets",
    "connectedness",
    "cost_max",
    "cost_total",
    "Counterfactual",
    "DataError",
    "Dataset",
    "decode",
    "default_eps_grid",
    "DomainError",
    "elbo",
    "EmpiricalCdf",
    "encode",
    "EvalReport",
    "evaluate_batch",
    "ExperimentConfig",
    "Feature",
    "FeatureSchema",
    "find_counterfactual",
    "find_flipset",
    "gen_blobs",
    "gen_moons_discretized",
    "grad_check",
    "growing_spheres",
    "GrowingSpheres",
    "indicator_classifier",
    "IndicatorClassifier",
    "InputMetric",
    "Kind",
    "L2LogisticRegression",
    "latent_distance",
    "LatentBox",
    "LatentCode",
    "LatentCounterfactualSearch",
    "likelihood_logpdf",
    "LinearClassifier",
    "load_classifier",
    "load_csv",
    "load_model",
    "ModelFileError",
    "ModelVersionError",
    "Mutability",
    "percentile",
    "proximity",
    "ReferenceIndex",
    "sample_annulus",
    "save_model",
    "SchemaError",
    "SearchConfig",
    "split",
    "train_chvae",
    "train_logreg",
]

__version__ = "0.1.0"
