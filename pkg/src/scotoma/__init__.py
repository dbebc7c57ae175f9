"""Semisupervised score-based one-to-one matching with a simulation lab."""

from .dataset import (Observation, SemiDataset, StandardizationState,
                      load_dataset, standardize, write_dataset)
from .eigsolve import subspace_dist, top_generalized_eigvec
from .matcher import (Matching, greedy_match, matching_accuracy,
                      random_matching_stats)
from .score_core import (HyperParams, ScatterPair, WeightVector,
                         build_adjacency, build_scatter, objective_g, score)
from .fitting import FitState, fit_canonical, fit_initial, fit_self_taught
from .simlab import DgpConfig, ExperimentResult, generate, run_experiment

__all__ = [
    "Observation", "SemiDataset", "StandardizationState",
    "load_dataset", "standardize", "write_dataset",
    "WeightVector", "ScatterPair", "HyperParams",
    "score", "build_adjacency", "build_scatter", "objective_g",
    "top_generalized_eigvec", "subspace_dist",
    "Matching", "greedy_match", "matching_accuracy", "random_matching_stats",
    "FitState", "fit_initial", "fit_canonical", "fit_self_taught",
    "DgpConfig", "ExperimentResult", "generate", "run_experiment",
]

__version__ = "0.1.0"
