"""Multidimensional genetic programming for symbolic regression.

Evolves small sets of expression-tree features whose linear (ridge)
combination predicts the target.  Coefficient feedback biases which
features variation touches, and two semantic crossover operators
recombine parents through residual matching instead of random subtree
swaps.
"""

from .datasets import (
    Dataset,
    DatasetError,
    SplitSpec,
    kfold,
    load_csv,
    resolve_dataset,
    synth_problem,
    train_test_split,
)
from .estimator import MGPRegressor
from .evolution import EvolutionConfig, RunHistory, evolve, init_population
from .model import (
    FittedModel,
    Scores,
    entanglement,
    fit_individual,
    load_model,
    predict_individual,
    save_model,
    score_model,
)
from .program import Individual, Program, parse, random_program, render
from .variation import (
    VariationConfig,
    feature_crossover,
    feedback_probs,
    mutate,
    res_xo,
    stage_xo,
    subtree_crossover,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DatasetError",
    "EvolutionConfig",
    "FittedModel",
    "Individual",
    "MGPRegressor",
    "Program",
    "RunHistory",
    "Scores",
    "SplitSpec",
    "VariationConfig",
    "entanglement",
    "evolve",
    "feature_crossover",
    "feedback_probs",
    "fit_individual",
    "init_population",
    "kfold",
    "load_csv",
    "load_model",
    "mutate",
    "parse",
    "predict_individual",
    "random_program",
    "render",
    "res_xo",
    "resolve_dataset",
    "save_model",
    "score_model",
    "stage_xo",
    "subtree_crossover",
    "synth_problem",
    "train_test_split",
]
