"""Scikit-learn style regressor facade over the evolution engine.

``MGPRegressor`` is a drop-in estimator: ``fit``/``predict``/``score``
follow the usual conventions and ``transform`` exposes the evolved,
standardized feature matrix so the model can sit inside a Pipeline as
a feature constructor.
"""

import numbers

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import (
    check_array,
    check_is_fitted,
    check_random_state,
    check_X_y,
)

from .datasets import Dataset, SplitSpec, train_test_split
from .evolution import EvolutionConfig, evolve
from .model import predict_individual, score_model
from .program import render
from .variation import VariationConfig, default_max_dimensionality


class MGPRegressor(RegressorMixin, TransformerMixin, BaseEstimator):
    """Symbolic feature regression with a linear readout.

    Evolves a set of expression-tree features whose standardized
    outputs feed a ridge model.  See ``EvolutionConfig`` and
    ``VariationConfig`` for parameter semantics.

    Parameters mirror the engine configs; ``max_dimensionality=None``
    resolves to min(50, 2 * n_features) at fit time.  ``random_state``
    follows scikit-learn conventions (None draws a seed from the global
    generator, so pass an int for reproducible runs).
    """

    def __init__(self, population_size=100, generations=50,
                 p_crossover=0.75, p_feature_xo=0.75, xo_type="standard",
                 feedback_gamma=0.25, softmax_norm=False, max_depth=6,
                 max_dimensionality=None, ridge_lambda=1e-3, gd_iters=10,
                 lr=0.1, val_fraction=0.25, random_state=None, n_jobs=1,
                 verbose=False):
        self.population_size = population_size
        self.generations = generations
        self.p_crossover = p_crossover
        self.p_feature_xo = p_feature_xo
        self.xo_type = xo_type
        self.feedback_gamma = feedback_gamma
        self.softmax_norm = softmax_norm
        self.max_depth = max_depth
        self.max_dimensionality = max_dimensionality
        self.ridge_lambda = ridge_lambda
        self.gd_iters = gd_iters
        self.lr = lr
        self.val_fraction = val_fraction
        self.random_state = random_state
        self.n_jobs = n_jobs
        self.verbose = verbose

    def _resolved_seed(self) -> int:
        if isinstance(self.random_state, numbers.Integral):
            return int(self.random_state)
        rs = check_random_state(self.random_state)
        return int(rs.randint(2 ** 31))

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(
                f"val_fraction must be in (0, 1), got {self.val_fraction}")
        seed = self._resolved_seed()
        max_dim = self.max_dimensionality
        if max_dim is None:
            max_dim = default_max_dimensionality(self.n_features_in_)
        vcfg = VariationConfig(
            p_crossover=self.p_crossover,
            p_feature_xo=self.p_feature_xo,
            xo_type=self.xo_type,
            feedback_gamma=self.feedback_gamma,
            softmax_norm=self.softmax_norm,
            max_depth=self.max_depth,
            max_dimensionality=max_dim,
        )
        cfg = EvolutionConfig(
            population_size=self.population_size,
            generations=self.generations,
            variation=vcfg,
            ridge_lambda=self.ridge_lambda,
            gd_iters=self.gd_iters,
            lr=self.lr,
            seed=seed,
        )
        ds = Dataset(X, y)
        train, val = train_test_split(
            ds, SplitSpec(test_fraction=self.val_fraction, seed=seed))
        self.model_, self.history_ = evolve(
            cfg, train, val, n_jobs=self.n_jobs, verbose=self.verbose)
        self.feature_expressions_ = [
            render(p) for p in self.model_.individual.programs]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected "
                f"{self.n_features_in_}")
        return predict_individual(self.model_.individual, X)

    def transform(self, X):
        """Standardized evolved-feature matrix, constants as zeros."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected "
                f"{self.n_features_in_}")
        ind = self.model_.individual
        phi = np.column_stack([p.evaluate(X) for p in ind.programs])
        z = (phi - ind.means) / ind.stds
        z[:, ind.constant_mask] = 0.0
        return z

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "model_")
        return np.asarray(self.feature_expressions_, dtype=object)

    def score_dataset(self, X, y):
        """Scores (mse, r2, entanglement, complexity) on the given data."""
        check_is_fitted(self, "model_")
        X, y = check_X_y(X, y, y_numeric=True, dtype=np.float64)
        return score_model(self.model_, Dataset(X, y))
