"""scikit-learn estimator wrapper."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import Pipeline
from sklearn.utils.validation import check_is_fitted

from mgpr import MGPRegressor
from mgpr.datasets import synth_problem


@pytest.fixture(scope="module")
def sum_sq():
    return synth_problem("sum-sq", n=150, seed=0)


@pytest.fixture(scope="module")
def fitted(sum_sq):
    est = MGPRegressor(population_size=20, generations=5, random_state=0)
    return est.fit(sum_sq.X, sum_sq.y)


def test_get_params_round_trip():
    est = MGPRegressor(population_size=30, xo_type="stagexo",
                       feedback_gamma=0.5)
    params = est.get_params()
    assert params["population_size"] == 30
    assert params["xo_type"] == "stagexo"
    cloned = clone(est)
    assert cloned.get_params() == params


def test_set_params_chains():
    est = MGPRegressor().set_params(generations=7, lr=0.05)
    assert est.generations == 7 and est.lr == 0.05


def test_not_fitted_error(sum_sq):
    est = MGPRegressor()
    with pytest.raises(NotFittedError):
        check_is_fitted(est)
    with pytest.raises(NotFittedError):
        est.predict(sum_sq.X)


def test_fit_predict_shapes(sum_sq, fitted):
    yhat = fitted.predict(sum_sq.X)
    assert yhat.shape == (150,)
    assert fitted.n_features_in_ == 2
    assert fitted.score(sum_sq.X, sum_sq.y) > 0.9


def test_transform_returns_standardized_features(sum_sq, fitted):
    z = fitted.transform(sum_sq.X)
    m = fitted.model_.individual.n_features_out
    assert z.shape == (150, m)
    names = fitted.get_feature_names_out()
    assert len(names) == m
    assert all(isinstance(n, str) for n in names)


def test_random_state_reproducibility(sum_sq):
    kw = dict(population_size=16, generations=4, random_state=42)
    a = MGPRegressor(**kw).fit(sum_sq.X, sum_sq.y).predict(sum_sq.X)
    b = MGPRegressor(**kw).fit(sum_sq.X, sum_sq.y).predict(sum_sq.X)
    np.testing.assert_array_equal(a, b)


def test_feature_count_mismatch_rejected(sum_sq, fitted):
    with pytest.raises(ValueError):
        fitted.predict(sum_sq.X[:, :1])


def test_invalid_val_fraction(sum_sq):
    est = MGPRegressor(val_fraction=1.0)
    with pytest.raises(ValueError):
        est.fit(sum_sq.X, sum_sq.y)


def test_works_in_pipeline(sum_sq):
    pipe = Pipeline([("gp", MGPRegressor(population_size=14, generations=3,
                                         random_state=1))])
    pipe.fit(sum_sq.X, sum_sq.y)
    assert pipe.predict(sum_sq.X).shape == (150,)


def test_rejects_nan_input(sum_sq):
    X = sum_sq.X.copy()
    X[0, 0] = np.nan
    with pytest.raises(ValueError):
        MGPRegressor(population_size=10, generations=2).fit(X, sum_sq.y)
