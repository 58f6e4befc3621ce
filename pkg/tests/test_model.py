"""Linear model layer: normalization, ridge, scoring, gradient refinement."""

import json
import warnings

import numpy as np
import pytest

from mgpr.datasets import Dataset, synth_problem
from mgpr.model import (
    EntanglementUndefined,
    entanglement,
    fit_individual,
    fit_ridge,
    load_model,
    model_from_dict,
    model_to_dict,
    mse,
    normalize_features,
    predict_individual,
    r2,
    save_model,
    score_model,
)
from mgpr.program import AttrLeaf, Individual, OpNode, Program, parse
from mgpr.operators import OPERATORS


def test_normalize_hand_values():
    phi = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
    norm = normalize_features(phi)
    r = 1.2247448713915890  # sqrt(3/2), population std in the denominator
    np.testing.assert_allclose(norm.z[:, 0], [-r, 0.0, r], rtol=1e-12)
    # constant column: zeros out, unit std recorded, mask set
    np.testing.assert_array_equal(norm.z[:, 1], [0.0, 0.0, 0.0])
    assert norm.stds[1] == 1.0
    np.testing.assert_array_equal(norm.constant_mask, [False, True])
    np.testing.assert_allclose(norm.means, [2.0, 5.0])


def _ridge_oracle(z, y, lam):
    # augmented least squares: rows sqrt(lam)*I pin the coefficients
    m = z.shape[1]
    aug = np.vstack([z, np.sqrt(lam) * np.eye(m)])
    rhs = np.concatenate([y - y.mean(), np.zeros(m)])
    beta, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
    return beta


def test_fit_ridge_matches_least_squares_oracle():
    rng = np.random.default_rng(0)
    for _ in range(10):
        z = rng.normal(size=(100, 5))
        y = rng.normal(size=100)
        for lam in (1e-3, 0.1, 10.0):
            beta, intercept = fit_ridge(z, y, lam)
            assert intercept == y.mean()
            want = _ridge_oracle(z, y, lam)
            np.testing.assert_allclose(beta, want, rtol=1e-8, atol=1e-12)


def test_fit_ridge_zero_features():
    beta, intercept = fit_ridge(np.empty((5, 0)), np.ones(5), 1e-3)
    assert beta.shape == (0,) and intercept == 1.0


def test_fit_ridge_singular_message():
    z = np.ones((4, 2))  # duplicate constant columns
    with pytest.raises(ValueError, match="lambda > 0"):
        fit_ridge(z, np.arange(4.0), 0.0)


def test_mse_r2_hand_values():
    y = np.array([0.0, 1.0, 2.0])
    yhat = np.array([0.0, 1.0, 1.0])
    assert mse(yhat, y) == pytest.approx(1.0 / 3.0, rel=1e-15)
    assert r2(yhat, y) == pytest.approx(0.5, rel=1e-15)


def test_r2_constant_target_rejected():
    with pytest.raises(ValueError):
        r2(np.ones(3), np.ones(3))


def test_entanglement_two_feature_hand_value():
    phi = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 5.0]])
    r = np.corrcoef(phi[:, 0], phi[:, 1])[0, 1]
    assert r == pytest.approx(0.98270, abs=2e-5)
    assert entanglement(phi) == pytest.approx(0.96570, abs=2e-5)
    assert entanglement(phi) == pytest.approx(r * r, rel=1e-12)


def test_entanglement_matches_brute_force():
    rng = np.random.default_rng(1)
    phi = rng.normal(size=(30, 6))
    m = phi.shape[1]
    total = 0.0
    for i in range(m):
        for j in range(m):
            if i != j:
                total += np.corrcoef(phi[:, i], phi[:, j])[0, 1] ** 2
    want = total / (m * (m - 1))
    assert entanglement(phi) == pytest.approx(want, rel=1e-12)
    assert 0.0 <= entanglement(phi) <= 1.0


def test_entanglement_degenerate_cases():
    assert entanglement(np.ones((5, 1)) * 3) == 0.0
    # one live + one constant feature leaves a single usable column
    phi = np.column_stack([np.arange(5.0), np.ones(5)])
    with pytest.warns(EntanglementUndefined):
        assert entanglement(phi) == 0.0


def test_entanglement_large_constant_column_is_excluded():
    # a bit-identical column at large magnitude: numpy's axis-0 std can
    # report ~|c|*eps > 0 for it (mean rounding depends on summation
    # order), while corrcoef's centering sees exactly zero variance and
    # would divide 0/0; the column must be dropped like any constant
    rng = np.random.default_rng(7)
    live = rng.normal(size=(144, 2))
    phi = np.column_stack([live[:, 0], np.full(144, 13662.633542136115),
                           live[:, 1]])
    with warnings.catch_warnings():
        warnings.simplefilter("error", RuntimeWarning)
        got = entanglement(phi)
    assert np.isfinite(got)
    assert got == pytest.approx(entanglement(live), rel=1e-12)


def _sum_sq_individual():
    x1 = parse("(1.0*x1 + 1.0*0.0)")
    x2sq = parse("square(1.0*x2)")
    return Individual(programs=[x1, x2sq])


def test_fit_individual_recovers_exact_target():
    ds = synth_problem("sum-sq", n=200, seed=2)
    ind = _sum_sq_individual()
    # small lambda: shrinkage would otherwise dominate the exact fit
    fm = fit_individual(ind, ds, ridge_lambda=1e-7, gd_iters=0)
    assert ind.train_mse < 1e-12
    # held-out rows from the same generator score exactly as well
    holdout = synth_problem("sum-sq", n=100, seed=3)
    yhat = fm.predict(holdout.X)
    np.testing.assert_allclose(yhat, holdout.y, atol=1e-8)


def test_fit_individual_populates_state():
    ds = synth_problem("linear-mix", n=80, seed=4)
    ind = Individual(programs=[parse("sin(1.0*x1)"), parse("(1.0*x2 * 1.0*x3)")])
    fit_individual(ind, ds, gd_iters=0)
    assert ind.coefs.shape == (2,)
    assert ind.intercept == pytest.approx(ds.y.mean())
    assert ind.train_phi.shape == (80, 2)
    np.testing.assert_allclose(ind.train_errors,
                               (ind.train_yhat - ds.y) ** 2)
    assert ind.train_mse == pytest.approx(ind.train_errors.mean())
    # prediction path reproduces the cached training outputs
    np.testing.assert_allclose(predict_individual(ind, ds.X), ind.train_yhat)


def test_fit_individual_constant_feature_gets_zero_coef():
    ds = synth_problem("sum-sq", n=50, seed=5)
    ind = Individual(programs=[parse("(1.0*x1 + 1.0*0.0)"),
                               parse("sin(1.0*3.0)")])
    fit_individual(ind, ds, gd_iters=0)
    assert ind.coefs[1] == 0.0
    assert ind.constant_mask[1]


def test_gradient_refinement_never_hurts():
    rng = np.random.default_rng(6)
    ds = synth_problem("trig-mix", n=120, seed=6)
    from mgpr.program import random_program
    worse = 0
    improved = 0
    for _ in range(50):
        programs = [random_program(rng, ds.n_attributes, 3)
                    for _ in range(int(rng.integers(1, 5)))]
        base = Individual(programs=[p.clone() for p in programs])
        fit_individual(base, ds, gd_iters=0)
        tuned = Individual(programs=[p.clone() for p in programs])
        fit_individual(tuned, ds, gd_iters=10, lr=0.1)
        if tuned.train_mse > base.train_mse + 1e-12:
            worse += 1
        if tuned.train_mse < base.train_mse * 0.999:
            improved += 1
    assert worse == 0
    assert improved > 5  # refinement helps at least sometimes


def test_predict_individual_requires_fit():
    ind = Individual(programs=[parse("sin(1.0*x1)")])
    with pytest.raises(ValueError):
        predict_individual(ind, np.ones((3, 1)))


def test_score_model_fields():
    ds = synth_problem("sum-sq", n=60, seed=7)
    ind = _sum_sq_individual()
    fm = fit_individual(ind, ds, ridge_lambda=1e-7, gd_iters=0)
    scores = score_model(fm, ds)
    assert scores.mse < 1e-12 and scores.r2 > 1.0 - 1e-9
    assert scores.complexity == sum(p.node_count for p in ind.programs)
    assert 0.0 <= scores.entanglement <= 1.0


def test_model_serialization_round_trip(tmp_path):
    ds = synth_problem("poly-prod", n=90, seed=8)
    ind = Individual(programs=[parse("(1.0*x1 * 1.0*x2)"),
                               parse("(1.0*x2 * 1.0*x3)")])
    fm = fit_individual(ind, ds, gd_iters=5)
    path = tmp_path / "model.json"
    save_model(fm, str(path))
    loaded = load_model(str(path))
    np.testing.assert_array_equal(loaded.predict(ds.X), fm.predict(ds.X))
    # a saved copy of the loaded model is byte identical
    path2 = tmp_path / "model2.json"
    save_model(loaded, str(path2))
    assert path.read_bytes() == path2.read_bytes()


def test_model_from_dict_missing_field():
    doc = {"intercept": 0.0}
    with pytest.raises(ValueError, match="missing"):
        model_from_dict(doc)


def test_model_dict_is_json_clean():
    ds = synth_problem("sum-sq", n=40, seed=9)
    fm = fit_individual(_sum_sq_individual(), ds, gd_iters=0)
    doc = model_to_dict(fm)
    json.dumps(doc)  # no numpy scalars allowed anywhere
    assert doc["lambda"] == 1e-3
    assert len(doc["features"]) == 2
