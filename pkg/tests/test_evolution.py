"""Selection, survival, and the generational loop."""

import itertools

import numpy as np
import pytest

from mgpr.datasets import SplitSpec, synth_problem, train_test_split
from mgpr.evolution import (
    EvolutionConfig,
    Population,
    eps_lexicase_select,
    evolve,
    init_population,
    nsga2_select_indices,
    nsga2_survive,
)
from mgpr.model import model_to_dict
from mgpr.program import Individual
from mgpr.variation import VariationConfig


def _error_population(rows):
    members = [Individual(programs=[], train_errors=np.asarray(row, float))
               for row in rows]
    return Population.from_members(members)


def _enumerate_lexicase(errors):
    """Exact selection distribution over all case orderings.

    Mirrors the selector's contract: epsilon per case is the MAD over
    the whole population, the elite is the best among current
    candidates, and ties at the end split uniformly.
    """
    errors = np.asarray(errors, float)
    n, n_cases = errors.shape
    med = np.median(errors, axis=0)
    mads = np.median(np.abs(errors - med), axis=0)
    probs = np.zeros(n)
    perms = list(itertools.permutations(range(n_cases)))
    for perm in perms:
        candidates = list(range(n))
        for case in perm:
            col = [errors[i, case] for i in candidates]
            cutoff = min(col) + mads[case]
            candidates = [i for i, e in zip(candidates, col) if e <= cutoff]
            if len(candidates) == 1:
                break
        for i in candidates:
            probs[i] += 1.0 / (len(perms) * len(candidates))
    return probs


def test_population_case_table():
    pop = _error_population([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]])
    assert pop.case_errors.shape == (3, 2)
    np.testing.assert_array_equal(pop.case_mads, [2.0, 2.0])
    assert len(pop) == 3


def test_lexicase_picks_dominant_member():
    # MADs are 0.1 per case, far below the runner-up's errors
    pop = _error_population([[0.0, 0.0], [1.0, 1.0], [1.1, 1.1]])
    rng = np.random.default_rng(0)
    picks = {eps_lexicase_select(pop, rng) for _ in range(50)}
    assert picks == {0}


def test_lexicase_hand_table_probabilities():
    # case 0 separates A from B only outside the MAD band; case 1 has
    # zero MAD, so its filter is exact
    rows = [[0.0, 0.5], [0.2, 0.5], [1.0, 0.0]]
    want = _enumerate_lexicase(rows)
    np.testing.assert_allclose(want, [0.25, 0.25, 0.5], atol=1e-15)
    pop = _error_population(rows)
    rng = np.random.default_rng(1)
    n = 20_000
    counts = np.zeros(3)
    for _ in range(n):
        counts[eps_lexicase_select(pop, rng)] += 1
    freq = counts / n
    sigma = np.sqrt(want * (1 - want) / n)
    assert np.all(np.abs(freq - want) <= 4 * sigma)


def test_lexicase_matches_enumeration_on_random_tables():
    rng = np.random.default_rng(2)
    for _ in range(3):
        rows = rng.choice([0.0, 0.1, 0.5, 1.0], size=(4, 3))
        want = _enumerate_lexicase(rows)
        pop = _error_population(rows)
        n = 30_000
        counts = np.zeros(4)
        for _ in range(n):
            counts[eps_lexicase_select(pop, rng)] += 1
        freq = counts / n
        sigma = np.sqrt(np.maximum(want * (1 - want) / n, 1e-12))
        assert np.all(np.abs(freq - want) <= 4.5 * sigma)


def test_nsga2_hand_front_structure():
    # five-point diagonal front plus one dominated straggler
    obj1 = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 3.0])
    obj2 = np.array([5.0, 4.0, 3.0, 2.0, 1.0, 4.0])
    assert set(nsga2_select_indices(obj1, obj2, 6)) == set(range(6))
    assert set(nsga2_select_indices(obj1, obj2, 5)) == {0, 1, 2, 3, 4}
    # boundary points survive first, then crowding/index order
    assert set(nsga2_select_indices(obj1, obj2, 4)) == {0, 1, 2, 4}
    assert set(nsga2_select_indices(obj1, obj2, 2)) == {0, 4}
    with pytest.raises(ValueError):
        nsga2_select_indices(obj1, obj2, 7)


def test_nsga2_duplicates_share_front():
    obj1 = np.array([1.0, 1.0])
    obj2 = np.array([2.0, 2.0])
    assert list(nsga2_select_indices(obj1, obj2, 1)) == [0]


def test_nsga2_survive_trims_population():
    ds = synth_problem("sum-sq", n=40, seed=3)
    cfg = _tiny_cfg(population_size=8, generations=1)
    pop = init_population(cfg, ds)
    survivors = nsga2_survive(pop, 4)
    assert len(survivors) == 4
    best = min(m.train_mse for m in pop.members)
    assert any(m.train_mse == best for m in survivors.members)


def _tiny_cfg(**kw):
    vkw = {}
    if "max_dimensionality" in kw:
        vkw["max_dimensionality"] = kw.pop("max_dimensionality")
    defaults = dict(population_size=10, generations=3, seed=0,
                    variation=VariationConfig(max_depth=4,
                                              max_dimensionality=6, **vkw))
    defaults.update(kw)
    return EvolutionConfig(**defaults)


def test_init_population_shape_and_limits():
    ds = synth_problem("poly-prod", n=50, seed=4)
    cfg = _tiny_cfg(population_size=20)
    pop = init_population(cfg, ds)
    assert len(pop) == 20
    for m in pop.members:
        assert 1 <= m.n_features_out <= 6
        assert all(p.depth <= 4 for p in m.programs)
        assert m.train_mse is not None and np.isfinite(m.train_mse)


def test_init_population_deterministic():
    from mgpr.program import render
    ds = synth_problem("poly-prod", n=50, seed=4)
    cfg = _tiny_cfg(population_size=12)
    a = init_population(cfg, ds)
    b = init_population(cfg, ds)
    for ma, mb in zip(a.members, b.members):
        assert [render(p) for p in ma.programs] == [render(p)
                                                    for p in mb.programs]


def _split_problem(name, n, seed):
    ds = synth_problem(name, n=n, seed=seed)
    return train_test_split(ds, SplitSpec(0.25, seed=seed))


def test_evolve_history_and_model():
    train, val = _split_problem("sum-sq", 80, 5)
    cfg = _tiny_cfg(population_size=14, generations=5)
    model, history = evolve(cfg, train, val)
    assert [r.generation for r in history.records] == [1, 2, 3, 4, 5]
    vals = [r.best_val_mse for r in history.records]
    assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))
    assert history.best_val_mse == vals[-1]
    assert 0 <= history.best_generation <= 5
    yhat = model.predict(val.X)
    assert yhat.shape == (val.n_samples,)
    assert np.all(np.isfinite(yhat))


def test_evolve_is_deterministic():
    train, val = _split_problem("trig-mix", 70, 6)
    cfg = _tiny_cfg(population_size=12, generations=3)
    m1, _ = evolve(cfg, train, val)
    m2, _ = evolve(cfg, train, val)
    assert model_to_dict(m1) == model_to_dict(m2)


def test_evolve_parallel_fit_matches_serial():
    train, val = _split_problem("ratio", 60, 7)
    cfg = _tiny_cfg(population_size=10, generations=2)
    serial, _ = evolve(cfg, train, val, n_jobs=1)
    parallel, _ = evolve(cfg, train, val, n_jobs=2)
    assert model_to_dict(serial) == model_to_dict(parallel)


def test_evolve_tracks_crossover_child_entanglement():
    train, val = _split_problem("poly-prod", 60, 8)
    cfg = _tiny_cfg(population_size=16, generations=4)
    _, history = evolve(cfg, train, val)
    ents = history.xo_child_entanglements
    assert len(ents) > 0
    assert all(0.0 <= e <= 1.0 for e in ents)


def test_evolution_config_validation():
    with pytest.raises(ValueError):
        _tiny_cfg(population_size=1)
    with pytest.raises(ValueError):
        _tiny_cfg(generations=0)
    with pytest.raises(ValueError):
        _tiny_cfg(lr=0.0)
