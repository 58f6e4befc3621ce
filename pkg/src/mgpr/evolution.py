"""Generational engine: initialize, select, vary, survive, track.

Parents are chosen by epsilon-lexicase selection over per-case squared
errors; survival truncates the combined parent and offspring pool with
NSGA-II non-dominated sorting on (training MSE, node count).  Every
offspring slot derives a private generator from (seed, generation,
slot), and no randomness is consumed outside those streams, so results
are byte-identical regardless of how fitting is parallelized.
"""

import sys
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .datasets import Dataset
from .model import (
    EntanglementUndefined,
    FittedModel,
    entanglement,
    fit_individual,
    mse,
    predict_individual,
)
from .program import Individual, random_program
from .variation import (
    VariationConfig,
    feature_crossover,
    feedback_probs,
    mutate,
    res_xo,
    stage_xo,
    subtree_crossover,
)


@dataclass(frozen=True)
class EvolutionConfig:
    population_size: int = 100
    generations: int = 50
    variation: VariationConfig = field(default_factory=VariationConfig)
    ridge_lambda: float = 1e-3
    gd_iters: int = 10
    lr: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if self.ridge_lambda < 0:
            raise ValueError("lambda must be >= 0")
        if self.gd_iters < 0:
            raise ValueError("gd_iters must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")


@dataclass
class Population:
    """Fitted members plus the per-case error table lexicase needs."""

    members: list
    case_errors: np.ndarray
    case_mads: np.ndarray

    @classmethod
    def from_members(cls, members) -> "Population":
        errors = np.stack([m.train_errors for m in members])
        med = np.median(errors, axis=0)
        mads = np.median(np.abs(errors - med), axis=0)
        return cls(members, errors, mads)

    def __len__(self):
        return len(self.members)


@dataclass
class GenerationRecord:
    generation: int
    best_train_mse: float
    median_train_mse: float
    median_complexity: float
    median_entanglement: float
    best_val_mse: float


@dataclass
class RunHistory:
    records: list = field(default_factory=list)
    best_individual: Optional[Individual] = None
    best_val_mse: float = np.inf
    best_generation: int = -1
    # entanglement of every child the configured feature-level
    # crossover produced, across all generations
    xo_child_entanglements: list = field(default_factory=list)


def _slot_rng(seed: int, generation: int, slot: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((seed, generation, slot)))


def _fit_one(ind: Individual, ds: Dataset, ridge_lambda: float,
             gd_iters: int, lr: float) -> Individual:
    fit_individual(ind, ds, ridge_lambda, gd_iters, lr)
    return ind


def _fit_all(inds, ds: Dataset, cfg: EvolutionConfig, n_jobs: int):
    if n_jobs == 1:
        return [_fit_one(ind, ds, cfg.ridge_lambda, cfg.gd_iters, cfg.lr)
                for ind in inds]
    from joblib import Parallel, delayed
    return Parallel(n_jobs=n_jobs)(
        delayed(_fit_one)(ind, ds, cfg.ridge_lambda, cfg.gd_iters, cfg.lr)
        for ind in inds)


def init_population(cfg: EvolutionConfig, ds: Dataset,
                    rng: Optional[np.random.Generator] = None,
                    n_jobs: int = 1) -> Population:
    """Ramped half-and-half initialization, every member fitted.

    Without an explicit generator each slot uses its own stream
    (generation index 0), matching the offspring convention.
    """
    vcfg = cfg.variation
    d = ds.n_attributes
    members = []
    for slot in range(cfg.population_size):
        slot_rng = rng if rng is not None else _slot_rng(cfg.seed, 0, slot)
        m = int(slot_rng.integers(1, vcfg.max_dimensionality + 1))
        method = ("full", "grow")[slot % 2]
        if vcfg.max_depth >= 2:
            depth = 2 + (slot // 2) % (vcfg.max_depth - 1)
        else:
            depth = 1
        members.append(Individual(
            [random_program(slot_rng, d, depth, method=method)
             for _ in range(m)]))
    members = _fit_all(members, ds, cfg, n_jobs)
    return Population.from_members(members)


def _lexicase_index(errors: np.ndarray, mads: np.ndarray,
                    rng: np.random.Generator) -> int:
    candidates = np.arange(errors.shape[0])
    for case in rng.permutation(errors.shape[1]):
        col = errors[candidates, case]
        candidates = candidates[col <= col.min() + mads[case]]
        if candidates.size == 1:
            return int(candidates[0])
    return int(candidates[rng.integers(candidates.size)])


def eps_lexicase_select(pop: Population, rng: np.random.Generator) -> int:
    """Pick one parent index; epsilon per case is the population MAD."""
    return _lexicase_index(pop.case_errors, pop.case_mads, rng)


def _crowding_distance(f1: np.ndarray, f2: np.ndarray) -> np.ndarray:
    k = f1.size
    dist = np.zeros(k)
    for f in (f1, f2):
        order = np.argsort(f, kind="stable")
        dist[order[0]] = dist[order[-1]] = np.inf
        span = f[order[-1]] - f[order[0]]
        if span > 0 and k > 2:
            dist[order[1:-1]] += (f[order[2:]] - f[order[:-2]]) / span
    return dist


def nsga2_select_indices(obj1: np.ndarray, obj2: np.ndarray,
                         target_size: int) -> np.ndarray:
    """Survivor indices (ascending) by non-dominated rank then crowding."""
    n = obj1.size
    if target_size > n:
        raise ValueError(f"cannot keep {target_size} of {n} members")
    le1 = obj1[:, None] <= obj1[None, :]
    le2 = obj2[:, None] <= obj2[None, :]
    lt = (obj1[:, None] < obj1[None, :]) | (obj2[:, None] < obj2[None, :])
    dominates = le1 & le2 & lt
    n_dom = dominates.sum(axis=0)
    alive = np.ones(n, dtype=bool)
    chosen = []
    while len(chosen) < target_size:
        front = np.flatnonzero(alive & (n_dom <= 0))
        if len(chosen) + front.size <= target_size:
            chosen.extend(front.tolist())
        else:
            crowd = _crowding_distance(obj1[front], obj2[front])
            order = np.lexsort((front, -crowd))
            chosen.extend(front[order[:target_size - len(chosen)]].tolist())
            break
        alive[front] = False
        n_dom = n_dom - dominates[front].sum(axis=0)
    return np.sort(np.asarray(chosen, dtype=np.intp))


def nsga2_survive(pool: Population, target_size: int) -> Population:
    obj1 = np.asarray([m.train_mse for m in pool.members])
    obj2 = np.asarray([float(m.complexity) for m in pool.members])
    idx = nsga2_select_indices(obj1, obj2, target_size)
    return Population.from_members([pool.members[i] for i in idx])


def _produce_offspring(pop: Population, probs, vcfg: VariationConfig,
                       train: Dataset, rng: np.random.Generator):
    """One child plus a flag marking feature-level crossover products."""
    if rng.random() < vcfg.p_crossover:
        feature_level = rng.random() < vcfg.p_feature_xo
        i1 = eps_lexicase_select(pop, rng)
        i2 = eps_lexicase_select(pop, rng)
        p1, p2 = pop.members[i1], pop.members[i2]
        if not feature_level:
            return subtree_crossover(p1, p2, probs[i1], rng,
                                     vcfg.max_depth), False
        if vcfg.xo_type == "standard":
            return feature_crossover(p1, p2, probs[i1], probs[i2], rng), True
        if vcfg.xo_type == "resxo":
            return res_xo(p1, p2, train, probs[i1], rng), True
        return stage_xo(p1, p2, train), True
    i1 = eps_lexicase_select(pop, rng)
    return mutate(pop.members[i1], probs[i1], vcfg, rng,
                  train.n_attributes), False


def _val_mse(ind: Individual, val: Dataset) -> float:
    v = mse(predict_individual(ind, val.X), val.y)
    return v if np.isfinite(v) else np.inf


def _snapshot(ind: Individual) -> Individual:
    out = Individual([p.clone() for p in ind.programs])
    out.coefs = ind.coefs.copy()
    out.intercept = ind.intercept
    out.means = ind.means.copy()
    out.stds = ind.stds.copy()
    out.constant_mask = ind.constant_mask.copy()
    out.train_mse = ind.train_mse
    return out


def _median_entanglement(members) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EntanglementUndefined)
        vals = [entanglement(m.train_phi) for m in members]
    return float(np.median(vals))


def evolve(cfg: EvolutionConfig, train: Dataset, val: Dataset,
           n_jobs: int = 1, verbose: bool = False):
    """Run the full loop; returns (FittedModel, RunHistory).

    The returned model is the population member with the lowest
    validation MSE seen after any survival step, ties broken by lower
    complexity, then by earliest appearance.
    """
    if train.n_attributes != val.n_attributes:
        raise ValueError("train and validation attribute counts differ")
    vcfg = cfg.variation
    history = RunHistory()
    best_cx = None

    pop = init_population(cfg, train, n_jobs=n_jobs)

    def consider(members, generation):
        nonlocal best_cx
        for m in members:
            v = _val_mse(m, val)
            if (v < history.best_val_mse
                    or (v == history.best_val_mse and best_cx is not None
                        and m.complexity < best_cx)):
                history.best_val_mse = v
                history.best_individual = _snapshot(m)
                history.best_generation = generation
                best_cx = m.complexity

    consider(pop.members, 0)

    for gen in range(1, cfg.generations + 1):
        probs = [feedback_probs(m.coefs, vcfg.feedback_gamma,
                                vcfg.softmax_norm) for m in pop.members]
        offspring, from_xo = [], []
        for slot in range(cfg.population_size):
            child, used_xo = _produce_offspring(
                pop, probs, vcfg, train, _slot_rng(cfg.seed, gen, slot))
            offspring.append(child)
            from_xo.append(used_xo)
        offspring = _fit_all(offspring, train, cfg, n_jobs)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EntanglementUndefined)
            history.xo_child_entanglements.extend(
                entanglement(child.train_phi)
                for child, used in zip(offspring, from_xo) if used)
        pool = Population.from_members(pop.members + offspring)
        pop = nsga2_survive(pool, cfg.population_size)
        consider(pop.members, gen)

        train_mses = np.asarray([m.train_mse for m in pop.members])
        complexities = np.asarray([float(m.complexity) for m in pop.members])
        history.records.append(GenerationRecord(
            generation=gen,
            best_train_mse=float(train_mses.min()),
            median_train_mse=float(np.median(train_mses)),
            median_complexity=float(np.median(complexities)),
            median_entanglement=_median_entanglement(pop.members),
            best_val_mse=float(history.best_val_mse),
        ))
        if verbose:
            print(f"gen {gen}/{cfg.generations} "
                  f"best_train_mse={train_mses.min():.6g} "
                  f"best_val_mse={history.best_val_mse:.6g}",
                  file=sys.stderr)

    model = FittedModel(history.best_individual, cfg.ridge_lambda,
                        train.attribute_names)
    return model, history
