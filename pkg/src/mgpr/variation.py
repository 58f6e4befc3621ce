"""Offspring operators: feedback-weighted crossovers and mutations.

Every operator takes fitted parents and returns a fresh unfitted child;
parents are never mutated and child programs are always cloned so no
weight array is shared between individuals.  Feature choices inside a
parent are weighted by its feedback probabilities, which concentrate
variation on features whose coefficients carry little weight.
"""

from dataclasses import dataclass

import numpy as np

from .datasets import Dataset
from .program import (
    AttrLeaf,
    ConstLeaf,
    Individual,
    OpNode,
    Program,
    position_spans,
    positions,
    random_program,
    replace_at,
)
from .operators import BINARY_OPERATORS, UNARY_OPERATORS

XO_TYPES = ("standard", "resxo", "stagexo")

RESIDUAL_EPS = 1e-12
SUBTREE_RETRIES = 10


@dataclass(frozen=True)
class VariationConfig:
    p_crossover: float = 0.75
    p_feature_xo: float = 0.75
    xo_type: str = "standard"
    feedback_gamma: float = 0.25
    softmax_norm: bool = False
    max_depth: int = 6
    max_dimensionality: int = 50

    def __post_init__(self):
        for name in ("p_crossover", "p_feature_xo", "feedback_gamma"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.xo_type not in XO_TYPES:
            raise ValueError(
                f"xo_type must be one of {XO_TYPES}, got {self.xo_type!r}")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.max_dimensionality < 1:
            raise ValueError("max_dimensionality must be >= 1")


def default_max_dimensionality(n_attributes: int) -> int:
    return min(50, 2 * n_attributes)


def feedback_probs(beta, gamma: float, softmax_norm: bool) -> np.ndarray:
    """Per-feature variation probabilities from coefficient magnitudes.

    Features with small normalized |beta| get larger probability; gamma
    blends that signal with the uniform distribution.  An all-zero beta
    carries no signal and yields the uniform distribution.
    """
    beta = np.asarray(beta, dtype=np.float64)
    m = beta.shape[0]
    if m < 1:
        raise ValueError("feedback_probs needs at least one coefficient")
    total = np.sum(np.abs(beta))
    if total == 0.0:
        return np.full(m, 1.0 / m)
    bt = np.abs(beta) / total
    if softmax_norm:
        e = np.exp(1.0 - bt)
        s = e / np.sum(e)
    elif m == 1:
        s = np.ones(1)
    else:
        w = 1.0 - bt
        s = w / np.sum(w)
    return gamma * s + (1.0 - gamma) / m


def _require_fitted(ind: Individual, who: str) -> None:
    if ind.coefs is None or ind.train_phi is None:
        raise ValueError(f"{who} parent must be fitted before variation")


def feature_crossover(p1: Individual, p2: Individual, probs1, probs2,
                      rng: np.random.Generator) -> Individual:
    """Replace one feature of p1 (chosen by probs1) with one of p2's."""
    d = int(rng.choice(len(p1.programs), p=probs1))
    j = int(rng.choice(len(p2.programs), p=probs2))
    child = p1.clone_programs()
    child[d] = p2.programs[j].clone()
    return Individual(child)


def _spliced(recipient: Program, donor: Program, k1: int, k2: int) -> Program:
    r_pos = positions(recipient.root)
    r_spans = position_spans(recipient.root)
    d_spans = position_spans(donor.root)
    path = r_pos[k1][0]
    d_node, ds_, dt = d_spans[k2]
    _, rs, rt = r_spans[k1]
    root = replace_at(recipient.root, path, d_node)
    weights = np.concatenate([recipient.weights[:rs],
                              donor.weights[ds_:dt],
                              recipient.weights[rt:]])
    return Program(root, weights)


def subtree_crossover(p1: Individual, p2: Individual, probs1,
                      rng: np.random.Generator,
                      max_depth: int = 6) -> Individual:
    """Splice a random subtree of a random p2 feature into a p1 feature.

    Splices that would exceed ``max_depth`` are rejected; after
    ``SUBTREE_RETRIES`` failures the child is a plain copy of p1.
    """
    d = int(rng.choice(len(p1.programs), p=probs1))
    j = int(rng.integers(len(p2.programs)))
    recipient = p1.programs[d]
    donor = p2.programs[j]
    n1 = recipient.node_count
    n2 = donor.node_count
    for _ in range(SUBTREE_RETRIES):
        k1 = int(rng.integers(n1))
        k2 = int(rng.integers(n2))
        candidate = _spliced(recipient, donor, k1, k2)
        if candidate.depth <= max_depth:
            child = p1.clone_programs()
            child[d] = candidate
            return Individual(child)
    return Individual(p1.clone_programs())


def _point_mutated(program: Program, rng: np.random.Generator,
                   n_features: int, p_attr: float = 0.8) -> Program:
    """Swap one node for another of the same arity; shape is preserved."""
    pos = positions(program.root)
    k = int(rng.integers(len(pos)))
    path, node = pos[k]
    if isinstance(node, OpNode):
        group = BINARY_OPERATORS if node.op.arity == 2 else UNARY_OPERATORS
        others = [op for op in group if op.symbol != node.op.symbol]
        new_node = OpNode(others[int(rng.integers(len(others)))],
                          node.children)
    else:
        if rng.random() < p_attr:
            new_node = AttrLeaf(int(rng.integers(n_features)))
        else:
            new_node = ConstLeaf(float(rng.uniform(-1.0, 1.0)))
    # same shape, so the weight slots line up unchanged
    return Program(replace_at(program.root, path, new_node),
                   program.weights.copy())


def mutate(p1: Individual, probs1, cfg: VariationConfig,
           rng: np.random.Generator, n_features: int) -> Individual:
    """Point mutation, feature deletion, or feature addition.

    The kind is uniform over whichever of the three are currently legal
    (deletion needs m > 1, addition needs m < max_dimensionality).
    """
    m = len(p1.programs)
    kinds = ["point"]
    if m > 1:
        kinds.append("delete")
    if m < cfg.max_dimensionality:
        kinds.append("add")
    kind = kinds[int(rng.integers(len(kinds)))]
    child = p1.clone_programs()
    if kind == "add":
        child.append(random_program(rng, n_features, cfg.max_depth))
        return Individual(child)
    d = int(rng.choice(m, p=probs1))
    if kind == "delete":
        del child[d]
        return Individual(child)
    child[d] = _point_mutated(p1.programs[d], rng, n_features)
    return Individual(child)


def _abs_pearson(columns: np.ndarray, r: np.ndarray) -> np.ndarray:
    """|Pearson| of each centered column against r; undefined pairs get 0."""
    rc = r - r.mean()
    rn = np.linalg.norm(rc)
    cn = np.linalg.norm(columns, axis=0)
    denom = cn * rn
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(denom > 0.0, np.abs(columns.T @ rc) / denom, 0.0)
    return corr


def res_xo(p1: Individual, p2: Individual, ds: Dataset, probs1,
           rng: np.random.Generator) -> Individual:
    """Swap out one p1 feature for the p2 feature most correlated with
    the residual of p1's model without that feature.

    The discarded slot is chosen by probs1.  If every p2 feature is
    constant on the training data the child is a copy of p1.
    """
    _require_fitted(p1, "first")
    _require_fitted(p2, "second")
    d = int(rng.choice(len(p1.programs), p=probs1))
    z_d = 0.0
    if not p1.constant_mask[d]:
        z_d = (p1.train_phi[:, d] - p1.means[d]) / p1.stds[d]
    r = ds.y - p1.train_yhat + p1.coefs[d] * z_d
    usable = ~p2.constant_mask
    if not np.any(usable):
        return Individual(p1.clone_programs())
    cols = p2.train_phi[:, usable]
    corr = _abs_pearson(cols - cols.mean(axis=0), r)
    j = int(np.flatnonzero(usable)[np.argmax(corr)])
    child = p1.clone_programs()
    child[d] = p2.programs[j].clone()
    return Individual(child)


def stage_xo(p1: Individual, p2: Individual, ds: Dataset) -> Individual:
    """Rebuild a representation by greedy forward-stagewise selection.

    The candidate pool holds all non-constant features of both parents
    (p1's first) with centered training outputs.  Starting from the
    centered target, the pool feature most correlated with the current
    residual is moved to the child and its least-squares fit is
    subtracted from the residual, until the child has as many features
    as p1.  A vanishing residual falls back to pool order; an exhausted
    pool falls back to p1's not-yet-used features, so the child always
    has exactly p1's dimensionality.
    """
    _require_fitted(p1, "first")
    _require_fitted(p2, "second")
    m1 = len(p1.programs)
    pool = []
    for parent, origin in ((p1, 0), (p2, 1)):
        for i, prog in enumerate(parent.programs):
            if parent.constant_mask[i]:
                continue
            col = parent.train_phi[:, i]
            pool.append((origin, i, prog, col - col.mean()))
    r = ds.y - ds.y.mean()
    child = []
    used_p1 = set()

    def take(entry):
        origin, i, prog, _ = entry
        child.append(prog.clone())
        if origin == 0:
            used_p1.add(i)

    while len(child) < m1 and pool:
        if np.linalg.norm(r) < RESIDUAL_EPS:
            for entry in pool[:m1 - len(child)]:
                take(entry)
            break
        cols = np.stack([e[3] for e in pool], axis=1)
        corr = _abs_pearson(cols, r)
        k = int(np.argmax(corr))
        phi_star = pool[k][3]
        b = float(phi_star @ r) / float(phi_star @ phi_star)
        r = r - b * phi_star
        take(pool.pop(k))

    if len(child) < m1:
        for i, prog in enumerate(p1.programs):
            if len(child) == m1:
                break
            if i not in used_p1:
                child.append(prog.clone())
    return Individual(child)
