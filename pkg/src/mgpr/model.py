"""Linear models over program features: fit, refine, predict, score.

An individual's programs are evaluated into a feature matrix, each
column standardized to zero mean and unit variance (population std),
and a ridge solve produces the coefficients.  Edge weights are then
refined by a few gradient-descent steps on the training MSE with the
coefficients and normalization constants held fixed, followed by one
ridge re-fit.  A refinement that ends up worse than the plain ridge
pipeline is discarded, so refinement never hurts training MSE.
"""

import json
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np

from .datasets import Dataset
from .program import Individual, parse, render

CONSTANT_STD = 1e-12


class EntanglementUndefined(UserWarning):
    """Fewer than two non-constant features were available."""


class Normalization(NamedTuple):
    z: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    constant_mask: np.ndarray


def normalize_features(phi: np.ndarray) -> Normalization:
    """Standardize columns; constant columns become zeros with std 1."""
    phi = np.asarray(phi, dtype=np.float64)
    means = phi.mean(axis=0)
    stds = phi.std(axis=0)
    constant = stds <= CONSTANT_STD
    stds = np.where(constant, 1.0, stds)
    z = (phi - means) / stds
    z[:, constant] = 0.0
    return Normalization(z, means, stds, constant)


def fit_ridge(z: np.ndarray, y: np.ndarray,
              ridge_lambda: float) -> Tuple[np.ndarray, float]:
    """Solve (ZᵀZ + λI)β = Zᵀ(y − ȳ); the intercept is ȳ.

    Z must be column-centered (normalize_features output qualifies).
    """
    if ridge_lambda < 0:
        raise ValueError(f"lambda must be >= 0, got {ridge_lambda}")
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    intercept = float(y.mean())
    m = z.shape[1]
    if m == 0:
        return np.zeros(0), intercept
    gram = z.T @ z + ridge_lambda * np.eye(m)
    rhs = z.T @ (y - intercept)
    try:
        beta = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError(
            "ridge system is singular; refit with lambda > 0") from None
    if not np.all(np.isfinite(beta)):
        raise np.linalg.LinAlgError(
            "ridge solution is not finite; refit with lambda > 0")
    return beta, intercept


def mse(yhat: np.ndarray, y: np.ndarray) -> float:
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if yhat.shape != y.shape:
        raise ValueError(f"shape mismatch: {yhat.shape} vs {y.shape}")
    if y.size == 0:
        raise ValueError("mse of empty vectors")
    return float(np.mean((yhat - y) ** 2))


def r2(yhat: np.ndarray, y: np.ndarray) -> float:
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if yhat.shape != y.shape:
        raise ValueError(f"shape mismatch: {yhat.shape} vs {y.shape}")
    if y.size < 2:
        raise ValueError("r2 needs at least 2 samples")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot <= 0.0:
        raise ValueError("r2 is undefined for a constant target")
    return 1.0 - float(np.sum((yhat - y) ** 2)) / ss_tot


def entanglement(phi: np.ndarray) -> float:
    """Mean squared pairwise Pearson correlation over feature columns.

    Averaged over ordered pairs i != j, so the value lies in [0, 1].
    Constant columns are excluded; with fewer than two usable columns
    the result is 0 (with a warning when columns were dropped to get
    there).
    """
    phi = np.asarray(phi, dtype=np.float64)
    m_in = phi.shape[1]
    if m_in < 2:
        return 0.0
    # axis-0 std of a bit-identical column can come out ~|c|*eps instead
    # of 0 (summation-order rounding of the mean), which would slip past
    # the threshold and make corrcoef divide 0/0; spread is order-exact
    spread = phi.max(axis=0) - phi.min(axis=0)
    active = phi[:, (phi.std(axis=0) > CONSTANT_STD) & (spread > 0.0)]
    m = active.shape[1]
    if m < 2:
        warnings.warn(
            "entanglement undefined: fewer than 2 non-constant features",
            EntanglementUndefined, stacklevel=2)
        return 0.0
    corr = np.corrcoef(active.T)
    total = float(np.sum(corr ** 2) - m)
    return float(np.clip(total / (m * (m - 1)), 0.0, 1.0))


@dataclass
class Scores:
    mse: float
    r2: float
    entanglement: float
    complexity: int


@dataclass
class FittedModel:
    """Export wrapper around a fitted Individual."""

    individual: Individual
    ridge_lambda: float
    attribute_names: Tuple[str, ...]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return predict_individual(self.individual, X)


def _predict_from_phi(ind: Individual, phi: np.ndarray) -> np.ndarray:
    z = (phi - ind.means) / ind.stds
    z[:, ind.constant_mask] = 0.0
    return ind.intercept + z @ ind.coefs


def predict_individual(ind: Individual, X: np.ndarray) -> np.ndarray:
    if ind.coefs is None:
        raise ValueError("individual is not fitted")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"X must be 2-dimensional, got shape {X.shape}")
    phi = np.column_stack([p.evaluate(X) for p in ind.programs])
    return _predict_from_phi(ind, phi)


def _phi_matrix(tables) -> np.ndarray:
    return np.column_stack([t[-1] for t in tables])


def fit_individual(ind: Individual, ds: Dataset, ridge_lambda: float = 1e-3,
                   gd_iters: int = 10, lr: float = 0.1) -> FittedModel:
    """Fit the linear model over ``ind``'s programs on the training data.

    Populates the individual's fitted fields in place.  With
    ``gd_iters`` > 0, edge weights take up to that many gradient steps
    (coefficients and normalization frozen, steps that raise the MSE
    are reverted) before the final ridge re-fit.
    """
    X = np.ascontiguousarray(ds.X, dtype=np.float64)
    y = ds.y
    tables = [p.evaluate_table(X) for p in ind.programs]
    phi = _phi_matrix(tables)
    norm = normalize_features(phi)
    active = ~norm.constant_mask
    beta_active, intercept = fit_ridge(norm.z[:, active], y, ridge_lambda)
    beta = np.zeros(len(ind.programs))
    beta[active] = beta_active
    yhat = intercept + norm.z @ beta
    base_mse = mse(yhat, y)
    base_weights = None

    if gd_iters > 0 and np.any(active):
        base_weights = [p.weights.copy() for p in ind.programs]
        cur_mse = base_mse
        scale = 2.0 / X.shape[0]
        for _ in range(gd_iters):
            residual = yhat - y
            prev = [p.weights.copy() for p in ind.programs]
            for i, p in enumerate(ind.programs):
                if norm.constant_mask[i] or beta[i] == 0.0 or p.n_weights == 0:
                    continue
                jac = p.gradient(X, values=tables[i])
                grad = (scale * beta[i] / norm.stds[i]) * (jac.T @ residual)
                p.weights -= lr * grad
            new_tables = [p.evaluate_table(X) for p in ind.programs]
            new_phi = _phi_matrix(new_tables)
            z = (new_phi - norm.means) / norm.stds
            z[:, norm.constant_mask] = 0.0
            new_yhat = intercept + z @ beta
            new_mse = mse(new_yhat, y)
            if not np.isfinite(new_mse) or new_mse > cur_mse:
                # deterministic objective: the same step would just be
                # rejected again, so stop refining
                for p, w in zip(ind.programs, prev):
                    p.weights = w
                break
            cur_mse = new_mse
            tables, phi, yhat = new_tables, new_phi, new_yhat

        norm = normalize_features(phi)
        active = ~norm.constant_mask
        beta_active, intercept = fit_ridge(norm.z[:, active], y, ridge_lambda)
        beta = np.zeros(len(ind.programs))
        beta[active] = beta_active
        yhat = intercept + norm.z @ beta
        final_mse = mse(yhat, y)
        if final_mse > base_mse:
            # the re-fit can lose the per-step guarantee, so fall back
            for p, w in zip(ind.programs, base_weights):
                p.weights = w
            tables = [p.evaluate_table(X) for p in ind.programs]
            phi = _phi_matrix(tables)
            norm = normalize_features(phi)
            active = ~norm.constant_mask
            beta_active, intercept = fit_ridge(norm.z[:, active], y,
                                               ridge_lambda)
            beta = np.zeros(len(ind.programs))
            beta[active] = beta_active
            yhat = intercept + norm.z @ beta

    ind.coefs = beta
    ind.intercept = intercept
    ind.means = norm.means
    ind.stds = norm.stds
    ind.constant_mask = norm.constant_mask
    ind.train_phi = phi
    ind.train_yhat = yhat
    ind.train_errors = (yhat - y) ** 2
    ind.train_mse = mse(yhat, y)
    return FittedModel(ind, ridge_lambda, ds.attribute_names)


def score_model(fm: FittedModel, ds: Dataset) -> Scores:
    yhat = fm.predict(ds.X)
    phi = np.column_stack([p.evaluate(ds.X) for p in fm.individual.programs])
    return Scores(mse=mse(yhat, ds.y), r2=r2(yhat, ds.y),
                  entanglement=entanglement(phi),
                  complexity=fm.individual.complexity)


MODEL_SCHEMA_FIELDS = (
    "attribute_names", "coefficients", "constant_mask", "feature_means",
    "feature_stds", "features", "intercept", "lambda", "train_mse",
)


def model_to_dict(fm: FittedModel) -> dict:
    ind = fm.individual
    if ind.coefs is None:
        raise ValueError("cannot serialize an unfitted model")
    return {
        "attribute_names": list(fm.attribute_names),
        "coefficients": [float(b) for b in ind.coefs],
        "constant_mask": [bool(c) for c in ind.constant_mask],
        "feature_means": [float(v) for v in ind.means],
        "feature_stds": [float(v) for v in ind.stds],
        "features": [render(p) for p in ind.programs],
        "intercept": float(ind.intercept),
        "lambda": float(fm.ridge_lambda),
        "train_mse": float(ind.train_mse),
    }


def model_from_dict(doc: dict) -> FittedModel:
    missing = [k for k in MODEL_SCHEMA_FIELDS if k not in doc]
    if missing:
        raise ValueError(f"model document missing fields: {missing}")
    ind = Individual(programs=[parse(s) for s in doc["features"]])
    ind.coefs = np.asarray(doc["coefficients"], dtype=np.float64)
    ind.constant_mask = np.asarray(doc["constant_mask"], dtype=bool)
    ind.means = np.asarray(doc["feature_means"], dtype=np.float64)
    ind.stds = np.asarray(doc["feature_stds"], dtype=np.float64)
    ind.intercept = float(doc["intercept"])
    ind.train_mse = float(doc["train_mse"])
    return FittedModel(ind, float(doc["lambda"]),
                       tuple(doc["attribute_names"]))


def save_model(fm: FittedModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(fm), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_model(path: str) -> FittedModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
