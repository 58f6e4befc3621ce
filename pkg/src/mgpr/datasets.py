"""Tabular regression data: loading, validation, splitting, synthetic problems.

Datasets are immutable once constructed (arrays are marked read-only) so
they can be shared freely across parallel workers.  Splitting and fold
assignment shuffle with numpy's PCG64 generator seeded from the split
spec, which makes every partition a pure function of (data, spec).
"""

import csv
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np


class DatasetError(ValueError):
    """Raised for malformed input data or invalid split requests."""


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    attribute_names: Tuple[str, ...] = ()
    name: str = ""

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        y = np.array(self.y, dtype=np.float64)
        if X.ndim != 2:
            raise DatasetError(f"X must be 2-dimensional, got shape {X.shape}")
        if y.ndim != 1:
            raise DatasetError(f"y must be 1-dimensional, got shape {y.shape}")
        n, d = X.shape
        if n < 1 or d < 1:
            raise DatasetError("empty dataset")
        if y.shape[0] != n:
            raise DatasetError(
                f"X has {n} rows but y has {y.shape[0]} entries")
        if not np.all(np.isfinite(X)):
            i, j = np.argwhere(~np.isfinite(X))[0]
            raise DatasetError(
                f"non-finite value in X at row {i}, column {j}")
        if not np.all(np.isfinite(y)):
            i = int(np.flatnonzero(~np.isfinite(y))[0])
            raise DatasetError(f"non-finite target at row {i}")
        names = tuple(self.attribute_names) or tuple(
            f"x{j + 1}" for j in range(d))
        if len(names) != d:
            raise DatasetError(
                f"{len(names)} attribute names for {d} columns")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "attribute_names", names)

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_attributes(self) -> int:
        return self.X.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.X[idx], self.y[idx], self.attribute_names,
                       self.name)


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.25
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise DatasetError(
                f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if self.folds < 2:
            raise DatasetError(f"folds must be >= 2, got {self.folds}")
        if self.seed < 0:
            raise DatasetError("seed must be non-negative")


def read_csv_matrix(path: str) -> Tuple[Tuple[str, ...], np.ndarray]:
    """Read every column of a UTF-8 comma-separated file as numbers.

    Returns (column names, matrix).  Cell errors are reported with
    1-based file row numbers (the header is row 1) and the column name.
    """
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise DatasetError(f"no such file: {path}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"empty dataset: {path} has no header row")
        header = tuple(h.strip() for h in header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise DatasetError(
                    f"row {lineno} of {path} has {len(row)} cells, "
                    f"expected {len(header)}")
            parsed = []
            for i, cell in enumerate(row):
                try:
                    value = float(cell)
                except ValueError:
                    raise DatasetError(
                        f"non-numeric cell {cell.strip()!r} at row {lineno}, "
                        f"column {header[i]!r} of {path}") from None
                if not np.isfinite(value):
                    raise DatasetError(
                        f"non-finite cell {cell.strip()!r} at row {lineno}, "
                        f"column {header[i]!r} of {path}")
                parsed.append(value)
            rows.append(parsed)
        if not rows:
            raise DatasetError(f"empty dataset: {path} has a header row only")
    return header, np.asarray(rows, dtype=np.float64)


def load_csv(path: str, target_column: str = "y") -> Dataset:
    """Read a CSV with one header row; the target column becomes ``y``.

    Remaining columns form ``X`` in file order.
    """
    header, table = read_csv_matrix(path)
    if target_column not in header:
        raise DatasetError(
            f"target column {target_column!r} not in header "
            f"{list(header)} of {path}")
    t = header.index(target_column)
    attr_names = tuple(h for i, h in enumerate(header) if i != t)
    if not attr_names:
        raise DatasetError(f"{path} has no attribute columns")
    keep = [i for i in range(len(header)) if i != t]
    return Dataset(table[:, keep], table[:, t], attr_names, name=path)


def split_indices(n: int, spec: SplitSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Deterministic (train, test) row indices, each sorted ascending."""
    if spec.test_fraction * n < 1.0:
        raise DatasetError(
            f"test_fraction {spec.test_fraction} selects no rows of {n}")
    n_test = min(max(int(round(spec.test_fraction * n)), 1), n - 1)
    perm = np.random.default_rng(spec.seed).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def train_test_split(ds: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset]:
    if ds.n_samples < 2:
        raise DatasetError("cannot split a dataset with fewer than 2 rows")
    train_idx, test_idx = split_indices(ds.n_samples, spec)
    return ds.subset(train_idx), ds.subset(test_idx)


def kfold_indices(n: int, spec: SplitSpec) -> list:
    """Fold-wise (train, val) indices; val folds partition range(n)."""
    if spec.folds > n:
        raise DatasetError(f"{spec.folds} folds for {n} rows")
    perm = np.random.default_rng(spec.seed).permutation(n)
    chunks = np.array_split(perm, spec.folds)
    out = []
    for k in range(spec.folds):
        val = np.sort(chunks[k])
        train = np.sort(np.concatenate(
            [chunks[j] for j in range(spec.folds) if j != k]))
        out.append((train, val))
    return out


def kfold(ds: Dataset, spec: SplitSpec) -> list:
    return [(ds.subset(tr), ds.subset(va))
            for tr, va in kfold_indices(ds.n_samples, spec)]


@dataclass(frozen=True)
class SynthProblem:
    """One synthetic generator: d uniform attributes, a formula, noise σ."""

    n_attributes: int
    low: float
    high: float
    sigma: float
    formula: str
    fn: callable = field(repr=False, compare=False)


def _sum_sq(X):
    return X[:, 0] + X[:, 1] ** 2


def _linear_mix(X):
    return 3 * X[:, 0] - 2 * X[:, 1] + 0.5 * X[:, 2] + X[:, 3] - X[:, 4]


def _poly_prod(X):
    return X[:, 0] * X[:, 1] + X[:, 1] * X[:, 2] + X[:, 0] * X[:, 2]


def _trig_mix(X):
    return np.sin(X[:, 0]) + np.cos(2.0 * X[:, 1])


def _ratio(X):
    return X[:, 0] / (1.0 + X[:, 1] ** 2)


def _exp_bump(X):
    return np.exp(-X[:, 0] ** 2) + 0.5 * X[:, 1]


def _tanh_step(X):
    return np.tanh(3.0 * X[:, 0]) + X[:, 1] * X[:, 2]


def _friedman1(X):
    return (10.0 * np.sin(np.pi * X[:, 0] * X[:, 1])
            + 20.0 * (X[:, 2] - 0.5) ** 2 + 10.0 * X[:, 3] + 5.0 * X[:, 4])


SYNTH_CATALOG = {
    "sum-sq": SynthProblem(2, 0.0, 1.0, 0.0,
                           "y = x1 + x2^2", _sum_sq),
    "linear-mix": SynthProblem(5, -1.0, 1.0, 0.1,
                               "y = 3*x1 - 2*x2 + 0.5*x3 + x4 - x5",
                               _linear_mix),
    "poly-prod": SynthProblem(3, -1.0, 1.0, 0.05,
                              "y = x1*x2 + x2*x3 + x1*x3", _poly_prod),
    "trig-mix": SynthProblem(2, -3.0, 3.0, 0.05,
                             "y = sin(x1) + cos(2*x2)", _trig_mix),
    "ratio": SynthProblem(2, -2.0, 2.0, 0.05,
                          "y = x1 / (1 + x2^2)", _ratio),
    "exp-bump": SynthProblem(2, -2.0, 2.0, 0.05,
                             "y = exp(-x1^2) + 0.5*x2", _exp_bump),
    "tanh-step": SynthProblem(3, -2.0, 2.0, 0.05,
                              "y = tanh(3*x1) + x2*x3", _tanh_step),
    "friedman1": SynthProblem(
        5, 0.0, 1.0, 1.0,
        "y = 10*sin(pi*x1*x2) + 20*(x3 - 0.5)^2 + 10*x4 + 5*x5", _friedman1),
}


def synth_problem(name: str, n: int, seed: int) -> Dataset:
    """Draw n rows of a catalog problem, deterministic in (name, n, seed)."""
    try:
        prob = SYNTH_CATALOG[name]
    except KeyError:
        known = ", ".join(sorted(SYNTH_CATALOG))
        raise DatasetError(
            f"unknown synthetic problem {name!r}; known: {known}") from None
    if n < 1:
        raise DatasetError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
    X = rng.uniform(prob.low, prob.high, size=(n, prob.n_attributes))
    y = prob.fn(X)
    if prob.sigma > 0:
        y = y + rng.normal(0.0, prob.sigma, size=n)
    return Dataset(X, y, name=f"synth:{name}")


def resolve_dataset(source: str, target_column: str = "y",
                    synth_n: int = 500, synth_seed: int = 0) -> Dataset:
    """Accept a CSV path or a ``synth:<name>`` catalog reference."""
    if source.startswith("synth:"):
        return synth_problem(source[len("synth:"):], synth_n, synth_seed)
    return load_csv(source, target_column)
