"""Dataset loading, splitting, and synthetic problem generation."""

import numpy as np
import pytest

from mgpr.datasets import (
    SYNTH_CATALOG,
    Dataset,
    DatasetError,
    SplitSpec,
    kfold_indices,
    load_csv,
    read_csv_matrix,
    resolve_dataset,
    split_indices,
    synth_problem,
    train_test_split,
)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_load_csv_happy_path(tmp_path):
    path = _write(tmp_path / "d.csv", "a,b,y\n1,2,3\n4,5,6\n")
    ds = load_csv(path)
    assert ds.attribute_names == ("a", "b")
    assert ds.X.shape == (2, 2) and ds.y.shape == (2,)
    np.testing.assert_array_equal(ds.X, [[1.0, 2.0], [4.0, 5.0]])
    np.testing.assert_array_equal(ds.y, [3.0, 6.0])


def test_load_csv_target_column_anywhere(tmp_path):
    path = _write(tmp_path / "d.csv", "y,a\n1,2\n3,4\n")
    ds = load_csv(path)
    assert ds.attribute_names == ("a",)
    np.testing.assert_array_equal(ds.y, [1.0, 3.0])


def test_load_csv_missing_file():
    with pytest.raises(DatasetError, match="no such file"):
        load_csv("/nonexistent/file.csv")


def test_load_csv_empty_file(tmp_path):
    path = _write(tmp_path / "d.csv", "")
    with pytest.raises(DatasetError, match="empty dataset"):
        load_csv(path)


def test_load_csv_header_only(tmp_path):
    path = _write(tmp_path / "d.csv", "a,y\n")
    with pytest.raises(DatasetError, match="empty dataset"):
        load_csv(path)


def test_load_csv_bad_cell_names_row_and_column(tmp_path):
    # header is file row 1, so the bad cell sits at file row 3
    path = _write(tmp_path / "d.csv", "x1,x2,y\n1,2,3\n4,oops,6\n")
    with pytest.raises(DatasetError, match=r"row 3.*'x2'"):
        load_csv(path)


def test_load_csv_non_finite_cell(tmp_path):
    path = _write(tmp_path / "d.csv", "x1,y\n1,2\nnan,4\n")
    with pytest.raises(DatasetError, match=r"row 3.*'x1'"):
        load_csv(path)


def test_load_csv_ragged_row(tmp_path):
    path = _write(tmp_path / "d.csv", "x1,x2,y\n1,2,3\n4,5\n")
    with pytest.raises(DatasetError, match="row 3"):
        load_csv(path)


def test_load_csv_missing_target(tmp_path):
    path = _write(tmp_path / "d.csv", "a,b\n1,2\n")
    with pytest.raises(DatasetError, match="'y'"):
        load_csv(path)


def test_load_csv_no_attributes(tmp_path):
    path = _write(tmp_path / "d.csv", "y\n1\n2\n")
    with pytest.raises(DatasetError):
        load_csv(path)


def test_read_csv_matrix_returns_all_columns(tmp_path):
    path = _write(tmp_path / "d.csv", "c,a\n1,2\n3,4\n")
    names, table = read_csv_matrix(path)
    assert names == ("c", "a")
    np.testing.assert_array_equal(table, [[1.0, 2.0], [3.0, 4.0]])


def test_dataset_validation():
    with pytest.raises(DatasetError, match="empty dataset"):
        Dataset(np.empty((0, 2)), np.empty(0))
    with pytest.raises(DatasetError):
        Dataset(np.ones((3, 2)), np.ones(4))
    with pytest.raises(DatasetError, match="row 1"):
        Dataset(np.array([[1.0, 2.0], [np.inf, 0.0]]), np.ones(2))


def test_dataset_arrays_read_only():
    ds = Dataset(np.ones((3, 2)), np.zeros(3))
    with pytest.raises(ValueError):
        ds.X[0, 0] = 5.0


def test_split_spec_validation():
    with pytest.raises(ValueError):
        SplitSpec(test_fraction=0.0)
    with pytest.raises(ValueError):
        SplitSpec(test_fraction=1.0)
    with pytest.raises(ValueError):
        SplitSpec(folds=1)


def test_split_indices_partition():
    train, test = split_indices(100, SplitSpec(0.25, seed=3))
    assert len(test) == 25 and len(train) == 75
    assert not set(train) & set(test)
    assert sorted(np.concatenate([train, test])) == list(range(100))
    # sorted output, so downstream subsets keep row order
    assert np.all(np.diff(train) > 0) and np.all(np.diff(test) > 0)


def test_split_indices_deterministic_and_seed_sensitive():
    a1 = split_indices(50, SplitSpec(0.2, seed=7))
    a2 = split_indices(50, SplitSpec(0.2, seed=7))
    np.testing.assert_array_equal(a1[0], a2[0])
    np.testing.assert_array_equal(a1[1], a2[1])
    # a different seed changes the partition for at least one of 20 seeds
    base = set(split_indices(50, SplitSpec(0.2, seed=0))[1])
    assert any(set(split_indices(50, SplitSpec(0.2, seed=s))[1]) != base
               for s in range(1, 21))


def test_split_indices_small_n():
    train, test = split_indices(2, SplitSpec(0.5))
    assert len(train) == 1 and len(test) == 1
    with pytest.raises(DatasetError):
        split_indices(3, SplitSpec(0.01))


def test_kfold_sizes_differ_by_at_most_one():
    parts = kfold_indices(11, SplitSpec(folds=5, seed=0))
    sizes = sorted(len(test) for _, test in parts)
    assert sizes == [2, 2, 2, 2, 3]
    covered = np.concatenate([test for _, test in parts])
    assert sorted(covered) == list(range(11))
    for train, test in parts:
        assert not set(train) & set(test)
        assert len(train) + len(test) == 11


def test_train_test_split_returns_datasets():
    ds = synth_problem("sum-sq", n=40, seed=0)
    train, test = train_test_split(ds, SplitSpec(0.25, seed=1))
    assert train.n_samples == 30 and test.n_samples == 10
    assert train.attribute_names == ds.attribute_names


def test_synth_catalog_has_eight_problems():
    assert len(SYNTH_CATALOG) >= 8
    for name, prob in SYNTH_CATALOG.items():
        ds = synth_problem(name, n=64, seed=5)
        assert ds.X.shape == (64, prob.n_attributes)
        assert np.all(ds.X >= prob.low) and np.all(ds.X <= prob.high)
        # y is formula plus N(0, sigma) noise
        resid = ds.y - prob.fn(ds.X)
        if prob.sigma == 0.0:
            assert np.all(resid == 0.0)
        else:
            assert np.all(np.abs(resid) < 6 * prob.sigma)


def test_synth_sum_sq_formula():
    ds = synth_problem("sum-sq", n=100, seed=0)
    np.testing.assert_array_equal(ds.y, ds.X[:, 0] + ds.X[:, 1] ** 2)
    assert SYNTH_CATALOG["sum-sq"].fn(np.array([[0.5, 0.5]]))[0] == 0.75


def test_synth_deterministic_by_seed():
    a = synth_problem("friedman1", n=32, seed=9)
    b = synth_problem("friedman1", n=32, seed=9)
    c = synth_problem("friedman1", n=32, seed=10)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(a.X, c.X)


def test_resolve_dataset_synth_prefix():
    ds = resolve_dataset("synth:ratio", synth_n=33, synth_seed=2)
    assert ds.n_samples == 33
    with pytest.raises(DatasetError, match="unknown synthetic problem"):
        resolve_dataset("synth:nope")


def test_resolve_dataset_csv(tmp_path):
    path = _write(tmp_path / "d.csv", "a,y\n1,2\n3,4\n")
    ds = resolve_dataset(path)
    assert ds.n_samples == 2 and ds.attribute_names == ("a",)
