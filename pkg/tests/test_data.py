import numpy as np
import pytest

from knockselect.data import (
    DataError, SplitSpec, TaskKind, load_csv, make_dataset, save_csv, split, standardize,
)


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_three_row_csv_is_zscored_with_population_std(tmp_path):
    p = write(tmp_path, "a,b,target\n1,10,x\n2,20,y\n3,40,x\n")
    ds = load_csv(p, target_column="target", task="c")
    assert ds.d == 2 and ds.n == 3
    assert np.allclose(ds.features[:, 0], [-1.2247448713915890, 0.0, 1.2247448713915890], atol=1e-12)
    assert ds.feature_names == ("a", "b")
    assert list(ds.target) == [0, 1, 0]
    assert ds.classes == ("x", "y")


def test_no_target_column(tmp_path):
    p = write(tmp_path, "a,b,c\n1,2,3\n4,5,7\n0,1,1\n")
    ds = load_csv(p, task="r")
    assert ds.target is None and ds.d == 3


def test_comment_line_and_missing_rows(tmp_path):
    p = write(tmp_path, "# exported\na,b,y\n1,2,0\n,3,1\n2,NA,1\n3,1,0\n5,5,1\n")
    ds = load_csv(p, target_column="y", task="c")
    assert ds.n == 3 and ds.dropped_rows == 2
    assert np.all(np.isfinite(ds.features))


def test_load_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_csv(tmp_path / "missing.csv")
    p = write(tmp_path, "a,b,y\n1,2,0\n1,oops,1\n")
    with pytest.raises(DataError, match="line 3.*'b'"):
        load_csv(p, target_column="y")
    with pytest.raises(DataError, match="not in header"):
        load_csv(p, target_column="zz")
    p2 = write(tmp_path, "a,y\n1,0\n2,1\n", "two.csv")
    with pytest.raises(DataError, match="at least 2 feature"):
        load_csv(p2, target_column="y")


def test_regression_target_must_be_numeric(tmp_path):
    p = write(tmp_path, "a,b,y\n1,2,low\n3,4,high\n")
    with pytest.raises(DataError):
        load_csv(p, target_column="y", task="r")


def test_standardization_invariants_and_constant_columns():
    rng = np.random.default_rng(0)
    raw = rng.normal(3.0, 5.0, size=(50, 4))
    raw[:, 2] = 7.0
    ds = make_dataset(raw)
    live = ~ds.constant_columns
    assert list(ds.constant_columns) == [False, False, True, False]
    assert np.all(np.abs(ds.features.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(ds.features[:, live].std(axis=0) - 1) < 1e-6)
    assert np.all(ds.features[:, 2] == 0.0)


def test_standardization_idempotent():
    rng = np.random.default_rng(1)
    ds = make_dataset(rng.exponential(size=(40, 3)))
    again, _, _ = standardize(ds.features)
    assert np.max(np.abs(again - ds.features)) < 1e-9


def test_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    ds = make_dataset(rng.normal(size=(30, 3)), target=rng.normal(size=30), task=TaskKind.REGRESSION)
    p = tmp_path / "rt.csv"
    save_csv(ds, p)
    back = load_csv(p, target_column="target", task="r")
    assert np.max(np.abs(back.features - ds.features)) < 1e-12
    assert np.max(np.abs(back.target - ds.target)) < 1e-12


def test_split_sizes_disjoint_and_deterministic():
    ds = make_dataset(np.arange(20.0).reshape(10, 2) ** 1.5, target=np.arange(10))
    tr, te = split(ds, SplitSpec(0.8, 7))
    assert tr.n == 8 and te.n == 2
    rows = set(tr.target.tolist()) | set(te.target.tolist())
    assert rows == set(range(10)) and not set(tr.target.tolist()) & set(te.target.tolist())
    tr2, te2 = split(ds, SplitSpec(0.8, 7))
    assert np.array_equal(tr.features, tr2.features) and np.array_equal(te.target, te2.target)


def test_split_floor_rule_matches_reference_shuffle():
    n = 999
    ds = make_dataset(np.random.default_rng(3).normal(size=(n, 2)), target=np.arange(n))
    tr, te = split(ds, SplitSpec(0.5, 11))
    # reference: plain permutation from the same generator, first floor(n/2) rows train
    perm = np.random.default_rng(11).permutation(n)
    assert (tr.n, te.n) == (499, 500)
    assert np.array_equal(tr.target, perm[:499]) and np.array_equal(te.target, perm[499:])


def test_split_uses_train_statistics_for_test():
    rng = np.random.default_rng(4)
    ds = make_dataset(rng.normal(5, 2, size=(100, 3)), target=np.zeros(100))
    tr, te = split(ds, SplitSpec(0.7, 0))
    assert np.allclose(tr.features.mean(axis=0), 0, atol=1e-9)
    expected = (te.raw - tr.raw.mean(axis=0)) / tr.raw.std(axis=0)
    assert np.allclose(te.features, expected, atol=1e-12)


def test_split_rejects_bad_fraction():
    ds = make_dataset(np.random.default_rng(0).normal(size=(3, 2)))
    with pytest.raises(ValueError):
        split(ds, SplitSpec(1.0, 0))
    with pytest.raises(DataError):
        split(ds, SplitSpec(0.2, 0))
