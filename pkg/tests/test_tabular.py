import math

import numpy as np
import pytest

from mtstack.tabular import (
    DataError,
    Dataset,
    ScalingParams,
    apply_autoscale,
    fit_autoscale,
    invert_autoscale,
    kennard_stone_split,
    load_csv,
    load_split,
    save_split,
)


def brute_force_kennard_stone(x, n_train):
    """Independent greedy max-min reference, plain loops over pairs."""
    n = x.shape[0]

    def dist2(i, j):
        return sum((x[i, k] - x[j, k]) ** 2 for k in range(x.shape[1]))

    best, pair = -1.0, (0, 1)
    for i in range(n):
        for j in range(i + 1, n):
            d = dist2(i, j)
            if d > best:
                best, pair = d, (i, j)
    selected = list(pair)
    while len(selected) < n_train:
        best, choice = -1.0, None
        for cand in range(n):
            if cand in selected:
                continue
            m = min(dist2(cand, s) for s in selected)
            if m > best:
                best, choice = m, cand
        selected.append(choice)
    test = [i for i in range(n) if i not in selected]
    return selected, test


class TestLoadCsv:
    def test_column_partition(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b,t\n1,2,3\n4,5,6\n7,8,9\n")
        ds = load_csv(p, ["t"])
        assert ds.x.shape == (3, 2) and ds.y.shape == (3, 1)
        assert ds.feature_names == ("a", "b") and ds.target_names == ("t",)
        assert np.array_equal(ds.y.ravel(), [3, 6, 9])

    def test_target_order_follows_request(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,t1,t2\n1,2,3\n4,5,6\n")
        ds = load_csv(p, ["t2", "t1"])
        assert np.array_equal(ds.y, [[3, 2], [6, 5]])

    def test_unknown_target(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(DataError, match="unknown target column 'z'"):
            load_csv(p, ["z"])

    def test_non_numeric_cell_located(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,t\n1,2\nabc,4\n")
        with pytest.raises(DataError, match=r":3: non-numeric cell 'abc' in column 'a'"):
            load_csv(p, ["t"])

    def test_missing_values_dropped_with_warning(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,t\n1,2\n,4\n5,6\n")
        with pytest.warns(UserWarning, match="dropped 1 row"):
            ds = load_csv(p, ["t"])
        assert ds.n == 2

    def test_empty_after_filtering(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,t\n,1\n")
        with pytest.warns(UserWarning):
            with pytest.raises(DataError, match="no usable data rows"):
                load_csv(p, ["t"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_csv(tmp_path / "nope.csv", ["t"])


class TestDatasetInvariants:
    def test_duplicate_names_rejected(self):
        with pytest.raises(DataError, match="duplicate"):
            Dataset(np.ones((2, 2)), np.ones((2, 1)), ("a", "a"), ("t",))

    def test_non_finite_rejected(self):
        x = np.array([[1.0], [np.nan]])
        with pytest.raises(DataError, match="NaN or infinite"):
            Dataset(x, np.ones((2, 1)), ("a",), ("t",))

    def test_row_count_mismatch(self):
        with pytest.raises(DataError, match="rows"):
            Dataset(np.ones((2, 1)), np.ones((3, 1)), ("a",), ("t",))


class TestKennardStone:
    def test_farthest_pair_first(self):
        x = np.array([[0.0], [1.0], [10.0]])
        split = kennard_stone_split(x, 2 / 3)
        assert list(split.train) == [0, 2]
        assert list(split.test) == [1]

    def test_full_fraction(self):
        x = np.arange(6.0).reshape(3, 2)
        split = kennard_stone_split(x, 1.0)
        assert split.test.size == 0 and split.train.size == 3

    def test_minimum_two_rows_selected(self):
        split = kennard_stone_split(np.array([[0.0], [5.0]]), 0.5)
        assert split.train.size == 2 and split.test.size == 0

    def test_single_row_rejected(self):
        with pytest.raises(DataError, match="at least 2 rows"):
            kennard_stone_split(np.ones((1, 3)), 0.5)

    def test_identical_rows_tie_break(self):
        split = kennard_stone_split(np.zeros((5, 2)), 0.6)
        assert list(split.train) == [0, 1, 2]

    def test_partition_property(self, rng):
        for _ in range(20):
            n = int(rng.integers(2, 40))
            x = rng.normal(size=(n, int(rng.integers(1, 4))))
            frac = float(rng.uniform(0.1, 1.0))
            split = kennard_stone_split(x, frac)
            both = np.concatenate([split.train, split.test])
            assert np.array_equal(np.sort(both), np.arange(n))
            assert split.train.size == max(2, math.ceil(frac * n))

    def test_matches_brute_force_oracle(self, rng):
        for _ in range(50):
            n = int(rng.integers(3, 25))
            f = int(rng.integers(1, 5))
            x = rng.normal(size=(n, f))
            frac = float(rng.uniform(0.2, 0.9))
            split = kennard_stone_split(x, frac)
            ref_train, ref_test = brute_force_kennard_stone(x, split.train.size)
            assert list(split.train) == ref_train
            assert list(split.test) == ref_test

    def test_deterministic(self, rng):
        x = rng.normal(size=(30, 3))
        a = kennard_stone_split(x, 0.5)
        b = kennard_stone_split(x.copy(), 0.5)
        assert np.array_equal(a.train, b.train) and np.array_equal(a.test, b.test)


class TestAutoscale:
    def test_fit_example(self):
        p = fit_autoscale(np.array([[2.0], [4.0], [6.0]]))
        assert p.means[0] == 4.0 and p.stds[0] == 2.0

    def test_constant_column_std_one(self):
        p = fit_autoscale(np.array([[5.0], [5.0], [5.0]]))
        assert p.means[0] == 5.0 and p.stds[0] == 1.0
        assert np.allclose(apply_autoscale(np.array([[5.0]]), p), 0.0)

    def test_columns_independent(self):
        p = fit_autoscale(np.array([[2.0, 10.0], [4.0, 10.0], [6.0, 10.0]]))
        assert np.allclose(p.means, [4.0, 10.0]) and np.allclose(p.stds, [2.0, 1.0])

    def test_apply_example(self):
        p = ScalingParams(np.array([4.0]), np.array([2.0]))
        out = apply_autoscale(np.array([[2.0], [4.0], [6.0]]), p)
        assert np.allclose(out.ravel(), [-1.0, 0.0, 1.0])

    def test_invert_example(self):
        p = ScalingParams(np.array([4.0]), np.array([2.0]))
        out = invert_autoscale(np.array([[-1.0], [0.0], [1.0]]), p)
        assert np.allclose(out.ravel(), [2.0, 4.0, 6.0])

    def test_zero_matrix_inverts_to_means(self):
        p = ScalingParams(np.array([3.0, -1.0]), np.array([2.0, 5.0]))
        assert np.allclose(invert_autoscale(np.zeros((4, 2)), p), [3.0, -1.0])

    def test_round_trip(self, rng):
        m = rng.normal(size=(20, 4)) * 7 + 3
        p = fit_autoscale(m)
        assert np.abs(invert_autoscale(apply_autoscale(m, p), p) - m).max() < 1e-10

    def test_normalisation(self, rng):
        m = rng.normal(size=(30, 3)) * np.array([1.0, 10.0, 0.01])
        s = apply_autoscale(m, fit_autoscale(m))
        assert np.abs(s.mean(axis=0)).max() < 1e-10
        assert np.abs(s.std(axis=0, ddof=1) - 1.0).max() < 1e-10

    def test_single_row_rejected(self):
        with pytest.raises(DataError, match="at least 2 rows"):
            fit_autoscale(np.ones((1, 3)))

    def test_width_mismatch(self):
        p = ScalingParams(np.zeros(2), np.ones(2))
        with pytest.raises(DataError, match="expected 2 columns"):
            apply_autoscale(np.ones((3, 3)), p)
        with pytest.raises(DataError, match="expected 2 columns"):
            invert_autoscale(np.ones((3, 3)), p)


class TestSplitPersistence:
    def test_round_trip(self, tmp_path, rng):
        x = rng.normal(size=(15, 2))
        split = kennard_stone_split(x, 0.6)
        path = tmp_path / "split.csv"
        save_split(split, path)
        loaded = load_split(path)
        assert np.array_equal(loaded.train, split.train)
        assert np.array_equal(loaded.test, split.test)

    def test_byte_determinism(self, tmp_path, rng):
        x = rng.normal(size=(10, 2))
        split = kennard_stone_split(x, 0.5)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        save_split(split, a)
        save_split(split, b)
        assert a.read_bytes() == b.read_bytes()

    def test_malformed_rejected(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("index,role\n0,train\n1,weird\n")
        with pytest.raises(DataError, match=":3: malformed split row"):
            load_split(p)
