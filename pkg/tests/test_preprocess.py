import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grusvm.preprocess import (ColumnStats, EncodedDataset, EncodedSample, PreprocessError,
                               RecordSchema, decile_bin, decile_edges, dedupe, dedupe_arrays,
                               encode_rows, fit_stats, index_category, load_dataset, one_hot,
                               parse_schema, run_pipeline, standardize, stats_from_text,
                               stats_to_text)
from grusvm.synthetic import write_kyoto_like

from oracles import sorted_list_deciles

SCHEMA_TEXT = """\
# toy schema
delimiter = comma
label_positive = attack
column = dur continuous
column = proto categorical
column = note ignored
column = bytes continuous
column = label label
"""


def one_col(values, kind="continuous"):
    schema = RecordSchema([("a", kind), ("y", "label")], ",")
    return fit_stats([[str(v), "n"] for v in values], schema)["a"]


class TestSchema:
    def test_parse(self):
        s = parse_schema(SCHEMA_TEXT)
        assert s.delimiter == ","
        assert s.label_positive_values == {"attack"}
        assert [n for _, n, _ in s.feature_columns] == ["dur", "proto", "bytes"]
        assert s.label_index == 4

    @pytest.mark.parametrize("text", [
        "column = a continuous\n",
        "column = a continuous\ncolumn = y label\ncolumn = z label\n",
        "column = a wibble\ncolumn = y label\n",
        "colour = red\n",
        "delimiter = ab\ncolumn = y label\n",
    ])
    def test_invalid(self, text):
        with pytest.raises(PreprocessError):
            parse_schema(text)


class TestFitStats:
    def test_mean_std(self):
        st_ = one_col([1, 2, 3] * 4)
        assert st_.mean == pytest.approx(2.0)
        assert st_.std == pytest.approx(math.sqrt(2 / 3))

    def test_constant_column_degenerate(self):
        st_ = one_col([5] * 12)
        assert (st_.mean, st_.std, st_.degenerate) == (5.0, 0.0, True)

    def test_category_map_lexicographic(self):
        st_ = one_col(["udp", "tcp", "udp"] * 4, "categorical")
        assert st_.category_map == {"tcp": 0, "udp": 1}

    def test_category_map_bijection(self, rng):
        cats = [f"c{int(i)}" for i in rng.integers(0, 30, 200)]
        m = one_col(cats, "categorical").category_map
        assert sorted(m.values()) == list(range(len(m)))
        assert list(m) == sorted(m)

    def test_non_numeric_names_row_and_column(self):
        schema = RecordSchema([("a", "continuous"), ("y", "label")], ",")
        rows = [[str(i), "n"] for i in range(12)]
        rows[7][0] = "oops"
        with pytest.raises(PreprocessError, match=r"row 8.*'a'"):
            fit_stats(rows, schema)

    def test_empty(self):
        with pytest.raises(PreprocessError):
            fit_stats([], RecordSchema([("y", "label")]))

    def test_too_few_rows(self):
        with pytest.raises(PreprocessError):
            one_col([1, 2, 3])

    def test_edges_non_decreasing(self, rng):
        st_ = one_col(rng.integers(0, 4, 100))
        assert np.all(np.diff(st_.quantile_edges) >= 0)


class TestStandardize:
    def test_at_mean(self):
        assert standardize(2.0, ColumnStats("a", "continuous", 2.0, 0.5)) == 0.0

    def test_value(self):
        st_ = ColumnStats("a", "continuous", 2.0, math.sqrt(2 / 3))
        assert standardize(3.0, st_) == pytest.approx(1.224744871391589, abs=1e-12)

    def test_zero_sigma(self):
        assert standardize(123.0, ColumnStats("a", "continuous", 5.0, 0.0)) == 0.0

    def test_standardized_column_moments(self, rng):
        x = rng.exponential(7, 500)
        st_ = one_col(x.tolist())
        z = standardize(x, st_)
        assert abs(z.mean()) < 1e-9
        assert abs(z.std() - 1) < 1e-6


class TestDecileBin:
    def test_minimum_in_bin_zero(self, rng):
        x = rng.normal(size=50)
        st_ = one_col(x.tolist())
        assert decile_bin(standardize(x.min(), st_), st_) == 0

    def test_above_maximum_in_top_bin(self, rng):
        x = rng.normal(size=50)
        st_ = one_col(x.tolist())
        assert decile_bin(standardize(x.max(), st_) + 10, st_) == 9
        assert decile_bin(standardize(x.min(), st_) - 10, st_) == 0

    def test_twenty_distinct_values_two_per_bin(self, rng):
        x = rng.permutation(np.arange(20.0) ** 1.5)
        st_ = one_col(x.tolist())
        bins = decile_bin(standardize(x, st_), st_)
        # brute force: rank in the sorted list, two per decile
        ranks = np.argsort(np.argsort(x))
        np.testing.assert_array_equal(bins, ranks // 2)
        np.testing.assert_array_equal(np.bincount(bins, minlength=10), 2)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 30), st.integers(0, 2**31))
    def test_equal_mass_for_distinct_values(self, m, seed):
        x = np.random.default_rng(seed).permutation(np.arange(10.0 * m))
        st_ = one_col(x.tolist())
        assert np.all(np.bincount(decile_bin(standardize(x, st_), st_), minlength=10) == m)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=10, max_size=60),
           st.lists(st.floats(-1e7, 1e7), min_size=2, max_size=30))
    def test_monotone(self, train, probes):
        st_ = one_col(train)
        z = np.sort(standardize(np.array(probes), st_))
        b = decile_bin(z, st_)
        assert np.all(np.diff(b) >= 0)
        assert np.all((b >= 0) & (b <= 9))

    def test_edges_match_sorted_list_oracle(self, rng):
        for n in (10, 11, 23, 100, 101):
            v = np.sort(rng.normal(size=n))
            np.testing.assert_allclose(decile_edges(v), sorted_list_deciles(v.tolist()),
                                       rtol=0, atol=1e-12)

    def test_ties_collapse_edges(self):
        st_ = one_col([0] * 50 + [1] * 50)
        assert st_.quantile_edges[0] == st_.quantile_edges[4]
        z = standardize(np.array([0.0, 1.0]), st_)
        assert list(decile_bin(z, st_)) == [4, 9]


class TestIndexAndOneHot:
    def test_index(self):
        st_ = ColumnStats("p", "categorical", category_map={"tcp": 0, "udp": 1})
        assert index_category("tcp", st_) == 0

    def test_single_category(self):
        assert index_category("x", ColumnStats("p", "categorical", category_map={"x": 0})) == 0

    def test_unseen(self):
        st_ = ColumnStats("p", "categorical", category_map={"tcp": 0, "udp": 1})
        with pytest.raises(PreprocessError, match="icmp"):
            index_category("icmp", st_)

    @pytest.mark.parametrize("i, w, expect", [(2, 4, [0, 0, 1, 0]), (0, 1, [1]),
                                              (9, 10, [0] * 9 + [1])])
    def test_one_hot(self, i, w, expect):
        np.testing.assert_array_equal(one_hot(i, w), expect)

    @given(st.integers(1, 50).flatmap(lambda w: st.tuples(st.integers(0, w - 1), st.just(w))))
    def test_one_hot_sums_to_one(self, iw):
        assert one_hot(*iw).sum() == 1

    @pytest.mark.parametrize("i, w", [(4, 4), (-1, 3)])
    def test_one_hot_out_of_range(self, i, w):
        with pytest.raises(ValueError):
            one_hot(i, w)


def S(*idx, label=0):
    return EncodedSample(tuple(idx), (10,) * len(idx), label)


class TestDedupe:
    def test_examples(self):
        a, b = S(1, 2), S(2, 1)
        assert dedupe([a, a, b]) == [a, b]
        assert dedupe([a, b]) == [a, b]
        assert dedupe([a, b, a, b, a]) == [a, b]

    def test_label_distinguishes(self):
        assert len(dedupe([S(1, label=0), S(1, label=1)])) == 2

    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.integers(0, 1)), max_size=40))
    def test_idempotent_and_arrays_agree(self, rows):
        samples = [S(a, b, label=y) for a, b, y in rows]
        once = dedupe(samples)
        assert dedupe(once) == once
        assert len(once) <= len(samples)
        idx = np.array([[a, b] for a, b, _ in rows], dtype=np.int64).reshape(-1, 2)
        lab = np.array([y for *_, y in rows], dtype=np.int64)
        keep = dedupe_arrays(idx, lab)
        assert [samples[i] for i in keep] == once

    def test_groups_are_one_hot(self):
        g = S(3, 0).groups
        assert len(g) == 2 and all(v.sum() == 1 for v in g)


@pytest.fixture
def toy_files(tmp_path, rng):
    schema = tmp_path / "toy.schema"
    schema.write_text(SCHEMA_TEXT)
    lines = []
    for i in range(60):
        lines.append(f"{rng.exponential(2):.3f},{rng.choice(['tcp', 'udp', 'icmp'])},"
                     f"n{i},{int(rng.integers(0, 9))},{rng.choice(['attack', 'normal'])}")
    lines.insert(5, "1,2,3")          # wrong field count
    data = tmp_path / "toy.csv"
    data.write_text("\n".join(lines) + "\n")
    return data, schema


class TestPipeline:
    def test_outputs_and_rejects(self, tmp_path, toy_files):
        data, schema = toy_files
        rep = run_pipeline(data, schema, tmp_path / "out.txt", tmp_path / "stats.json")
        assert (rep.rows_read, rep.rows_rejected, rep.encoded) == (61, 1, 60)
        ds = load_dataset(tmp_path / "out.txt")
        assert ds.names == ("dur", "proto", "bytes")
        assert ds.widths == (10, 3, 10)
        assert len(ds) == rep.written <= 60

    def test_deterministic(self, tmp_path, toy_files):
        data, schema = toy_files
        run_pipeline(data, schema, tmp_path / "a.txt", tmp_path / "sa.json")
        run_pipeline(data, schema, tmp_path / "b.txt", tmp_path / "sb.json")
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
        assert (tmp_path / "sa.json").read_bytes() == (tmp_path / "sb.json").read_bytes()

    def test_stats_sidecar_reencodes_identically(self, tmp_path, toy_files):
        data, schema = toy_files
        run_pipeline(data, schema, tmp_path / "a.txt", tmp_path / "s.json")
        run_pipeline(data, schema, tmp_path / "b.txt", stats_in=tmp_path / "s.json")
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()

    def test_stats_round_trip(self, rng):
        schema = parse_schema(SCHEMA_TEXT)
        rows = [[f"{rng.normal():.4f}", rng.choice(["a", "b"]), "-", str(rng.integers(9)), "x"]
                for _ in range(30)]
        stats = fit_stats(rows, schema)
        back = stats_from_text(stats_to_text(stats))
        a, _ = encode_rows(rows, schema, stats)
        b, _ = encode_rows(rows, schema, back)
        np.testing.assert_array_equal(a, b)

    def test_kyoto_like_100_rows(self, tmp_path):
        from importlib import resources
        schema = tmp_path / "k.schema"
        schema.write_text(resources.files("grusvm").joinpath("templates", "kyoto2013.schema").read_text())
        write_kyoto_like(tmp_path / "k.tsv", 100, seed=4)
        rep = run_pipeline(tmp_path / "k.tsv", schema, tmp_path / "k.txt")
        ds = load_dataset(tmp_path / "k.txt")
        assert len(ds) == rep.written <= 100
        assert len(ds.widths) == 20
        for s in ds.samples():
            assert all(g.sum() == 1 for g in s.groups)

    def test_train_test_split_shares_fit(self, tmp_path, toy_files):
        data, schema = toy_files
        rep = run_pipeline(data, schema, tmp_path / "tr.txt", tmp_path / "s.json",
                           test_output=tmp_path / "te.txt", test_fraction=0.25)
        tr, te = load_dataset(tmp_path / "tr.txt"), load_dataset(tmp_path / "te.txt")
        assert tr.stats_digest == te.stats_digest and tr.widths == te.widths
        assert rep.test_written == len(te) <= 15

    def test_empty_file(self, tmp_path, toy_files):
        _, schema = toy_files
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        with pytest.raises(PreprocessError):
            run_pipeline(empty, schema, tmp_path / "x.txt")
        assert not (tmp_path / "x.txt").exists()

    def test_dataset_text_round_trip(self, rng):
        ds = EncodedDataset(rng.integers(0, 3, (7, 4)), rng.integers(0, 2, 7), (3, 3, 3, 3),
                            ("a", "b", "c", "d"), "abc")
        back = EncodedDataset.from_text(ds.to_text())
        np.testing.assert_array_equal(back.indices, ds.indices)
        assert back.to_text() == ds.to_text()

    @pytest.mark.parametrize("text", ["", "hello\n", "#grusvm-dataset 1\nstats -\nnames a\nwidths 2\n5 0\n"])
    def test_bad_dataset_text(self, text):
        with pytest.raises(PreprocessError):
            EncodedDataset.from_text(text)
