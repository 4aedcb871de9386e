import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gravityrank.graph import (
    AttributeTable,
    DataFormatError,
    DataSplit,
    DirectedWeightedGraph,
    extend_with_cold,
    load_dataset,
    make_split,
    mask_cold,
    normalize_out_degree,
    read_split,
    write_edges,
    write_features,
    write_nodes,
    write_split,
)
from gravityrank import synthetic

from conftest import all_warm, random_graph


def write(path, text):
    path.write_text(text)
    return path


@pytest.fixture
def three_nodes(tmp_path):
    nodes = write(tmp_path / "nodes.tsv", "a\t1\tFR\nb\t2\tUS\nc\t\t\n")
    edges = write(tmp_path / "edges.tsv", "a\tb\t0.9\na\tc\t0.4\n")
    feats = write(tmp_path / "features.tsv", "a\t1\t0\nb\t0\t1\nc\t1\t1\n")
    return nodes, edges, feats


class TestLoad:
    def test_three_node_out_degrees(self, three_nodes):
        g, attrs, meta = load_dataset(*three_nodes)
        assert g.out_degrees().tolist() == [2, 0, 0]
        assert attrs.values.shape == (3, 2)
        assert meta.ids == ("a", "b", "c")
        assert meta.popularity_rank.tolist() == [1, 2, 0]
        assert meta.country == ("FR", "US", "")
        t, w = g.out_edges(0)
        assert t.tolist() == [1, 2] and w.tolist() == [0.9, 0.4]

    def test_weight_out_of_range_names_line(self, three_nodes, tmp_path):
        nodes, _, feats = three_nodes
        bad = write(tmp_path / "bad.tsv", "a\tb\t0.9\nb\tc\t1.3\n")
        with pytest.raises(DataFormatError, match=r"bad\.tsv:2: weight 1.3"):
            load_dataset(nodes, bad, feats)

    def test_dangling_endpoint(self, three_nodes, tmp_path):
        nodes, _, feats = three_nodes
        bad = write(tmp_path / "bad.tsv", "a\tzz\t0.5\n")
        with pytest.raises(DataFormatError, match=r":1: dangling edge endpoint 'zz'"):
            load_dataset(nodes, bad, feats)

    def test_feature_dimension_mismatch(self, three_nodes, tmp_path):
        nodes, edges, _ = three_nodes
        bad = write(tmp_path / "f.tsv", "a\t1\t0\nb\t0\nc\t1\t1\n")
        with pytest.raises(DataFormatError, match=r"f\.tsv:2: feature dimension mismatch"):
            load_dataset(nodes, edges, bad)

    @pytest.mark.parametrize("edges_text,msg", [
        ("a\tb\n", "expected 3 columns"),
        ("a\tb\tx\n", "cannot parse weight"),
        ("a\ta\t0.5\n", "self-loop"),
        ("a\tb\t0.5\na\tb\t0.6\n", "duplicate edge"),
    ])
    def test_malformed_edges(self, three_nodes, tmp_path, edges_text, msg):
        nodes, _, feats = three_nodes
        bad = write(tmp_path / "e.tsv", edges_text)
        with pytest.raises(DataFormatError, match=msg):
            load_dataset(nodes, bad, feats)

    def test_missing_file(self, three_nodes, tmp_path):
        nodes, edges, _ = three_nodes
        with pytest.raises(FileNotFoundError, match="nope.tsv"):
            load_dataset(nodes, edges, tmp_path / "nope.tsv")

    def test_sample_dataset(self, sample_data):
        g, attrs, meta = sample_data
        assert g.n == 200 and attrs.rows == 200
        assert np.all(g.out_degrees() == 5)
        assert g.k_hint == 5


class TestGraphInvariants:
    def test_rejects_self_loop_and_range(self):
        with pytest.raises(ValueError):
            DirectedWeightedGraph.from_edges(2, [0], [0], [0.5])
        with pytest.raises(ValueError):
            DirectedWeightedGraph.from_edges(2, [0], [1], [1.5])
        with pytest.raises(ValueError):
            DirectedWeightedGraph.from_edges(2, [0], [2], [0.5])

    def test_roundtrip_exact(self, tmp_path, rng):
        g = random_graph(30, 4, rng)
        g = DirectedWeightedGraph(g.n, g.indptr, g.targets, rng.uniform(size=g.num_edges) ** 3)
        ids = tuple(f"n{i}" for i in range(g.n))
        from gravityrank.graph import NodeMeta

        meta = NodeMeta(ids, np.arange(1, g.n + 1), ("X",) * g.n)
        attrs = AttributeTable(rng.normal(size=(g.n, 3)))
        write_nodes(tmp_path / "n.tsv", meta)
        write_edges(tmp_path / "e.tsv", g, ids)
        write_features(tmp_path / "f.tsv", attrs, ids)
        g2, attrs2, meta2 = load_dataset(tmp_path / "n.tsv", tmp_path / "e.tsv", tmp_path / "f.tsv")
        assert g2 == g
        assert np.array_equal(attrs2.values, attrs.values)
        assert meta2.ids == ids


class TestSplit:
    def test_exact_division(self):
        s = make_split(10, (0.8, 0.1, 0.1), seed=3)
        assert (len(s.warm_ids), len(s.valid_ids), len(s.test_ids)) == (8, 1, 1)

    def test_deezer_sizes(self):
        # oracle: floor(0.1 * 24270) = 2427, remainder warm
        assert math.floor(24270 / 10) == 2427
        s = make_split(24270, (0.8, 0.1, 0.1), seed=0)
        assert (len(s.warm_ids), len(s.valid_ids), len(s.test_ids)) == (19416, 2427, 2427)

    def test_deterministic(self):
        a, b = make_split(500, seed=9), make_split(500, seed=9)
        assert all(np.array_equal(getattr(a, k), getattr(b, k)) for k in ("warm_ids", "valid_ids", "test_ids"))

    def test_partition(self):
        s = make_split(101, seed=1)
        allids = np.concatenate([s.warm_ids, s.valid_ids, s.test_ids])
        assert sorted(allids.tolist()) == list(range(101))

    def test_empty_part_rejected(self):
        with pytest.raises(ValueError):
            make_split(5, (0.8, 0.1, 0.1), seed=0)

    def test_split_file_roundtrip(self, tmp_path):
        s = make_split(40, seed=2)
        ids = [f"x{i}" for i in range(40)]
        write_split(tmp_path / "split.tsv", s, ids)
        s2 = read_split(tmp_path / "split.tsv", {k: i for i, k in enumerate(ids)})
        assert np.array_equal(s.test_ids, s2.test_ids) and np.array_equal(s.warm_ids, s2.warm_ids)


class TestMask:
    def test_cold_middle_node(self):
        # a->b, b->c with b cold
        g = DirectedWeightedGraph.from_edges(3, [0, 1], [1, 2], [0.5, 0.7])
        m = mask_cold(g, DataSplit([0, 2], [1], []))
        assert m.train_graph.num_edges == 0
        assert m.ground_truth[1] == [(2, 0.7)]

    def test_empty_cold_is_identity(self, rng):
        g = random_graph(20, 3, rng)
        assert all_warm(g).train_graph == g

    def test_truth_order(self):
        g = DirectedWeightedGraph.from_edges(4, [0, 0, 0], [1, 2, 3], [0.2, 0.9, 0.2])
        m = mask_cold(g, DataSplit([1, 2, 3], [0], []))
        assert m.ground_truth[0] == [(2, 0.9), (1, 0.2), (3, 0.2)]

    def test_masking_completeness(self, rng):
        g = random_graph(60, 5, rng)
        split = make_split(60, seed=4)
        m = mask_cold(g, split)
        cold = set(split.cold_ids.tolist())
        warm = m.warm_ids
        # exhaustive scan in original ids
        for s, t in zip(m.train_graph.sources(), m.train_graph.targets):
            assert warm[s] not in cold and warm[t] not in cold
        for c in cold:
            assert len(m.ground_truth[c]) == 5
            assert all(w > 0 for _, w in m.ground_truth[c])
        # every warm-warm edge survives
        orig = sum(1 for s, t in zip(g.sources(), g.targets) if s not in cold and t not in cold)
        assert m.train_graph.num_edges == orig


class TestNormalize:
    def test_hand_case(self):
        g = DirectedWeightedGraph.from_edges(2, [0], [1], [1.0])
        np.testing.assert_array_equal(normalize_out_degree(g).toarray(), [[0.5, 0.5], [0.0, 1.0]])

    def test_all_isolated(self):
        g = DirectedWeightedGraph.from_edges(4, [], [], [])
        np.testing.assert_array_equal(normalize_out_degree(g).toarray(), np.eye(4))

    def test_extra_isolated_rows(self, rng):
        g = random_graph(6, 2, rng)
        a = normalize_out_degree(g, 3).toarray()
        assert a.shape == (9, 9)
        np.testing.assert_array_equal(a[6:], np.eye(9)[6:])
        np.testing.assert_array_equal(a[:, 6:][:6], 0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 25), st.integers(0, 5), st.integers(0, 2**31 - 1))
    def test_row_stochastic(self, n, extra, seed):
        g = random_graph(n, min(3, n - 1), np.random.default_rng(seed), weight_low=0.0)
        a = normalize_out_degree(g, extra)
        np.testing.assert_allclose(np.asarray(a.sum(axis=1)).ravel(), 1.0, atol=1e-12)


class TestExtend:
    def test_no_cold(self, tiny_instance):
        g, attrs, m = tiny_instance
        adj, x, index = extend_with_cold(m, attrs, [])
        np.testing.assert_array_equal(adj.toarray(), normalize_out_degree(g).toarray())
        np.testing.assert_array_equal(x, attrs.values)
        assert index.tolist() == list(range(12))

    def test_one_cold(self, rng):
        g = random_graph(10, 3, rng)
        attrs = AttributeTable(rng.normal(size=(10, 2)))
        m = mask_cold(g, DataSplit(np.arange(9), [9], []))
        adj, x, index = extend_with_cold(m, attrs, [9])
        last = adj.toarray()[-1]
        np.testing.assert_array_equal(last, np.eye(10)[-1])
        np.testing.assert_array_equal(x[-1], attrs.values[9])
        assert index[-1] == 9

    def test_extended_size_arithmetic(self):
        # 19416 warm + 2427 test = 21843 rows (checked on a structural stand-in)
        assert 19416 + 2427 == 21843
        split = make_split(24270, seed=0)
        g = DirectedWeightedGraph.from_edges(24270, [], [], [])
        m = mask_cold(g, split)
        attrs = AttributeTable(np.zeros((24270, 1)))
        adj, x, index = extend_with_cold(m, attrs, split.test_ids)
        assert adj.shape == (21843, 21843) and x.shape == (21843, 1) and len(index) == 21843

    def test_missing_attributes(self, tiny_instance):
        _, attrs, m = tiny_instance
        with pytest.raises(ValueError):
            extend_with_cold(m, attrs, [99])


def test_subsample_alignment(planted100):
    from gravityrank.graph import subsample

    g, attrs, meta = planted100
    sg, sa, sm = subsample(g, attrs, meta, 40, seed=3)
    assert sg.n == 40 and sa.rows == 40 and sm.n == 40
    pos = {name: i for i, name in enumerate(meta.ids)}
    orig = [pos[name] for name in sm.ids]
    assert orig == sorted(orig)
    ranks = meta.popularity_rank[orig]
    assert sorted(sm.popularity_rank.tolist()) == list(range(1, 41))
    assert np.array_equal(np.argsort(sm.popularity_rank, kind="stable"), np.argsort(ranks, kind="stable"))
    np.testing.assert_array_equal(sa.values, attrs.values[orig])
    for s, t, w in zip(sg.sources(), sg.targets, sg.weights):
        tt, ww = g.out_edges(orig[s])
        assert w == ww[list(tt).index(orig[t])]
