import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dirpoly.graph import (
    Dataset, DatasetError, GraphError, Split, Task, build_graph, load_dataset, permute_graph,
    save_dataset, symmetrize,
)

from oracles import dense_adjacency, random_edges

edge_lists = st.integers(1, 15).flatmap(
    lambda n: st.tuples(st.just(n), st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=40))
)


def test_single_edge():
    g = build_graph(2, [(0, 1)])
    assert g.out_neighbors(0).tolist() == [1]
    assert g.in_neighbors(1).tolist() == [0]
    assert g.in_neighbors(0).tolist() == []


def test_duplicates_removed():
    assert build_graph(3, [(0, 1), (1, 2), (0, 1)]).num_edges == 2


def test_out_of_range_edge_named():
    with pytest.raises(GraphError, match=r"\(1,3\)"):
        build_graph(3, [(0, 1), (1, 3)])


def test_neighbor_query_out_of_range():
    g = build_graph(2, [(0, 1)])
    with pytest.raises(GraphError):
        g.out_neighbors(2)
    with pytest.raises(GraphError):
        g.in_neighbors(-1)


def test_chain_and_isolated():
    g = build_graph(4, [(0, 1), (1, 2)])
    assert g.in_neighbors(1).tolist() == [0]
    assert g.out_neighbors(1).tolist() == [2]
    assert g.in_neighbors(3).size == 0 and g.out_neighbors(3).size == 0


def test_self_loops_preserved_not_injected():
    g = build_graph(3, [(1, 1), (0, 2)])
    assert (1, 1) in g.edge_set()
    assert (0, 0) not in g.edge_set()


def test_transpose_round_trip_random():
    rng = np.random.default_rng(1)
    edges = random_edges(rng, 50, 200)
    g = build_graph(50, edges)
    assert g.edge_set() == {(int(u), int(v)) for u, v in edges}
    assert g.transpose().transpose().edge_set() == g.edge_set()
    assert g.transpose().edge_set() == {(v, u) for u, v in g.edge_set()}


def test_neighbors_match_dense_scan():
    rng = np.random.default_rng(2)
    edges = random_edges(rng, 20, 60)
    g = build_graph(20, edges)
    a = dense_adjacency(20, edges)
    for v in range(20):
        assert g.out_neighbors(v).tolist() == np.flatnonzero(a[v]).tolist()
        assert g.in_neighbors(v).tolist() == np.flatnonzero(a[:, v]).tolist()
    assert g.out_degree().tolist() == a.sum(1).tolist()
    assert g.in_degree().tolist() == a.sum(0).tolist()


def test_symmetrize_examples():
    assert symmetrize(build_graph(2, [(0, 1)])).edge_set() == {(0, 1), (1, 0)}
    sym = build_graph(3, [(0, 1), (1, 0), (2, 2)])
    assert symmetrize(sym).edge_set() == sym.edge_set()


def test_symmetrize_random_union():
    rng = np.random.default_rng(3)
    g = build_graph(30, random_edges(rng, 30, 80))
    e = g.edge_set()
    assert symmetrize(g).num_edges == len(e | {(v, u) for u, v in e})


@given(edge_lists)
@settings(max_examples=60, deadline=None)
def test_csr_invariants(data):
    n, edges = data
    g = build_graph(n, edges)
    for offs, tgt in ((g.out_offsets, g.out_targets), (g.in_offsets, g.in_sources)):
        assert offs[0] == 0 and offs[-1] == g.num_edges
        assert np.all(np.diff(offs) >= 0)
        assert np.all((tgt >= 0) & (tgt < n))
    assert g.out_degree().sum() == g.in_degree().sum() == g.num_edges
    for u, v in g.edge_set():
        assert v in g.out_neighbors(u) and u in g.in_neighbors(v)
    for v in range(n):
        nb = g.out_neighbors(v)
        assert np.all(np.diff(nb) > 0)
    assert g.transpose().transpose() == g
    s = symmetrize(g)
    assert s.transpose() == s


@given(edge_lists, st.randoms())
@settings(max_examples=30, deadline=None)
def test_permute_preserves_structure(data, rnd):
    n, edges = data
    g = build_graph(n, edges)
    perm = list(range(n))
    rnd.shuffle(perm)
    pg = permute_graph(g, np.array(perm))
    assert pg.edge_set() == {(perm[u], perm[v]) for u, v in g.edge_set()}


def _small_dataset(n=3):
    g = build_graph(n, [(0, 1), (1, 2)])
    feats = np.arange(n * 2, dtype=float).reshape(n, 2) / 3.0
    labels = np.array([0, 1, 0][:n])
    split = Split(np.array([1, 0, 0], bool), np.array([0, 1, 0], bool), np.array([0, 0, 1], bool))
    return Dataset(g, feats, labels, 2, [split])


def test_dataset_round_trip(tmp_path):
    ds = _small_dataset()
    save_dataset(ds, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert back.num_nodes == 3
    assert back.equals(ds)
    assert np.array_equal(back.features, ds.features)


def test_split_overlap_rejected():
    m = np.array([1, 0], bool)
    with pytest.raises(DatasetError):
        Split(m, m, ~m)


def test_label_range_and_binary_checks():
    g = build_graph(2, [])
    with pytest.raises(DatasetError, match="outside"):
        Dataset(g, np.zeros((2, 1)), np.array([0, 2]), 2)
    with pytest.raises(DatasetError, match="binary"):
        Dataset(g, np.zeros((2, 1)), np.array([0, 2]), 3, task=Task.BINARY_ROCAUC)
    with pytest.raises(DatasetError, match="rows"):
        Dataset(g, np.zeros((3, 1)), np.array([0, 1]), 2)


def _saved(tmp_path):
    path = tmp_path / "d"
    save_dataset(_small_dataset(), path)
    return path


def test_load_missing_file(tmp_path):
    path = _saved(tmp_path)
    (path / "labels.csv").unlink()
    with pytest.raises(DatasetError, match="missing file: labels.csv"):
        load_dataset(path)


def test_load_row_count_mismatch(tmp_path):
    path = _saved(tmp_path)
    mf = json.loads((path / "manifest.json").read_text())
    mf["num_nodes"] = 5
    (path / "manifest.json").write_text(json.dumps(mf))
    with pytest.raises(DatasetError, match="features.csv has 3 rows, manifest says num_nodes=5"):
        load_dataset(path)


def test_load_label_out_of_range(tmp_path):
    path = _saved(tmp_path)
    (path / "labels.csv").write_text("0\n1\n7\n")
    with pytest.raises(DatasetError, match="label 7 at node 2"):
        load_dataset(path)


def test_load_column_mismatch(tmp_path):
    path = _saved(tmp_path)
    (path / "features.csv").write_text("1.0,2.0\n3.0\n4.0,5.0\n")
    with pytest.raises(DatasetError, match="row 1 has 1 columns"):
        load_dataset(path)


def test_load_bad_edge(tmp_path):
    path = _saved(tmp_path)
    (path / "edges.csv").write_text("0,1\n1,9\n")
    with pytest.raises(DatasetError, match=r"edges.csv: edge \(1,9\)"):
        load_dataset(path)


def test_container_text_format(tmp_path):
    path = _saved(tmp_path)
    assert (path / "edges.csv").read_bytes() == b"0,1\n1,2\n"
    assert (path / "labels.csv").read_bytes() == b"0\n1\n0\n"
    assert (path / "splits.csv").read_bytes() == b"0,0,train\n0,1,val\n0,2,test\n"
    mf = json.loads((path / "manifest.json").read_text())
    assert mf == {"num_nodes": 3, "num_edges": 2, "feature_dim": 2, "num_classes": 2,
                  "task": "multiclass-accuracy", "num_splits": 1}


def test_features_full_precision(tmp_path):
    g = build_graph(2, [])
    feats = np.array([[0.1 + 0.2, np.pi], [1e-300, -5e300]])
    ds = Dataset(g, feats, np.array([0, 1]), 2)
    save_dataset(ds, tmp_path / "d")
    assert np.array_equal(load_dataset(tmp_path / "d").features, feats)
