import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dirpoly.datagen import (
    GenSpec, GenSpecError, class_codes, directional_benchmark, directional_spec, generate, latent_classes,
)
from dirpoly.graph import load_dataset, save_dataset, symmetrize
from dirpoly.homophily import homophily_report, node_homophily


def spec(**kw):
    base = dict(num_nodes=300, num_classes=3, feature_dim=4, affinity=np.full((3, 3), 0.3).tolist(), seed=0)
    base.update(kw)
    return GenSpec(**base)


def test_diagonal_dominant_is_homophilic():
    ds = generate(spec(num_nodes=2000, num_classes=2, affinity=[[0.9, 0.1], [0.1, 0.9]]))
    assert node_homophily(ds.graph, ds.labels) > 0.8


def test_zero_diagonal_is_heterophilic():
    aff = (1 - np.eye(4)).tolist()
    ds = generate(spec(num_nodes=2000, num_classes=4, affinity=aff))
    assert node_homophily(ds.graph, ds.labels) < 0.1


def test_cyclic_affinity_hidden_two_hop_homophily():
    aff = np.roll(np.eye(4), 1, axis=1).tolist()  # class c targets class c+1
    ds = generate(spec(num_nodes=2000, num_classes=4, affinity=aff))
    rep = homophily_report(ds)
    assert rep["A"] < 0.05
    assert rep["AT_A"] > rep["A"] + 0.5


def test_majority_rule_exact_on_directional_benchmark():
    directed, twin = directional_benchmark(0)
    latent = latent_classes(directional_spec(0))
    for v in range(directed.num_nodes):
        counts = np.bincount(latent[directed.graph.in_neighbors(v)], minlength=4)
        assert directed.labels[v] == int(np.argmax(counts))  # argmax picks the lowest class on ties
    assert twin.graph == symmetrize(directed.graph)
    assert np.array_equal(twin.labels, directed.labels)
    assert np.array_equal(twin.features, directed.features)


def test_directional_benchmark_gap():
    rep = homophily_report(directional_benchmark(0)[0])
    assert abs(rep["A_T"] - rep["A"]) >= 0.2


def test_same_spec_bit_identical():
    a, b = generate(spec(seed=5)), generate(spec(seed=5))
    assert a.equals(b)
    assert not a.equals(generate(spec(seed=6)))


def test_expected_out_degree_concentration():
    for deg in (3.0, 8.0):
        ds = generate(spec(num_nodes=1500, expected_out_degree=deg, affinity=[[0.1, 0.5, 0], [0.2, 0, 0.9], [1, 1, 1]]))
        assert abs(ds.graph.num_edges / ds.num_nodes - deg) < 0.1 * deg


def test_class_codes_orthogonal():
    codes = class_codes(4, 6)
    assert codes.shape == (4, 6)
    assert np.array_equal(codes[:, :4] @ codes[:, :4].T, 4 * np.eye(4))
    assert np.all(codes[:, 4:] == 0)


def test_noise_free_features_are_codes():
    s = spec(feature_noise=0.0)
    ds = generate(s)
    assert np.array_equal(ds.features, class_codes(3, 4)[latent_classes(s)])


def test_splits_default_fractions():
    ds = generate(spec(num_nodes=400, num_splits=4))
    assert len(ds.splits) == 4
    for sp in ds.splits:
        assert (sp.train.sum(), sp.val.sum(), sp.test.sum()) == (200, 100, 100)
    assert not np.array_equal(ds.splits[0].train, ds.splits[1].train)


@pytest.mark.parametrize("kw,msg", [
    (dict(num_nodes=0), "num_nodes"),
    (dict(num_classes=1, affinity=[[0.1]]), "num_classes"),
    (dict(affinity=[[0.1, 0.2], [0.3, 0.4]]), "3x3"),
    (dict(affinity=np.full((3, 3), 1.5).tolist()), r"\[0, 1\]"),
    (dict(split_fractions=(0.6, 0.3, 0.3)), "split_fractions"),
    (dict(feature_dim=2), "feature_dim"),
    (dict(label_mode="nope"), "label_mode"),
    (dict(task="binary-rocauc"), "binary"),
])
def test_degenerate_specs_rejected(kw, msg):
    with pytest.raises(GenSpecError, match=msg):
        spec(**kw)


def test_spec_json_round_trip(tmp_path):
    s = directional_spec(3)
    path = tmp_path / "s.json"
    path.write_text(s.to_json())
    assert GenSpec.from_json(path) == s
    path.write_text('{"num_nodes": 3, "bogus": 1}')
    with pytest.raises(GenSpecError):
        GenSpec.from_json(path)


@given(st.integers(0, 10_000), st.integers(2, 4), st.integers(5, 60))
@settings(max_examples=15, deadline=None)
def test_generated_datasets_round_trip(tmp_path_factory, seed, c, n):
    rng = np.random.default_rng(seed)
    s = GenSpec(n, c, 4, rng.random((c, c)).tolist(), expected_out_degree=3, seed=seed,
                label_mode="in_neighbor_majority" if seed % 2 else "intrinsic", num_splits=2)
    ds = generate(s)
    assert ds.labels.max() < c and ds.features.shape == (n, 4)
    d = tmp_path_factory.mktemp("ds")
    save_dataset(ds, d)
    assert load_dataset(d).equals(ds)
