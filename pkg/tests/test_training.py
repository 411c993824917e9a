import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dirpoly.autodiff import Tensor
from dirpoly.datagen import GenSpec, generate
from dirpoly.graph import Dataset, permute_graph
from dirpoly.metrics import MetricUndefined, accuracy, roc_auc
from dirpoly.models import build_model
from dirpoly.training import (
    AdamState, DivergenceError, TrainConfig, TrainReport, adam_step, restore, run_protocol, task_metric,
    train_one,
)

from oracles import loop_accuracy, pairwise_auc

# ---------------------------------------------------------------- Adam


def test_adam_first_step_magnitude():
    for g in (3.0, -0.2):
        p = np.array([1.0])
        adam_step([p], [np.array([g])], AdamState.zeros([p]), lr=0.01)
        assert abs(abs(p[0] - 1.0) - 0.01) < 1e-9
        assert np.sign(1.0 - p[0]) == np.sign(g)


def test_adam_zero_gradient_no_change():
    p = np.array([[0.3, -2.0]])
    st_ = AdamState.zeros([p])
    for _ in range(5):
        adam_step([p], [np.zeros_like(p)], st_, lr=0.1)
    assert p.tolist() == [[0.3, -2.0]]


def test_adam_quadratic_bowl():
    w = np.array([0.6, -0.8])
    s = AdamState.zeros([w])
    for _ in range(200):
        adam_step([w], [2 * w], s, lr=0.05)
    assert np.linalg.norm(w) < 1e-3


def test_adam_decoupled_weight_decay():
    p = np.array([2.0])
    adam_step([p], [np.zeros(1)], AdamState.zeros([p]), lr=0.1, weight_decay=0.5)
    assert p[0] == 2.0 * (1 - 0.05)


def test_adam_shape_mismatch():
    p = np.zeros(3)
    with pytest.raises(ValueError, match="shape"):
        adam_step([p], [np.zeros(2)], AdamState.zeros([p]), lr=0.1)


# ---------------------------------------------------------------- metrics


def test_accuracy_examples():
    y = np.array([0, 2, 1, 1])
    onehot = np.eye(3)[y]
    mask = np.ones(4, bool)
    assert accuracy(onehot, y, mask) == 1.0
    assert accuracy(-onehot, y, mask) == 0.0
    assert accuracy(np.zeros((4, 3)), np.array([0, 0, 0, 1]), mask) == 0.75  # ties go to class 0
    with pytest.raises(MetricUndefined):
        accuracy(onehot, y, np.zeros(4, bool))


def test_accuracy_loop_oracle():
    rng = np.random.default_rng(0)
    logits = rng.integers(-2, 3, size=(100, 4)).astype(float)  # plenty of ties
    y = rng.integers(0, 4, 100)
    mask = rng.random(100) < 0.6
    assert accuracy(logits, y, mask) == loop_accuracy(logits, y, mask)


def test_auc_examples():
    y = np.array([0, 0, 1, 1])
    m = np.ones(4, bool)
    assert roc_auc(np.array([0.1, 0.2, 0.8, 0.9]), y, m) == 1.0
    assert roc_auc(np.full(4, 3.0), y, m) == 0.5
    with pytest.raises(MetricUndefined, match="AUC undefined"):
        roc_auc(np.arange(4.0), np.ones(4, int), m)


def test_auc_pairwise_oracle():
    rng = np.random.default_rng(1)
    s = rng.normal(size=50)
    y = rng.integers(0, 2, 50)
    assert abs(roc_auc(s, y, np.ones(50, bool)) - pairwise_auc(s, y)) < 1e-12


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_metric_invariances(seed):
    rng = np.random.default_rng(seed)
    n = 40
    s = rng.integers(0, 6, n).astype(float)
    y = np.r_[0, 1, rng.integers(0, 2, n - 2)]
    m = np.ones(n, bool)
    base = roc_auc(s, y, m)
    assert roc_auc(np.exp(s) * 3 + 1, y, m) == pytest.approx(base, abs=1e-15)
    perm = rng.permutation(n)
    assert roc_auc(s[perm], y[perm], m) == pytest.approx(base, abs=1e-15)
    logits = rng.normal(size=(n, 3))
    yc = rng.integers(0, 3, n)
    assert accuracy(logits[perm], yc[perm], m) == accuracy(logits, yc, m)


# ---------------------------------------------------------------- training


def separable(seed=0, n=400, task="multiclass-accuracy"):
    spec = GenSpec(n, 2, 8, [[0.5, 0.5], [0.5, 0.5]], expected_out_degree=4, feature_noise=0.3,
                   num_splits=3, seed=seed, task=task)
    return generate(spec)


SMALL = dict(hidden=8, layers=1, max_epochs=200, patience=200, learning_rate=1e-2, seeds=(0,))


def test_train_separable_reaches_high_accuracy():
    rec = train_one(separable(), 0, TrainConfig(model="poly", **SMALL), seed=0)
    assert rec.test >= 0.95
    assert rec.epochs_run <= 200


def test_binary_task_uses_auc():
    ds = separable(task="binary-rocauc")
    rec = train_one(ds, 0, TrainConfig(model="poly", **{**SMALL, "max_epochs": 50, "patience": 50}), seed=1)
    assert 0.9 <= rec.test <= 1.0
    model = build_model(TrainConfig(model="gcn", **SMALL).model_spec(ds))
    assert model.spec.out_dim == 1


def test_patience_zero_runs_one_epoch():
    rec = train_one(separable(), 0, TrainConfig(model="gcn", hidden=4, layers=1, patience=0), seed=0)
    assert rec.epochs_run == 1 and len(rec.loss_curve) == 1


def test_same_seed_bit_identical():
    cfg = TrainConfig(model="dir-poly", hidden=8, layers=2, max_epochs=15, patience=15)
    ds = separable()
    a, b = train_one(ds, 1, cfg, 3), train_one(ds, 1, cfg, 3)
    assert a.loss_curve == b.loss_curve and a.val_curve == b.val_curve
    assert all(np.array_equal(x, y) for x, y in zip(a.state, b.state))


def test_early_stopping_keeps_best_snapshot():
    ds = separable(1)
    cfg = TrainConfig(model="gat", hidden=8, layers=1, max_epochs=60, patience=10, learning_rate=3e-2)
    rec = train_one(ds, 0, cfg, 0)
    assert rec.best_val == max(rec.val_curve)
    assert rec.best_epoch == int(np.argmax(rec.val_curve))
    assert rec.epochs_run - 1 - rec.best_epoch <= cfg.patience
    model = restore(build_model(cfg.model_spec(ds)), rec.state)
    out = model.forward(ds.graph, Tensor(ds.features)).values
    assert task_metric(ds, out, ds.splits[0].val) == rec.best_val
    assert task_metric(ds, out, ds.splits[0].test) == rec.test


def test_divergence_reports_epoch():
    ds = separable()
    feats = ds.features.copy()
    feats[ds.splits[0].train.argmax(), 0] = np.inf
    bad = Dataset(ds.graph, feats, ds.labels, 2, ds.splits)
    with pytest.raises(DivergenceError, match="epoch 0"):
        with np.errstate(all="ignore"):
            train_one(bad, 0, TrainConfig(model="gcn", hidden=4, layers=1, max_epochs=3, patience=3), 0)


def test_config_validation():
    with pytest.raises(ValueError, match="patience"):
        TrainConfig(max_epochs=5, patience=6)
    with pytest.raises(ValueError, match="seed"):
        TrainConfig(seeds=())


def test_protocol_single_seed_and_formatting():
    ds = separable()
    rep = run_protocol(ds, TrainConfig(model="gcn", hidden=4, layers=1, max_epochs=5, patience=5, seeds=(4,)))
    assert rep.std == 0.0
    rep2 = TrainReport("m", "d", "accuracy", [])
    rep2.records = rep.records * 3
    assert rep2.std == 0.0


def test_protocol_aggregate_and_split_cycling():
    ds = separable()
    cfg = TrainConfig(model="gcn", hidden=4, layers=1, max_epochs=8, patience=8, seeds=tuple(range(10)))
    rep = run_protocol(ds, cfg, "toy")
    assert [r.split_id for r in rep.records] == [i % 3 for i in range(10)]
    tests = [r.test for r in rep.records]
    assert abs(rep.mean - sum(tests) / 10) < 1e-12
    assert abs(rep.std - np.std(tests, ddof=1)) < 1e-15
    import re
    assert re.fullmatch(r"\d{1,3}\.\d\d ± \d+\.\d\d", rep.formatted())
    body = json.loads(rep.to_json())
    assert len(body["seeds"]) == 10 and "state" not in body["seeds"][0]
    header, row = rep.to_csv().splitlines()
    assert header == "model,dataset,metric,mean,std,seeds"
    assert row.startswith("gcn,toy,accuracy,") and row.endswith("0 1 2 3 4 5 6 7 8 9")


def test_report_format_example():
    class R:
        def __init__(self, t):
            self.test = t
    rep = TrainReport("poly", "x", "accuracy", [R(0.9), R(0.95)])
    assert rep.formatted() == "92.50 ± 3.54"


def test_accuracy_invariant_under_node_reordering():
    ds = separable()
    perm = np.random.default_rng(0).permutation(ds.num_nodes)
    logits = np.random.default_rng(1).normal(size=(ds.num_nodes, 2))
    pl = np.empty_like(logits)
    pl[perm] = logits
    py = np.empty_like(ds.labels)
    py[perm] = ds.labels
    pm = np.empty_like(ds.splits[0].test)
    pm[perm] = ds.splits[0].test
    assert accuracy(pl, py, pm) == accuracy(logits, ds.labels, ds.splits[0].test)
    assert permute_graph(ds.graph, perm).num_edges == ds.graph.num_edges
