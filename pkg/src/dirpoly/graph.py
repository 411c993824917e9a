"""Directed graphs in CSR form and the on-disk dataset container."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    pass


class DatasetError(ValueError):
    pass


def _csr(num_nodes: int, src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # edges are already lexicographically sorted by (src, dst)
    counts = np.bincount(src, minlength=num_nodes)
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return offsets, dst.astype(np.int64)


class DirectedGraph:
    """Immutable directed graph with out- and in-adjacency in CSR layout.

    ``out_offsets/out_targets`` store A row by row; ``in_offsets/in_sources``
    store the transpose. Neighbor lists are sorted ascending.
    """

    __slots__ = ("num_nodes", "out_offsets", "out_targets", "in_offsets", "in_sources", "_cache")

    def __init__(self, num_nodes: int, src: np.ndarray, dst: np.ndarray):
        # expects deduplicated, validated edges; use build_graph() from user code
        self.num_nodes = int(num_nodes)
        order = np.lexsort((dst, src))
        s, d = src[order], dst[order]
        self.out_offsets, self.out_targets = _csr(self.num_nodes, s, d)
        order = np.lexsort((s, d))
        self.in_offsets, self.in_sources = _csr(self.num_nodes, d[order], s[order])
        for arr in (self.out_offsets, self.out_targets, self.in_offsets, self.in_sources):
            arr.setflags(write=False)
        self._cache: dict = {}

    @property
    def num_edges(self) -> int:
        return len(self.out_targets)

    def _check(self, v: int) -> None:
        if not 0 <= v < self.num_nodes:
            raise GraphError(f"node {v} out of range for graph with {self.num_nodes} nodes")

    def out_neighbors(self, v: int) -> np.ndarray:
        self._check(v)
        return self.out_targets[self.out_offsets[v]:self.out_offsets[v + 1]]

    def in_neighbors(self, v: int) -> np.ndarray:
        self._check(v)
        return self.in_sources[self.in_offsets[v]:self.in_offsets[v + 1]]

    def out_degree(self) -> np.ndarray:
        return np.diff(self.out_offsets)

    def in_degree(self) -> np.ndarray:
        return np.diff(self.in_offsets)

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(src, dst) in out-CSR order, i.e. sorted by source then target."""
        if "edges" not in self._cache:
            src = np.repeat(np.arange(self.num_nodes), self.out_degree())
            self._cache["edges"] = (src, self.out_targets)
        return self._cache["edges"]

    def in_edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(neighbor, receiver) pairs grouped by receiver over in-edges."""
        if "in_edges" not in self._cache:
            recv = np.repeat(np.arange(self.num_nodes), self.in_degree())
            self._cache["in_edges"] = (self.in_sources, recv)
        return self._cache["in_edges"]

    def out_edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(neighbor, receiver) pairs where each receiver aggregates its out-neighbors."""
        src, dst = self.edge_arrays()
        return dst, src

    def edge_set(self) -> set[tuple[int, int]]:
        src, dst = self.edge_arrays()
        return set(zip(src.tolist(), dst.tolist()))

    def adjacency(self) -> sp.csr_matrix:
        """A as a sparse 0/1 matrix, rows are sources."""
        if "adj" not in self._cache:
            data = np.ones(self.num_edges, dtype=np.int64)
            self._cache["adj"] = sp.csr_matrix(
                (data, self.out_targets, self.out_offsets), shape=(self.num_nodes,) * 2
            )
        return self._cache["adj"]

    def transpose(self) -> "DirectedGraph":
        src, dst = self.edge_arrays()
        return DirectedGraph(self.num_nodes, dst, src)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, DirectedGraph)
            and self.num_nodes == other.num_nodes
            and np.array_equal(self.out_offsets, other.out_offsets)
            and np.array_equal(self.out_targets, other.out_targets)
        )

    def __repr__(self) -> str:
        return f"DirectedGraph(num_nodes={self.num_nodes}, num_edges={self.num_edges})"


def build_graph(num_nodes: int, edges: Iterable[Sequence[int]]) -> DirectedGraph:
    """Build a graph from (src, dst) pairs; duplicates are dropped."""
    num_nodes = int(num_nodes)
    if num_nodes < 0:
        raise GraphError(f"num_nodes must be non-negative, got {num_nodes}")
    arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    if arr.size == 0:
        arr = arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GraphError(f"edges must be (src, dst) pairs, got array of shape {arr.shape}")
    bad = np.flatnonzero((arr < 0).any(axis=1) | (arr >= num_nodes).any(axis=1))
    if len(bad):
        s, d = arr[bad[0]]
        raise GraphError(f"edge ({s},{d}) has an index outside [0, {num_nodes})")
    arr = np.unique(arr, axis=0)
    return DirectedGraph(num_nodes, arr[:, 0], arr[:, 1])


def symmetrize(g: DirectedGraph) -> DirectedGraph:
    src, dst = g.edge_arrays()
    edges = np.concatenate([np.stack([src, dst], 1), np.stack([dst, src], 1)])
    return build_graph(g.num_nodes, edges)


def add_self_loops(g: DirectedGraph) -> DirectedGraph:
    src, dst = g.edge_arrays()
    loops = np.arange(g.num_nodes)
    edges = np.concatenate([np.stack([src, dst], 1), np.stack([loops, loops], 1)])
    return build_graph(g.num_nodes, edges)


def permute_graph(g: DirectedGraph, perm: np.ndarray) -> DirectedGraph:
    """Relabel node ``v`` as ``perm[v]``."""
    perm = np.asarray(perm)
    src, dst = g.edge_arrays()
    return build_graph(g.num_nodes, np.stack([perm[src], perm[dst]], 1))


# ----------------------------------------------------------------------------
# dataset container


class Task(str, Enum):
    MULTICLASS_ACCURACY = "multiclass-accuracy"
    BINARY_ROCAUC = "binary-rocauc"


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        if (self.train & self.val).any() or (self.train & self.test).any() or (self.val & self.test).any():
            raise DatasetError("split masks overlap")


@dataclass(frozen=True, eq=False)
class Dataset:
    graph: DirectedGraph
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    splits: list[Split] = field(default_factory=list)
    task: Task = Task.MULTICLASS_ACCURACY

    def __post_init__(self):
        n = self.graph.num_nodes
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DatasetError(f"features have {self.features.shape[0]} rows, graph has {n} nodes")
        if self.labels.shape != (n,):
            raise DatasetError(f"labels have {len(self.labels)} entries, graph has {n} nodes")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            bad = int(np.flatnonzero((self.labels < 0) | (self.labels >= self.num_classes))[0])
            raise DatasetError(
                f"label {int(self.labels[bad])} at node {bad} outside [0, {self.num_classes})"
            )
        if self.task is Task.BINARY_ROCAUC and self.num_classes != 2:
            raise DatasetError(f"binary-rocauc requires 2 classes, got {self.num_classes}")
        for s in self.splits:
            if any(m.shape != (n,) for m in (s.train, s.val, s.test)):
                raise DatasetError("split mask length does not match node count")

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def with_graph(self, graph: DirectedGraph) -> "Dataset":
        return Dataset(graph, self.features, self.labels, self.num_classes, self.splits, self.task)

    def equals(self, other: "Dataset") -> bool:
        return (
            self.graph == other.graph
            and self.num_classes == other.num_classes
            and self.task == other.task
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and len(self.splits) == len(other.splits)
            and all(
                np.array_equal(a.train, b.train) and np.array_equal(a.val, b.val)
                and np.array_equal(a.test, b.test)
                for a, b in zip(self.splits, other.splits)
            )
        )


_PARTS = ("train", "val", "test")


def save_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "num_nodes": ds.num_nodes,
        "num_edges": ds.graph.num_edges,
        "feature_dim": ds.feature_dim,
        "num_classes": ds.num_classes,
        "task": ds.task.value,
        "num_splits": len(ds.splits),
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")

    src, dst = ds.graph.edge_arrays()
    _write_lines(path / "edges.csv", (f"{s},{d}" for s, d in zip(src.tolist(), dst.tolist())))
    # repr() of a Python float is the shortest string that round-trips exactly
    _write_lines(path / "features.csv", (",".join(map(repr, row)) for row in ds.features.tolist()))
    _write_lines(path / "labels.csv", (str(y) for y in ds.labels.tolist()))

    def split_lines():
        for k, s in enumerate(ds.splits):
            part = np.full(ds.num_nodes, "", dtype=object)
            for name in _PARTS:
                part[getattr(s, name)] = name
            for v in np.flatnonzero(part != ""):
                yield f"{k},{v},{part[v]}"

    _write_lines(path / "splits.csv", split_lines())


def _write_lines(path: Path, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")


def _read_rows(path: Path) -> list[list[str]]:
    if not path.is_file():
        raise DatasetError(f"missing file: {path.name}")
    with open(path, encoding="utf-8", newline="") as fh:
        return [row for row in csv.reader(fh) if row]


def load_dataset(path) -> Dataset:
    path = Path(path)
    mf = path / "manifest.json"
    if not mf.is_file():
        raise DatasetError("missing file: manifest.json")
    manifest = json.loads(mf.read_text(encoding="utf-8"))
    try:
        n = int(manifest["num_nodes"])
        num_classes = int(manifest["num_classes"])
        task = Task(manifest["task"])
        num_splits = int(manifest.get("num_splits", 0))
        feature_dim = int(manifest["feature_dim"])
    except KeyError as exc:
        raise DatasetError(f"manifest.json lacks key {exc.args[0]!r}") from None

    edge_rows = _read_rows(path / "edges.csv")
    edges = np.array(edge_rows, dtype=np.int64).reshape(-1, 2)
    try:
        graph = build_graph(n, edges)
    except GraphError as exc:
        raise DatasetError(f"edges.csv: {exc}") from None
    if "num_edges" in manifest and graph.num_edges != int(manifest["num_edges"]):
        raise DatasetError(
            f"edges.csv has {graph.num_edges} distinct edges, manifest says {manifest['num_edges']}"
        )

    feat_rows = _read_rows(path / "features.csv")
    if len(feat_rows) != n:
        raise DatasetError(f"features.csv has {len(feat_rows)} rows, manifest says num_nodes={n}")
    for i, row in enumerate(feat_rows):
        if len(row) != feature_dim:
            raise DatasetError(
                f"features.csv row {i} has {len(row)} columns, manifest says feature_dim={feature_dim}"
            )
    features = np.array([[float(x) for x in row] for row in feat_rows], dtype=np.float64).reshape(n, feature_dim)

    label_rows = _read_rows(path / "labels.csv")
    if len(label_rows) != n:
        raise DatasetError(f"labels.csv has {len(label_rows)} rows, manifest says num_nodes={n}")
    labels = np.array([int(r[0]) for r in label_rows], dtype=np.int64)
    bad = np.flatnonzero((labels < 0) | (labels >= num_classes))
    if len(bad):
        raise DatasetError(
            f"labels.csv: label {labels[bad[0]]} at node {bad[0]} outside [0, {num_classes})"
        )

    masks = {(k, p): np.zeros(n, dtype=bool) for k in range(num_splits) for p in _PARTS}
    for row in _read_rows(path / "splits.csv"):
        k, v, part = int(row[0]), int(row[1]), row[2].strip()
        if (k, part) not in masks or not 0 <= v < n:
            raise DatasetError(f"splits.csv: invalid entry {','.join(row)}")
        masks[(k, part)][v] = True
    splits = [Split(masks[(k, "train")], masks[(k, "val")], masks[(k, "test")]) for k in range(num_splits)]
    return Dataset(graph, features, labels, num_classes, splits, task)
