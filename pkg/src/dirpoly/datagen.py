"""Seeded synthetic graphs with controllable (and directional) heterophily.

Nodes get a latent class; directed edges are drawn from a class-pair affinity
matrix (rows are source classes); features are orthogonal sign codes of the
latent class plus Gaussian noise. Labels are either the latent class itself or
the majority latent class among a node's in-neighbors, which makes them a
function of edge direction.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import hadamard

from .graph import Dataset, Split, Task, build_graph, symmetrize


class GenSpecError(ValueError):
    pass


@dataclass(frozen=True)
class GenSpec:
    num_nodes: int
    num_classes: int
    feature_dim: int
    affinity: tuple[tuple[float, ...], ...]
    expected_out_degree: float = 5.0
    feature_noise: float = 1.0
    label_mode: str = "intrinsic"
    split_fractions: tuple[float, float, float] = (0.5, 0.25, 0.25)
    num_splits: int = 10
    seed: int = 0
    task: str = "multiclass-accuracy"

    def __post_init__(self):
        aff = np.asarray(self.affinity, dtype=np.float64)
        object.__setattr__(self, "affinity", tuple(tuple(map(float, r)) for r in aff))
        object.__setattr__(self, "split_fractions", tuple(map(float, self.split_fractions)))
        if self.num_nodes < 1:
            raise GenSpecError("num_nodes must be positive")
        if self.num_classes < 2:
            raise GenSpecError("num_classes must be at least 2")
        if aff.shape != (self.num_classes, self.num_classes):
            raise GenSpecError(f"affinity must be {self.num_classes}x{self.num_classes}, got {aff.shape}")
        if (aff < 0).any() or (aff > 1).any():
            raise GenSpecError("affinity entries must lie in [0, 1]")
        if Task(self.task) is Task.BINARY_ROCAUC and self.num_classes != 2:
            raise GenSpecError("binary-rocauc requires num_classes == 2")
        if self.label_mode not in ("intrinsic", "in_neighbor_majority"):
            raise GenSpecError(f"unknown label_mode {self.label_mode!r}")
        if len(self.split_fractions) != 3 or sum(self.split_fractions) > 1 + 1e-12:
            raise GenSpecError("split_fractions must be three numbers summing to at most 1")
        if self.expected_out_degree < 0 or self.feature_noise < 0:
            raise GenSpecError("expected_out_degree and feature_noise must be non-negative")
        if _code_length(self.feature_dim) < self.num_classes:
            raise GenSpecError(
                f"feature_dim {self.feature_dim} too small for {self.num_classes} orthogonal class codes"
            )

    @classmethod
    def from_json(cls, path) -> "GenSpec":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        try:
            return cls(**raw)
        except TypeError as exc:
            raise GenSpecError(str(exc)) from None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"


def _code_length(d: int) -> int:
    """Largest power of two not exceeding d (0 for d < 1)."""
    return 1 << (int(d).bit_length() - 1) if d >= 1 else 0


def class_codes(num_classes: int, feature_dim: int) -> np.ndarray:
    """Mutually orthogonal +-1 rows of a Hadamard matrix, zero-padded to feature_dim."""
    m = _code_length(feature_dim)
    codes = np.zeros((num_classes, feature_dim))
    codes[:, :m] = hadamard(m)[:num_classes]
    return codes


def _sample_edges(z: np.ndarray, aff: np.ndarray, deg: float, rng) -> np.ndarray:
    n = len(z)
    counts = np.bincount(z, minlength=aff.shape[0]).astype(np.float64)
    # expected edges without self-pairs: sum_ab aff_ab * n_a * (n_b - [a == b])
    pairs = np.outer(counts, counts) - np.diag(counts)
    mass = float((aff * pairs).sum())
    rate = deg * n / mass if mass > 0 else 0.0
    prob = np.clip(aff * rate, 0.0, 1.0)
    chunks = []
    for u0 in range(0, n, 512):
        u = np.arange(u0, min(u0 + 512, n))
        p = prob[z[u]][:, z]
        hit = rng.random(p.shape) < p
        hit[np.arange(len(u)), u] = False
        r, c = np.nonzero(hit)
        chunks.append(np.stack([u[r], c], 1))
    return np.concatenate(chunks) if chunks else np.zeros((0, 2), np.int64)


def in_neighbor_majority(num_nodes: int, edges: np.ndarray, latent: np.ndarray, num_classes: int) -> np.ndarray:
    """Most frequent latent class among in-neighbors, lowest class on ties.

    A node without in-neighbors has an all-zero count and therefore gets class 0.
    """
    counts = np.zeros((num_nodes, num_classes), dtype=np.int64)
    np.add.at(counts, (edges[:, 1], latent[edges[:, 0]]), 1)
    return np.argmax(counts, axis=1)


def random_splits(n: int, fractions, num_splits: int, rng) -> list[Split]:
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_test = min(int(round(fractions[2] * n)), n - n_train - n_val)
    splits = []
    for _ in range(num_splits):
        perm = rng.permutation(n)
        masks = []
        for lo, hi in ((0, n_train), (n_train, n_train + n_val), (n_train + n_val, n_train + n_val + n_test)):
            m = np.zeros(n, dtype=bool)
            m[perm[lo:hi]] = True
            masks.append(m)
        splits.append(Split(*masks))
    return splits


def generate(spec: GenSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    n, c = spec.num_nodes, spec.num_classes
    latent = rng.integers(0, c, n)
    edges = _sample_edges(latent, np.asarray(spec.affinity), spec.expected_out_degree, rng)
    graph = build_graph(n, edges)
    feats = class_codes(c, spec.feature_dim)[latent] + spec.feature_noise * rng.normal(size=(n, spec.feature_dim))
    if spec.label_mode == "intrinsic":
        labels = latent
    else:
        src, dst = graph.edge_arrays()
        labels = in_neighbor_majority(n, np.stack([src, dst], 1), latent, c)
    splits = random_splits(n, spec.split_fractions, spec.num_splits, rng)
    return Dataset(graph, feats, labels.astype(np.int64), c, splits, Task(spec.task))


def latent_classes(spec: GenSpec) -> np.ndarray:
    """Replays the generator's first draw: the latent class of every node."""
    return np.random.default_rng(spec.seed).integers(0, spec.num_classes, spec.num_nodes)


# Class 3 broadcasts to every other class but is almost never targeted, so its
# members have few in-neighbors and labels hinge on who points at whom. Tuned
# so that |h(A^T) - h(A)| >= 0.2 and labels are only partly recoverable from
# the symmetrized graph.
DIRECTIONAL_AFFINITY = (
    (0.00, 0.01, 0.05, 0.00),
    (0.05, 0.10, 0.14, 0.02),
    (0.01, 0.00, 0.04, 0.03),
    (0.53, 0.34, 0.48, 0.00),
)
DIRECTIONAL_DEGREE = 8.0
DIRECTIONAL_NOISE = 0.3


def directional_spec(seed: int = 0) -> GenSpec:
    return GenSpec(
        num_nodes=3000, num_classes=4, feature_dim=16, affinity=DIRECTIONAL_AFFINITY,
        expected_out_degree=DIRECTIONAL_DEGREE, feature_noise=DIRECTIONAL_NOISE,
        label_mode="in_neighbor_majority", num_splits=10, seed=seed,
    )


def directional_benchmark(seed: int = 0) -> tuple[Dataset, Dataset]:
    """(directed dataset, twin on the symmetrized graph with identical features/labels/splits)."""
    directed = generate(directional_spec(seed))
    return directed, directed.with_graph(symmetrize(directed.graph))
