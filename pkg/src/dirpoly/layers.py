"""Graph convolutions and the gated polynomial block."""
from __future__ import annotations

from enum import Enum
from typing import Iterator

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor
from .graph import DirectedGraph


class Direction(str, Enum):
    FROM_IN = "in"
    FROM_OUT = "out"


class Module:
    """Parameter container; parameters are enumerated in declaration order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{key}.")
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def init_parameters(self, rng: np.random.Generator) -> None:
        """Glorot-uniform for matrices, zeros for biases and gate logits."""
        for name, p in self.named_parameters():
            leaf = name.rsplit(".", 1)[-1]
            if leaf == "beta_raw" or leaf == "b" or leaf.startswith("b_"):
                p.values[...] = 0.0
            else:
                fan_in, fan_out = _fans(leaf, p)
                bound = ad.glorot_bound(fan_in, fan_out)
                p.values[...] = rng.uniform(-bound, bound, size=p.shape)


def _fans(leaf: str, p: Tensor) -> tuple[int, int]:
    rows, cols = p.shape
    if leaf.startswith("a_"):
        # attention vectors are stored flat as 1 x (H*D); fan is per head
        return rows * cols, 1
    return rows, cols


def _param(rows: int, cols: int, name: str) -> Tensor:
    return Tensor(np.zeros((rows, cols)), requires_grad=True, name=name)


def _receiver_edges(g: DirectedGraph, direction: Direction) -> tuple[np.ndarray, np.ndarray]:
    return g.in_edge_arrays() if direction is Direction.FROM_IN else g.out_edge_arrays()


def mean_matrix(g: DirectedGraph, direction: Direction) -> sp.csr_matrix:
    """Uniform averaging over each receiver's neighborhood; empty rows stay zero."""
    key = ("mean", direction)
    if key not in g._cache:
        nbr, recv = _receiver_edges(g, direction)
        deg = np.bincount(recv, minlength=g.num_nodes).astype(np.float64)
        w = 1.0 / deg[recv] if len(recv) else np.zeros(0)
        g._cache[key] = sp.csr_matrix((w, (recv, nbr)), shape=(g.num_nodes, g.num_nodes))
    return g._cache[key]


def gcn_matrix(g: DirectedGraph) -> sp.csr_matrix:
    """Self-loop augmented, symmetrically normalized in-adjacency.

    Entry (i, j) is 1/sqrt((d_i+1)(d_j+1)) for j in in_neighbors(i) and for j == i,
    with d the in-degree. A self-loop already in the data is not doubled.
    """
    if "gcn" not in g._cache:
        nbr, recv = g.in_edge_arrays()
        loops = np.arange(g.num_nodes)
        keep = nbr != recv
        rows = np.concatenate([recv[keep], loops])
        cols = np.concatenate([nbr[keep], loops])
        deg = np.bincount(recv[keep], minlength=g.num_nodes) + 1.0
        w = 1.0 / np.sqrt(deg[rows] * deg[cols])
        m = sp.csr_matrix((w, (rows, cols)), shape=(g.num_nodes, g.num_nodes))
        m.sort_indices()
        g._cache["gcn"] = m
    return g._cache["gcn"]


class GcnConv(Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True):
        self.W = _param(d_in, d_out, "W")
        self.b = _param(1, d_out, "b") if bias else None

    def forward(self, g: DirectedGraph, x: Tensor) -> Tensor:
        if x.shape[1] != self.W.shape[0]:
            raise ValueError(f"GcnConv expects {self.W.shape[0]} input columns, got {x.shape}")
        out = ad.spmm(gcn_matrix(g), ad.matmul(x, self.W))
        return ad.add_bias(out, self.b) if self.b is not None else out


class GatConv(Module):
    """Single graph-attention layer over one edge direction.

    For each receiver i and neighbor j the score is
    LeakyReLU(a_src . (x_j W) + a_dst . (x_i W)) per head, normalized by a softmax
    over i's neighborhood. Heads are concatenated. Receivers with no neighbors
    output zero rows. With ``frozen_uniform`` the attention is replaced by a plain
    neighborhood mean.
    """

    def __init__(self, d_in: int, d_out: int, heads: int = 1, direction: Direction = Direction.FROM_IN):
        if d_out % heads:
            raise ValueError(f"output width {d_out} is not divisible by {heads} heads")
        self.heads = heads
        self.direction = Direction(direction)
        self.frozen_uniform = False
        self.W = _param(d_in, d_out, "W")
        self.a_src = _param(1, d_out, "a_src")
        self.a_dst = _param(1, d_out, "a_dst")

    def attention(self, g: DirectedGraph, xw: Tensor) -> tuple[Tensor, np.ndarray, np.ndarray]:
        nbr, recv = _receiver_edges(g, self.direction)
        s_src = ad.head_dot(xw, self.a_src, self.heads)
        s_dst = ad.head_dot(xw, self.a_dst, self.heads)
        scores = ad.leaky_relu(ad.add(ad.gather_rows(s_src, nbr), ad.gather_rows(s_dst, recv)))
        return ad.segment_softmax(scores, recv, g.num_nodes), nbr, recv

    def forward(self, g: DirectedGraph, x: Tensor) -> Tensor:
        if x.shape[1] != self.W.shape[0]:
            raise ValueError(f"GatConv expects {self.W.shape[0]} input columns, got {x.shape}")
        xw = ad.matmul(x, self.W)
        if self.frozen_uniform:
            return ad.spmm(mean_matrix(g, self.direction), xw)
        alpha, nbr, recv = self.attention(g, xw)
        return ad.attend(alpha, xw, nbr, recv, g.num_nodes, self.heads)


class DirGatConv(Module):
    """Separate attention over in- and out-neighbors, mixed by two linear maps."""

    def __init__(self, d_in: int, d_out: int, heads: int = 1):
        self.conv_in = GatConv(d_in, d_out, heads, Direction.FROM_IN)
        self.conv_out = GatConv(d_in, d_out, heads, Direction.FROM_OUT)
        self.W_comb_in = _param(d_out, d_out, "W_comb_in")
        self.W_comb_out = _param(d_out, d_out, "W_comb_out")

    @property
    def frozen_uniform(self) -> bool:
        return self.conv_in.frozen_uniform and self.conv_out.frozen_uniform

    @frozen_uniform.setter
    def frozen_uniform(self, flag: bool) -> None:
        self.conv_in.frozen_uniform = flag
        self.conv_out.frozen_uniform = flag

    def tie(self) -> None:
        """Share the in-direction weights with the out-direction conv."""
        self.conv_out.W = self.conv_in.W
        self.conv_out.a_src = self.conv_in.a_src
        self.conv_out.a_dst = self.conv_in.a_dst

    def named_parameters(self, prefix: str = ""):
        seen = set()
        for name, p in super().named_parameters(prefix):
            if id(p) not in seen:
                seen.add(id(p))
                yield name, p

    def forward(self, g: DirectedGraph, x: Tensor) -> Tensor:
        m_in = self.conv_in.forward(g, x)
        m_out = self.conv_out.forward(g, x)
        return ad.add(ad.matmul(m_in, self.W_comb_in), ad.matmul(m_out, self.W_comb_out))


SIGMAS = {"relu": ad.relu, "sigmoid": ad.sigmoid, "identity": ad.identity}


class PolyBlock(Module):
    """One gated layer: x_next = (1-b) * (sigma(x W_h) * x') + b * x', x' = Conv(x) + x W_l."""

    def __init__(self, hidden: int, conv: Module, sigma: str = "relu"):
        if sigma not in SIGMAS:
            raise ValueError(f"unknown sigma {sigma!r}; choose from {sorted(SIGMAS)}")
        self.sigma = sigma
        self.W_h = _param(hidden, hidden, "W_h")
        self.W_l = _param(hidden, hidden, "W_l")
        self.beta_raw = _param(1, 1, "beta_raw")
        self.conv = conv

    def beta(self) -> Tensor:
        return ad.sigmoid(self.beta_raw)

    def forward(self, g: DirectedGraph, x: Tensor) -> Tensor:
        h = SIGMAS[self.sigma](ad.matmul(x, self.W_h))
        xp = ad.add(self.conv.forward(g, x), ad.matmul(x, self.W_l))
        beta = self.beta()
        one_minus = ad.sub(ad.constant(1.0), beta)
        return ad.add(ad.scale_by(ad.mul(h, xp), one_minus), ad.scale_by(xp, beta))
