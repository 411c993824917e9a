"""Node classifiers: the gated polynomial network and the GCN / GAT baselines."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import DirectedGraph, add_self_loops
from .layers import (
    SIGMAS, DirGatConv, Direction, GatConv, GcnConv, Module, PolyBlock, _param,
)

MODEL_KINDS = ("gcn", "gat", "poly", "dir-poly")
CHECKPOINT_FORMAT = "dirpoly-checkpoint/1"


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    in_dim: int
    out_dim: int
    hidden: int = 64
    layers: int = 3
    heads: int = 1
    dropout: float = 0.2
    sigma: str = "relu"
    direction: str = "in"

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model {self.kind!r}; choose from {', '.join(MODEL_KINDS)}")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.sigma not in SIGMAS:
            raise ValueError(f"unknown sigma {self.sigma!r}")
        Direction(self.direction)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class PolyNetwork(Module):
    """Input projection, L gated blocks whose outputs are summed, linear decoder."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        h = spec.hidden
        self.W_in = _param(spec.in_dim, h, "W_in")
        self.blocks: list[PolyBlock] = []
        for _ in range(spec.layers):
            if spec.kind == "dir-poly":
                conv = DirGatConv(h, h, spec.heads)
            else:
                conv = GatConv(h, h, spec.heads, Direction(spec.direction))
            self.blocks.append(PolyBlock(h, conv, spec.sigma))
        self.W_out = _param(h, spec.out_dim, "W_out")
        self.b_out = _param(1, spec.out_dim, "b_out")

    def set_frozen_attention(self, flag: bool) -> None:
        for blk in self.blocks:
            blk.conv.frozen_uniform = flag

    def layer_outputs(self, g: DirectedGraph, x, train: bool = False, rng=None) -> list[Tensor]:
        cur = ad.matmul(_as_tensor(x), self.W_in)
        outs = []
        for blk in self.blocks:
            cur = ad.dropout(blk.forward(g, cur), self.spec.dropout, train, rng)
            outs.append(cur)
        return outs

    def forward(self, g: DirectedGraph, x, train: bool = False, rng=None) -> Tensor:
        outs = self.layer_outputs(g, x, train, rng)
        total = outs[0]
        for o in outs[1:]:
            total = ad.add(total, o)
        return ad.add_bias(ad.matmul(total, self.W_out), self.b_out)


class GcnNetwork(Module):
    """Stack of GCN layers with ReLU between them; the last layer emits logits."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        dims = [spec.in_dim] + [spec.hidden] * (spec.layers - 1) + [spec.out_dim]
        self.convs = [GcnConv(a, b) for a, b in zip(dims[:-1], dims[1:])]

    def forward(self, g: DirectedGraph, x, train: bool = False, rng=None) -> Tensor:
        cur = _as_tensor(x)
        for i, conv in enumerate(self.convs):
            cur = conv.forward(g, cur)
            if i < len(self.convs) - 1:
                cur = ad.dropout(ad.relu(cur), self.spec.dropout, train, rng)
        return cur


class GatNetwork(Module):
    """GAT layers on the self-loop augmented graph followed by a linear decoder."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        dims = [spec.in_dim] + [spec.hidden] * spec.layers
        self.convs = [
            GatConv(a, b, spec.heads, Direction(spec.direction)) for a, b in zip(dims[:-1], dims[1:])
        ]
        self.W_out = _param(spec.hidden, spec.out_dim, "W_out")
        self.b_out = _param(1, spec.out_dim, "b_out")

    def forward(self, g: DirectedGraph, x, train: bool = False, rng=None) -> Tensor:
        if "self_loops" not in g._cache:
            g._cache["self_loops"] = add_self_loops(g)
        gl = g._cache["self_loops"]
        cur = _as_tensor(x)
        for conv in self.convs:
            cur = ad.dropout(ad.relu(conv.forward(gl, cur)), self.spec.dropout, train, rng)
        return ad.add_bias(ad.matmul(cur, self.W_out), self.b_out)


def build_model(spec: ModelSpec, rng: Optional[np.random.Generator] = None) -> Module:
    if spec.kind in ("poly", "dir-poly"):
        model = PolyNetwork(spec)
    elif spec.kind == "gcn":
        model = GcnNetwork(spec)
    else:
        model = GatNetwork(spec)
    if rng is not None:
        model.init_parameters(rng)
    return model


# ----------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: Module, path) -> None:
    """Write ``<path>`` (JSON manifest) and ``<path minus .json>.bin`` (float64 LE)."""
    path = Path(path)
    params = list(model.named_parameters())
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "architecture": asdict(model.spec),
        "parameters": [{"name": n, "shape": list(p.shape)} for n, p in params],
        "binary": path.with_suffix(".bin").name,
    }
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    blob = b"".join(np.ascontiguousarray(p.values, dtype="<f8").tobytes() for _, p in params)
    path.with_suffix(".bin").write_bytes(blob)


def load_checkpoint(path) -> Module:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")
    model = build_model(ModelSpec(**manifest["architecture"]))
    params = list(model.named_parameters())
    declared = [(e["name"], tuple(e["shape"])) for e in manifest["parameters"]]
    actual = [(n, p.shape) for n, p in params]
    if declared != actual:
        raise CheckpointError("checkpoint parameter layout does not match its architecture")
    raw = np.frombuffer((path.parent / manifest["binary"]).read_bytes(), dtype="<f8")
    expected = sum(p.values.size for _, p in params)
    if raw.size != expected:
        raise CheckpointError(f"checkpoint holds {raw.size} values, architecture needs {expected}")
    pos = 0
    for _, p in params:
        k = p.values.size
        p.values[...] = raw[pos:pos + k].reshape(p.shape)
        pos += k
    return model
