"""Empirical polynomial degree of a network along a line in feature space.

With attention frozen to neighborhood means and an identity gate nonlinearity,
every supported network is a polynomial in its input features. Restricting the
input to ``x + t * v`` gives a univariate polynomial f(t); its degree is the
smallest k whose (k+1)-th finite difference on a unit-spaced grid vanishes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import DirectedGraph
from .layers import Module
from .models import GcnNetwork, ModelSpec, PolyNetwork, build_model


class InvalidHarness(ValueError):
    pass


@dataclass
class DegreeMeasurement:
    degree: int
    relative_differences: list[float]  # entry m is max|Δ^m f| / max|f| for m = 0..max_degree+1

    def bound_holds(self, bound: int) -> bool:
        return self.degree <= bound


def _check_harness(model: Module) -> None:
    if isinstance(model, PolyNetwork):
        if not all(blk.conv.frozen_uniform for blk in model.blocks):
            raise InvalidHarness("attention is not frozen; degree measurement would be invalid")
        if model.spec.sigma != "identity":
            raise InvalidHarness(f"gate nonlinearity must be identity, got {model.spec.sigma!r}")
    elif not isinstance(model, GcnNetwork):
        raise InvalidHarness(f"no degree harness for {type(model).__name__}")
    elif model.spec.layers != 1:
        raise InvalidHarness("the GCN harness measures a single layer")


def polynomial_degree(
    model: Module,
    g: DirectedGraph,
    x: np.ndarray,
    direction: np.ndarray,
    node: int = 0,
    column: int = 0,
    max_degree: int = 8,
    tol: float = 1e-6,
) -> DegreeMeasurement:
    _check_harness(model)
    npts = max_degree + 2
    ts = np.arange(npts, dtype=np.float64) - (npts - 1) / 2.0
    f = np.array([model.forward(g, x + t * direction).values[node, column] for t in ts])
    scale = max(np.max(np.abs(f)), np.finfo(float).tiny)
    rel = []
    d = f
    for _ in range(npts):
        rel.append(float(np.max(np.abs(d)) / scale))
        d = np.diff(d)
    for k in range(max_degree + 1):
        if rel[k + 1] < tol:
            return DegreeMeasurement(k, rel)
    return DegreeMeasurement(max_degree + 1, rel)


def harness_model(kind: str, layers: int, in_dim: int, hidden: int, out_dim: int, rng) -> Module:
    """A network configured for degree measurement with generic random weights."""
    if kind == "gcn":
        spec = ModelSpec("gcn", in_dim, out_dim, hidden=hidden, layers=1, dropout=0.0)
    else:
        spec = ModelSpec(kind, in_dim, out_dim, hidden=hidden, layers=layers, dropout=0.0, sigma="identity")
    model = build_model(spec, rng)
    if isinstance(model, PolyNetwork):
        model.set_frozen_attention(True)
        for blk in model.blocks:
            # move off beta = 0.5 so the gate is generic
            blk.beta_raw.values[...] = rng.uniform(-1.0, 1.0)
    return model
