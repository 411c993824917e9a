"""Central finite-difference checks of reverse-mode gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .graph import DirectedGraph, build_graph
from .layers import Module
from .models import ModelSpec, build_model


# Central differences at step 1e-5 carry roughly eps / step ~ 1e-11 of roundoff,
# so a gradient that is exactly zero (e.g. a score term cancelled by a softmax)
# cannot be judged relative to itself. Below this scale the error is absolute.
GRADIENT_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max|a - n| / max(max|a|, max|n|, GRADIENT_FLOOR) for one parameter."""
    denom = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), GRADIENT_FLOOR)
    return float(np.max(np.abs(analytic - numeric)) / denom)


def numeric_gradient(loss_fn: Callable[[], Tensor], param: Tensor, step: float = 1e-5) -> np.ndarray:
    grad = np.zeros(param.shape)
    flat = param.values.reshape(-1)
    out = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        up = loss_fn().item()
        flat[k] = orig - step
        down = loss_fn().item()
        flat[k] = orig
        out[k] = (up - down) / (2 * step)
    return grad


def check_module(model: Module, loss_fn: Callable[[], Tensor], step: float = 1e-5) -> dict[str, float]:
    """Relative error per named parameter of ``model``."""
    params = list(model.named_parameters())
    for _, p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    errors = {}
    for name, p in params:
        analytic = p.grad if p.grad is not None else np.zeros(p.shape)
        errors[name] = relative_error(analytic, numeric_gradient(loss_fn, p, step))
    return errors


def random_digraph(num_nodes: int, num_edges: int, rng: np.random.Generator) -> DirectedGraph:
    src = rng.integers(0, num_nodes, num_edges)
    dst = rng.integers(0, num_nodes, num_edges)
    return build_graph(num_nodes, np.stack([src, dst], 1))


def check_network(
    kind: str = "poly",
    num_nodes: int = 12,
    in_dim: int = 5,
    num_classes: int = 3,
    hidden: int = 8,
    layers: int = 2,
    heads: int = 1,
    sigma: str = "relu",
    seed: int = 0,
    step: float = 1e-5,
) -> dict[str, float]:
    """Gradient check of a randomly initialized network on a random digraph."""
    rng = np.random.default_rng(seed)
    g = random_digraph(num_nodes, 3 * num_nodes, rng)
    x = Tensor(rng.normal(size=(num_nodes, in_dim)))
    y = rng.integers(0, num_classes, num_nodes)
    mask = np.ones(num_nodes, dtype=bool)
    spec = ModelSpec(kind, in_dim, num_classes, hidden=hidden, layers=layers, heads=heads,
                     dropout=0.0, sigma=sigma)
    model = build_model(spec, rng)
    for _, p in model.named_parameters():
        # random rather than zero so gate and bias gradients are generic
        if np.all(p.values == 0):
            p.values[...] = rng.uniform(-0.5, 0.5, size=p.shape)
    return check_module(model, lambda: ad.cross_entropy_logits(model.forward(g, x), y, mask), step)
