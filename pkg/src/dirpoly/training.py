"""Full-batch training with early stopping and the multi-seed protocol."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .graph import Dataset, Split, Task
from .layers import Module
from .metrics import accuracy, roc_auc
from .models import ModelSpec, build_model

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int, seed: int):
        super().__init__(f"non-finite training loss at epoch {epoch} (seed {seed})")
        self.epoch = epoch
        self.seed = seed


@dataclass(frozen=True)
class TrainConfig:
    model: str = "poly"
    learning_rate: float = 3e-3
    weight_decay: float = 0.0
    max_epochs: int = 1000
    patience: int = 100
    seeds: tuple[int, ...] = tuple(range(10))
    hidden: int = 64
    layers: int = 3
    heads: int = 1
    dropout: float = 0.2
    sigma: str = "relu"
    direction: str = "in"

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.patience > self.max_epochs:
            raise ValueError(f"patience {self.patience} exceeds max_epochs {self.max_epochs}")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def model_spec(self, ds: Dataset) -> ModelSpec:
        out_dim = 1 if ds.task is Task.BINARY_ROCAUC else ds.num_classes
        return ModelSpec(self.model, ds.feature_dim, out_dim, hidden=self.hidden, layers=self.layers,
                         heads=self.heads, dropout=self.dropout, sigma=self.sigma,
                         direction=self.direction)


# ----------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params: Sequence[np.ndarray], grads: Sequence[Optional[np.ndarray]], state: AdamState,
              lr: float, weight_decay: float = 0.0, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """In-place Adam update with bias correction and decoupled weight decay."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} does not match parameter {p.shape}")
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.state = AdamState.zeros([p.values for p in self.params])

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step([p.values for p in self.params], [p.grad for p in self.params],
                  self.state, self.lr, self.weight_decay)


# ----------------------------------------------------------------------------
# single run


@dataclass
class SeedRecord:
    seed: int
    split_id: int
    best_epoch: int
    epochs_run: int
    best_val: float
    test: float
    loss_curve: list[float]
    val_curve: list[float]
    state: list[np.ndarray] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        del d["state"]
        return d


def task_loss(ds: Dataset, logits: Tensor, mask) -> Tensor:
    if ds.task is Task.BINARY_ROCAUC:
        return ad.bce_logits(logits, ds.labels, mask)
    return ad.cross_entropy_logits(logits, ds.labels, mask)


def task_metric(ds: Dataset, logits: np.ndarray, mask) -> float:
    if ds.task is Task.BINARY_ROCAUC:
        return roc_auc(logits[:, 0], ds.labels, mask)
    return accuracy(logits, ds.labels, mask)


def metric_name(ds: Dataset) -> str:
    return "roc_auc" if ds.task is Task.BINARY_ROCAUC else "accuracy"


def train_one(ds: Dataset, split: Split | int, config: TrainConfig, seed: int) -> SeedRecord:
    split_id = split if isinstance(split, int) else -1
    if isinstance(split, int):
        split = ds.splits[split]
    rng = np.random.default_rng(seed)
    model = build_model(config.model_spec(ds), rng)
    params = model.parameters()
    opt = Adam(params, config.learning_rate, config.weight_decay)
    x = Tensor(ds.features)
    g = ds.graph

    best_val, best_test, best_epoch = -math.inf, math.nan, -1
    snapshot = [p.values.copy() for p in params]
    curve: list[float] = []
    val_curve: list[float] = []
    stale = 0
    epoch = 0
    for epoch in range(config.max_epochs):
        opt.zero_grad()
        with Tape() as tape:
            logits = model.forward(g, x, train=True, rng=rng)
            loss = task_loss(ds, logits, split.train)
        lv = loss.item()
        if not math.isfinite(lv):
            raise DivergenceError(epoch, seed)
        curve.append(lv)
        tape.backward(loss)
        opt.step()

        out = model.forward(g, x).values
        val = task_metric(ds, out, split.val)
        val_curve.append(val)
        if val > best_val:
            best_val, best_epoch, stale = val, epoch, 0
            best_test = task_metric(ds, out, split.test)
            snapshot = [p.values.copy() for p in params]
        else:
            stale += 1
        if stale >= config.patience:
            break
    log.debug("seed %d: best val %.4f at epoch %d", seed, best_val, best_epoch)
    return SeedRecord(seed, split_id, best_epoch, epoch + 1, best_val, best_test, curve, val_curve,
                      snapshot)


def restore(model: Module, state: Sequence[np.ndarray]) -> Module:
    for p, v in zip(model.parameters(), state):
        p.values[...] = v
    return model


# ----------------------------------------------------------------------------
# protocol


@dataclass
class TrainReport:
    model: str
    dataset: str
    metric: str
    records: list[SeedRecord]

    @property
    def scores(self) -> np.ndarray:
        return np.array([r.test for r in self.records])

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    @property
    def std(self) -> float:
        s = self.scores
        return float(np.std(s, ddof=1)) if len(s) > 1 else 0.0

    def formatted(self) -> str:
        """Percent-scaled ``mean ± std`` with two decimals."""
        return f"{100 * self.mean:.2f} ± {100 * self.std:.2f}"

    def to_json(self) -> str:
        body = {
            "model": self.model,
            "dataset": self.dataset,
            "metric": self.metric,
            "mean": self.mean,
            "std": self.std,
            "formatted": self.formatted(),
            "seeds": [r.to_dict() for r in self.records],
        }
        return json.dumps(body, indent=2, ensure_ascii=False) + "\n"

    def to_csv(self) -> str:
        seeds = " ".join(str(r.seed) for r in self.records)
        return (
            "model,dataset,metric,mean,std,seeds\n"
            f"{self.model},{self.dataset},{self.metric},{self.mean!r},{self.std!r},{seeds}\n"
        )


def _run_seed(args):
    ds, config, seed, k = args
    return train_one(ds, k, config, seed)


def run_protocol(ds: Dataset, config: TrainConfig, dataset_name: str = "",
                 parallel: bool = False) -> TrainReport:
    """Train once per seed, cycling through the dataset's splits, and aggregate."""
    if not ds.splits:
        raise ValueError("dataset has no splits")
    jobs = [(ds, config, seed, i % len(ds.splits)) for i, seed in enumerate(config.seeds)]
    if parallel and len(jobs) > 1:
        with ProcessPoolExecutor() as pool:
            records = list(pool.map(_run_seed, jobs))
    else:
        records = [_run_seed(j) for j in jobs]
    return TrainReport(config.model, dataset_name, metric_name(ds), records)
