"""Flat ``key=value`` run configuration."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _seeds(text: str) -> tuple[int, ...]:
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..")
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(s) for s in text.split(",") if s.strip())


def _fmt_seeds(seeds) -> str:
    return ",".join(str(s) for s in seeds)


# key -> (default, parser, help)
KEYS: dict[str, tuple[object, Callable[[str], object], str]] = {
    "model": ("poly", str, "gcn | gat | poly | dir-poly"),
    "data": ("", str, "dataset container directory"),
    "dataset_name": ("", str, "name written into reports; defaults to the data directory name"),
    "out": ("runs/default", str, "output directory"),
    "learning_rate": (3e-3, float, "Adam step size"),
    "weight_decay": (0.0, float, "decoupled weight decay"),
    "max_epochs": (1000, int, "epoch cap per seed"),
    "patience": (100, int, "epochs without validation gain before stopping"),
    "seeds": ((0, 1, 2, 3, 4, 5, 6, 7, 8, 9), _seeds, "comma list or lo..hi range"),
    "hidden": (64, int, "hidden width"),
    "layers": (3, int, "number of gated blocks (or conv layers for baselines)"),
    "heads": (1, int, "attention heads"),
    "dropout": (0.2, float, "dropout rate on block outputs"),
    "sigma": ("relu", str, "gate nonlinearity: relu | sigmoid"),
    "direction": ("in", str, "neighborhood for single-direction attention: in | out"),
    "gradcheck_nodes": (12, int, "random digraph size for gradcheck"),
    "gradcheck_hidden": (8, int, "hidden width for gradcheck"),
    "gradcheck_layers": (2, int, "layers for gradcheck"),
    "polycheck_nodes": (10, int, "random digraph size for polycheck"),
    "polycheck_hidden": (8, int, "hidden width for polycheck"),
    "polycheck_features": (4, int, "input feature width for polycheck"),
}


@dataclass(frozen=True)
class RunConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            model=v["model"], learning_rate=v["learning_rate"], weight_decay=v["weight_decay"],
            max_epochs=v["max_epochs"], patience=v["patience"], seeds=v["seeds"], hidden=v["hidden"],
            layers=v["layers"], heads=v["heads"], dropout=v["dropout"], sigma=v["sigma"],
            direction=v["direction"],
        )

    def with_seeds(self, seeds) -> "RunConfig":
        return RunConfig({**self.values, "seeds": tuple(seeds)})

    def render(self) -> str:
        """Fully resolved config in the same format it is read from."""
        lines = []
        for key in KEYS:
            val = self.values[key]
            lines.append(f"{key}={_fmt_seeds(val) if key == 'seeds' else val}")
        return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    values = {k: d for k, (d, _, _) in KEYS.items()}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = KEYS[key][1](val)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {val!r} for {key}") from None
    cfg = RunConfig(values)
    try:
        cfg.train_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if values["model"] not in ("gcn", "gat", "poly", "dir-poly"):
        raise ConfigError(f"unknown model {values['model']!r}")
    if values["sigma"] not in ("relu", "sigmoid"):
        raise ConfigError(f"sigma must be relu or sigmoid, got {values['sigma']!r}")
    if values["direction"] not in ("in", "out"):
        raise ConfigError(f"direction must be in or out, got {values['direction']!r}")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"))


def describe() -> str:
    return "\n".join(f"{k}={_fmt_seeds(d) if k == 'seeds' else d}  # {h}" for k, (d, _, h) in KEYS.items())
