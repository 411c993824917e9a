"""Command-line entry point: ``dirpoly <command> ...``.

Data goes to stdout, errors to stderr as a single ``error: <kind>: <message>``
line with a nonzero exit status.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import Tensor
from .config import ConfigError, RunConfig, describe, load_config, parse_config
from .datagen import GenSpec, GenSpecError, generate
from .expressivity import harness_model, polynomial_degree
from .gradcheck import check_network, random_digraph
from .graph import DatasetError, load_dataset, save_dataset
from .homophily import homophily_report, report_csv
from .models import CheckpointError, build_model, load_checkpoint, save_checkpoint
from .training import DivergenceError, metric_name, restore, run_protocol, task_metric

GRADCHECK_TOL = 1e-4
POLYCHECK_TOL = 1e-6


class CommandError(RuntimeError):
    pass


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else parse_config("")
    if getattr(args, "seed_override", None) is not None:
        cfg = cfg.with_seeds([args.seed_override])
    return cfg


def cmd_dataset_gen(args) -> int:
    spec = GenSpec.from_json(args.spec)
    ds = generate(spec)
    save_dataset(ds, args.out)
    print(f"wrote {args.out}: {ds.num_nodes} nodes, {ds.graph.num_edges} edges, {len(ds.splits)} splits")
    return 0


def cmd_dataset_inspect(args) -> int:
    ds = load_dataset(args.data)
    print(f"# nodes: {ds.num_nodes}")
    print(f"# edges: {ds.graph.num_edges}")
    print(f"# feature_dim: {ds.feature_dim}")
    print(f"# num_classes: {ds.num_classes}")
    print(f"# task: {ds.task.value}")
    print(f"# splits: {len(ds.splits)}")
    print("# nodes whose message-matrix row is empty are excluded from each average")
    sys.stdout.write(report_csv(homophily_report(ds)))
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out or cfg["out"])
    if not cfg["data"]:
        raise ConfigError("config key 'data' is required for train")
    data = Path(cfg["data"]).resolve()
    cfg = RunConfig({**cfg.values, "data": str(data), "out": str(out.resolve())})
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.txt").write_text(cfg.render(), encoding="utf-8")

    handler = logging.FileHandler(out / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("dirpoly")
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    try:
        ds = load_dataset(data)
        tc = cfg.train_config()
        root.info("training %s on %s with seeds %s", tc.model, data, list(tc.seeds))
        report = run_protocol(ds, tc, cfg["dataset_name"] or data.name, parallel=args.parallel_seeds)
        ckdir = out / "checkpoints"
        ckdir.mkdir(exist_ok=True)
        spec = tc.model_spec(ds)
        for rec in report.records:
            save_checkpoint(restore(build_model(spec), rec.state), ckdir / f"seed_{rec.seed}.json")
            root.info("seed %d: val %.6f test %.6f (epoch %d)", rec.seed, rec.best_val, rec.test, rec.best_epoch)
        (out / "report.json").write_text(report.to_json(), encoding="utf-8")
        (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
        root.info("done: %s", report.formatted())
    finally:
        root.removeHandler(handler)
        handler.close()
    print(f"{report.model},{report.dataset},{report.metric},{report.formatted()}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    spec = model.spec
    if spec.in_dim != ds.feature_dim:
        raise CheckpointError(f"checkpoint expects {spec.in_dim} features, dataset has {ds.feature_dim}")
    want = 1 if ds.task.value == "binary-rocauc" else ds.num_classes
    if spec.out_dim != want:
        raise CheckpointError(f"checkpoint emits {spec.out_dim} outputs, dataset task needs {want}")
    if not 0 <= args.split < len(ds.splits):
        raise DatasetError(f"split {args.split} not in dataset (has {len(ds.splits)})")
    logits = model.forward(ds.graph, Tensor(ds.features)).values
    value = task_metric(ds, logits, ds.splits[args.split].test)
    print(f"{metric_name(ds)},{value!r}")
    return 0


def polycheck_table(cfg: RunConfig) -> list[dict]:
    seed = cfg["seeds"][0]
    rng = np.random.default_rng(seed)
    n, d, hidden = cfg["polycheck_nodes"], cfg["polycheck_features"], cfg["polycheck_hidden"]
    g = random_digraph(n, 3 * n, rng)
    x = rng.normal(size=(n, d))
    v = rng.normal(size=(n, d))
    rows = []
    for kind, layers in (("gcn", 1), ("poly", 1), ("poly", 2), ("dir-poly", 1), ("dir-poly", 2)):
        model = harness_model(kind, layers, d, hidden, 2, rng)
        m = polynomial_degree(model, g, x, v, tol=POLYCHECK_TOL)
        bound = 1 if kind == "gcn" else 2 ** layers
        rows.append({"model": kind, "layers": layers, "degree": m.degree, "bound": bound})
    return rows


def cmd_polycheck(args) -> int:
    rows = polycheck_table(_config(args))
    print("model,layers,measured_degree,bound")
    for r in rows:
        print(f"{r['model']},{r['layers']},{r['degree']},{r['bound']}")
    bad = [r for r in rows if r["degree"] > r["bound"] or (r["model"] == "gcn" and r["degree"] != 1)]
    if bad:
        raise CommandError(f"degree bound violated for {bad[0]['model']} L={bad[0]['layers']}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    errors = check_network(
        cfg["model"], num_nodes=cfg["gradcheck_nodes"], hidden=cfg["gradcheck_hidden"],
        layers=cfg["gradcheck_layers"], heads=cfg["heads"], sigma=cfg["sigma"], seed=cfg["seeds"][0],
    )
    print("parameter,relative_error")
    for name, err in errors.items():
        print(f"{name},{err:.3e}")
    worst = max(errors.values())
    print(f"max_relative_error,{worst:.3e}")
    if worst >= GRADCHECK_TOL:
        raise CommandError(f"max relative gradient error {worst:.3e} exceeds {GRADCHECK_TOL:g}")
    return 0


def cmd_defaults(args) -> int:
    print(describe())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dirpoly", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"dirpoly {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="generate or inspect dataset containers")
    dsub = ds.add_subparsers(dest="dataset_command", required=True)
    gen = dsub.add_parser("gen", help="generate a synthetic dataset from a JSON spec")
    gen.add_argument("--spec", required=True)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_dataset_gen)
    ins = dsub.add_parser("inspect", help="print manifest summary and homophily CSV")
    ins.add_argument("data")
    ins.set_defaults(func=cmd_dataset_inspect)

    tr = sub.add_parser("train", help="multi-seed training run")
    tr.add_argument("--config", required=True)
    tr.add_argument("--out", help="override the config's output directory")
    tr.add_argument("--seed-override", type=int)
    tr.add_argument("--parallel-seeds", action="store_true")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a split's test nodes")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", type=int, default=0)
    ev.set_defaults(func=cmd_eval)

    for name, fn, text in (
        ("polycheck", cmd_polycheck, "measure polynomial degree of gcn / poly / dir-poly"),
        ("gradcheck", cmd_gradcheck, "finite-difference check of every parameter gradient"),
    ):
        c = sub.add_parser(name, help=text)
        c.add_argument("--config")
        c.add_argument("--seed-override", type=int)
        c.set_defaults(func=fn)

    de = sub.add_parser("defaults", help="print every config key with its default")
    de.set_defaults(func=cmd_defaults)
    return p


_EXPECTED = (ConfigError, DatasetError, GenSpecError, CheckpointError, CommandError,
             DivergenceError, FileNotFoundError, ValueError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _EXPECTED as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
