"""Command-line entry point: preprocess, train, eval, bench, grid.

Every command writes into ``--out-dir`` using fixed file names::

    config.json      resolved configuration (defaults < --config file < flags)
    splits/          split manifest (see graphau.dataset)
    trainlog.jsonl   one record per epoch
    metrics.json     validation/test metrics
    checkpoint.bin   best-validation embeddings (see graphau.model)
    bench.csv        scalability benchmark rows
    grid.csv         one row per grid configuration, plus runs/<name>/

Failures print a single JSON line ``{"error": <category>, "message": ...}``
to stderr. Exit codes: 2 config, 3 data, 4 runtime.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import itertools
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import __version__
from .bench import bench_scalability
from .dataset import (
    DatasetError,
    InteractionDataset,
    kcore_filter,
    load_interactions,
    load_splits,
    save_splits,
    split_dataset,
)
from .evaluator import EvaluationError, evaluate, format_table
from .graph import build_graph, graph_from_edges
from .model import CheckpointError, load_checkpoint, save_checkpoint
from .optimizer import NonFiniteGradient
from .synthetic import power_law_bipartite
from .trainer import TrainConfig, TrainingError, train

log = logging.getLogger("graphau")

EXIT_CODES = {"config": 2, "data": 3, "runtime": 4}

LR_GRID = (0.1, 0.05, 0.01, 0.005)
WEIGHT_DECAY_GRID = (0.0, 1e-2, 1e-4, 1e-6, 1e-8)

DEFAULTS = {
    "data": None,
    "splits": None,
    "format": "tsv",
    "has_header": False,
    "kcore": 0,
    "ratios": "0.6,0.2,0.2",
    "per_user_split": False,
    "out_dir": "out",
    "config": None,
    # training
    "epochs_max": 200,
    "batch_size": 1024,
    "early_stop_patience": 10,
    "eval_every": 1,
    "seed": 0,
    "objective": "graphau",
    "d": 32,
    "layers": 2,
    "alpha": 1.0,
    "gamma": 0.5,
    "uniformity_order": 0,
    "uniformity_metric": "sq",
    "lr": 0.01,
    "weight_decay": 0.0,
    "init_scale": 0.1,
    "k": 20,
    # eval
    "checkpoint": None,
    "split": "test",
    # bench
    "L_max": 3,
    "trials": 3,
    "synthetic_users": 2500,
    "synthetic_items": 2500,
    "synthetic_edges": 5000,
    "max_frontier": 20_000_000,
}

TRAIN_KEYS = {
    "epochs_max": "epochs_max",
    "batch_size": "batch_size",
    "early_stop_patience": "early_stop_patience",
    "eval_every": "eval_every",
    "seed": "seed",
    "objective": "objective",
    "d": "d",
    "layers": "n_layers",
    "alpha": "alpha",
    "gamma": "gamma",
    "uniformity_order": "uniformity_order",
    "uniformity_metric": "uniformity_metric",
    "lr": "lr",
    "weight_decay": "weight_decay",
    "init_scale": "init_scale",
    "k": "k",
}
GRID_KEYS = ("alpha", "gamma", "layers", "lr", "weight_decay")


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("config", message)


def parse_range(text) -> list[float]:
    """``"0:2:0.5"`` -> [0, 0.5, 1, 1.5, 2]; ``"0.1,0.3"`` -> [0.1, 0.3]; ``0.2`` -> [0.2]."""
    if isinstance(text, (int, float)):
        return [float(text)]
    if isinstance(text, list):
        return [float(x) for x in text]
    text = str(text).strip()
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            if step <= 0:
                raise ValueError
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + j * step, 10) for j in range(max(n, 0))]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise CliError("config", f"cannot parse value list {text!r}") from None


def _on_grid(value: float, lo: float, hi: float, step: float) -> bool:
    return lo - 1e-9 <= value <= hi + 1e-9 and abs(value / step - round(value / step)) < 1e-6


def warn_off_grid(cfg: dict) -> list[str]:
    """Warnings for values outside the usual tuning grids; never fatal."""
    msgs = []
    checks = [
        ("lr", lambda v: any(math.isclose(v, g) for g in LR_GRID), LR_GRID),
        ("weight_decay", lambda v: any(math.isclose(v, g, abs_tol=1e-12) for g in WEIGHT_DECAY_GRID), WEIGHT_DECAY_GRID),
        ("layers", lambda v: 1 <= v <= 4, "1..4"),
        ("gamma", lambda v: _on_grid(v, 0.0, 1.0, 0.1), "0.0..1.0 step 0.1"),
        ("alpha", lambda v: _on_grid(v, 0.0, 2.0, 0.1), "0.0..2.0 step 0.1"),
    ]
    for key, ok, grid in checks:
        for v in parse_range(cfg[key]) if key in GRID_KEYS else [cfg[key]]:
            if not ok(v):
                msgs.append(f"{key}={v} is outside the tuning grid {grid}")
    for m in msgs:
        log.warning(m)
    return msgs


def _add_data_args(p, splits=True):
    p.add_argument("--data", help="raw interaction file: user<sep>item[<sep>ignored...]")
    if splits:
        p.add_argument("--splits", help="existing split manifest directory")
    p.add_argument("--format", choices=["tsv", "csv"])
    p.add_argument("--has-header", action="store_true", default=argparse.SUPPRESS)
    p.add_argument("--kcore", type=int, help="iterative k-core filter before splitting (0 = off)")
    p.add_argument("--ratios", help="train,valid,test fractions (default 0.6,0.2,0.2)")
    p.add_argument("--per-user-split", action="store_true", default=argparse.SUPPRESS)


def _add_train_args(p, grid=False):
    num = str if grid else float
    p.add_argument("--epochs-max", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--early-stop-patience", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--objective", choices=["graphau", "bpr"])
    p.add_argument("--d", type=int, help="embedding width (default 32)")
    p.add_argument("--layers", type=str if grid else int, help="aggregation layers L")
    p.add_argument("--alpha", type=num, help="layer weight factor" + (" (list or a:b:step)" if grid else ""))
    p.add_argument("--gamma", type=num, help="uniformity weight" + (" (list or a:b:step)" if grid else ""))
    p.add_argument("--uniformity-order", type=int)
    p.add_argument("--uniformity-metric", choices=["sq", "l2"])
    p.add_argument("--lr", type=num)
    p.add_argument("--weight-decay", type=num)
    p.add_argument("--init-scale", type=float)
    p.add_argument("--k", type=int, help="ranking cutoff (default 20)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="graphau", description=__doc__.splitlines()[0], argument_default=argparse.SUPPRESS)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--out-dir", help="output directory")
    common.add_argument("--config", help="JSON file of option overrides")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = sub.add_parser("preprocess", parents=[common], argument_default=argparse.SUPPRESS,
                       help="map IDs and write a split manifest")
    _add_data_args(p, splits=False)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("train", parents=[common], argument_default=argparse.SUPPRESS,
                       help="train embeddings and evaluate the best checkpoint")
    _add_data_args(p)
    _add_train_args(p)

    p = sub.add_parser("eval", parents=[common], argument_default=argparse.SUPPRESS,
                       help="evaluate a checkpoint on a split manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--splits")
    p.add_argument("--split", choices=["valid", "test"])
    p.add_argument("--k", type=int)

    p = sub.add_parser("bench", parents=[common], argument_default=argparse.SUPPRESS,
                       help="epoch time vs. number of high-order pairs")
    _add_data_args(p)
    p.add_argument("--L-max", dest="L_max", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--synthetic-users", type=int)
    p.add_argument("--synthetic-items", type=int)
    p.add_argument("--synthetic-edges", type=int)
    p.add_argument("--max-frontier", type=int)

    p = sub.add_parser("grid", parents=[common], argument_default=argparse.SUPPRESS,
                       help="train one model per combination of alpha/gamma/layers/lr/weight-decay")
    _add_data_args(p)
    _add_train_args(p, grid=True)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    if flags.get("config"):
        path = Path(flags["config"])
        if not path.is_file():
            raise CliError("config", f"config file not found: {path}")
        try:
            file_cfg = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise CliError("config", f"config file {path} is not valid JSON: {e}") from None
        file_cfg.pop("command", None)
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise CliError("config", f"unknown keys in config file: {sorted(unknown)}")
        cfg.update(file_cfg)
    cfg.update(flags)
    cfg["command"] = args.command
    return cfg


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _snapshot(out: Path, cfg: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg)


def _ratios(cfg) -> tuple[float, float, float]:
    try:
        r = tuple(float(x) for x in str(cfg["ratios"]).split(","))
    except ValueError:
        raise CliError("config", f"bad --ratios {cfg['ratios']!r}") from None
    if len(r) != 3:
        raise CliError("config", "--ratios needs three comma-separated fractions")
    return r


def load_dataset(cfg: dict, out: Path | None = None) -> InteractionDataset:
    if cfg.get("splits"):
        if not Path(cfg["splits"]).is_dir():
            raise CliError("config", f"split manifest directory not found: {cfg['splits']}")
        ds = load_splits(cfg["splits"])
    elif cfg.get("data"):
        path = Path(cfg["data"])
        if not path.is_file():
            raise CliError("config", f"dataset file not found: {path}")
        rows = load_interactions(path, cfg["format"], cfg["has_header"])
        if cfg["kcore"]:
            rows = kcore_filter(rows, int(cfg["kcore"]))
        ds = split_dataset(rows, _ratios(cfg), cfg["seed"], per_user=cfg["per_user_split"])
    else:
        raise CliError("config", "a dataset is required: pass --data or --splits")
    if out is not None:
        save_splits(ds, out / "splits")
    return ds


def train_config(cfg: dict) -> TrainConfig:
    kwargs = {dst: cfg[src] for src, dst in TRAIN_KEYS.items()}
    for key in ("alpha", "gamma", "lr", "weight_decay", "init_scale"):
        kwargs[key] = float(kwargs[key])
    kwargs["n_layers"] = int(kwargs["n_layers"])
    try:
        return TrainConfig(**kwargs)
    except ValueError as e:
        raise CliError("config", str(e)) from None


def _train_and_report(ds: InteractionDataset, tcfg: TrainConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trainlog.jsonl", "w") as fh:
        model, trainlog = train(ds, tcfg, on_epoch=lambda rec: fh.write(rec.to_json() + "\n"))
    save_checkpoint(model, out / "checkpoint.bin", ds.vocab_hash())
    metrics = {"best_epoch": trainlog.best_epoch, "epochs_run": len(trainlog.records)}
    for split in ("valid", "test"):
        try:
            metrics[split] = evaluate(model, ds, split, tcfg.k).to_dict()
        except EvaluationError:
            metrics[split] = None
    metrics["masking"] = {"valid": ["train"], "test": ["train", "valid"]}
    _write_json(out / "metrics.json", metrics)
    return metrics


def cmd_preprocess(cfg, out):
    ds = load_dataset(cfg, out)
    print(f"{ds.n_users} users, {ds.n_items} items; "
          f"train/valid/test = {len(ds.train_edges)}/{len(ds.valid_edges)}/{len(ds.test_edges)}")


def cmd_train(cfg, out):
    warn_off_grid(cfg)
    tcfg = train_config(cfg)
    ds = load_dataset(cfg, out)
    metrics = _train_and_report(ds, tcfg, out)
    print(_metrics_table(metrics))


def _metrics_table(metrics: dict) -> str:
    from .evaluator import RankingMetrics

    rows = {}
    for split in ("valid", "test"):
        m = metrics.get(split)
        if m:
            m = dict(m)
            m["masked_splits"] = tuple(m["masked_splits"])
            rows[split] = RankingMetrics(**m)
    return format_table(rows)


def cmd_eval(cfg, out):
    if not cfg.get("checkpoint") or not Path(cfg["checkpoint"]).is_file():
        raise CliError("config", f"checkpoint not found: {cfg.get('checkpoint')}")
    if not cfg.get("splits"):
        raise CliError("config", "--splits is required for eval")
    ds = load_dataset({**cfg, "data": None})
    model = load_checkpoint(cfg["checkpoint"], vocab_hash=ds.vocab_hash())
    m = evaluate(model, ds, cfg["split"], cfg["k"])
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "metrics.json", {cfg["split"]: m.to_dict()})
    print(format_table({cfg["split"]: m}))


def cmd_bench(cfg, out):
    if cfg.get("data") or cfg.get("splits"):
        graph = build_graph(load_dataset(cfg))
    else:
        edges = power_law_bipartite(
            cfg["synthetic_users"], cfg["synthetic_items"], cfg["synthetic_edges"], seed=cfg["seed"]
        )
        graph = graph_from_edges(edges, cfg["synthetic_users"], cfg["synthetic_items"])
    report = bench_scalability(
        graph,
        L_max=cfg["L_max"],
        trials=cfg["trials"],
        d=cfg["d"],
        batch_size=cfg["batch_size"],
        gamma=float(cfg["gamma"]),
        alpha=float(cfg["alpha"]),
        max_frontier=cfg["max_frontier"],
        seed=cfg["seed"],
    )
    report.write_csv(out / "bench.csv")
    print(report.table())


def _fmt(v) -> str:
    return f"{v:g}"


def cmd_grid(cfg, out):
    warn_off_grid(cfg)
    ds = load_dataset(cfg, out)
    axes = {key: parse_range(cfg[key]) for key in GRID_KEYS}
    fields = ["name", *GRID_KEYS, "best_epoch", "valid_ndcg", "test_recall", "test_hitratio", "test_ndcg"]
    rows = []
    for combo in itertools.product(*axes.values()):
        point = dict(zip(GRID_KEYS, combo))
        name = "_".join(f"{k}{_fmt(v)}" for k, v in point.items())
        run_cfg = {**cfg, **point, "layers": int(point["layers"])}
        tcfg = train_config(run_cfg)
        run_dir = out / "runs" / name
        _snapshot(run_dir, {**run_cfg, "command": "train"})
        metrics = _train_and_report(ds, tcfg, run_dir)
        test = metrics["test"] or {}
        rows.append({
            "name": name, **point,
            "best_epoch": metrics["best_epoch"],
            "valid_ndcg": (metrics["valid"] or {}).get("ndcg_at_k"),
            "test_recall": test.get("recall_at_k"),
            "test_hitratio": test.get("hitratio_at_k"),
            "test_ndcg": test.get("ndcg_at_k"),
        })
        log.info("grid %s: %s", name, rows[-1])
    with open(out / "grid.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    print(f"{len(rows)} runs written to {out / 'grid.csv'}")


COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "grid": cmd_grid,
}


@contextlib.contextmanager
def _thread_cap():
    threads = os.environ.get("GRAPHAU_THREADS")
    if not threads:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=int(threads)):
        yield


def run(argv=None) -> int:
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as e:  # --help / --version
            return int(e.code or 0)
        logging.basicConfig(
            level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        cfg = resolve_config(args)
        out = Path(cfg["out_dir"])
        if cfg.get("data") and not Path(cfg["data"]).is_file():
            raise CliError("config", f"dataset file not found: {cfg['data']}")
        _snapshot(out, cfg)
        with _thread_cap():
            COMMANDS[args.command](cfg, out)
        return 0
    except CliError as e:
        err = (e.category, str(e))
    except (FileNotFoundError, IsADirectoryError) as e:
        err = ("config", str(e))
    except (DatasetError, CheckpointError, UnicodeDecodeError) as e:
        err = ("data", str(e))
    except (TrainingError, NonFiniteGradient, FloatingPointError) as e:
        err = ("runtime", str(e))
    print(json.dumps({"error": err[0], "message": err[1]}), file=sys.stderr)
    return EXIT_CODES[err[0]]


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
