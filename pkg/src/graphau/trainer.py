"""Epoch loop with validation early stopping; GraphAU and MF-BPR objectives."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .dataset import InteractionDataset
from .evaluator import evaluate
from .graph import BipartiteGraph, build_graph
from .loss import Batch, LossConfig, loss_and_grad
from .model import EmbeddingModel, init_model
from .optimizer import AdamState, adam_step

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs_max: int = 200
    batch_size: int = 1024
    early_stop_patience: int = 10
    eval_every: int = 1
    seed: int = 0
    objective: str = "graphau"
    d: int = 32
    n_layers: int = 0
    alpha: float = 1.0
    gamma: float = 0.5
    uniformity_order: int = 0
    uniformity_metric: str = "sq"
    lr: float = 0.01
    weight_decay: float = 0.0
    init_scale: float = 0.1
    k: int = 20

    def __post_init__(self):
        if self.objective not in ("graphau", "bpr"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.batch_size < 1 or self.eval_every < 1 or self.epochs_max < 0:
            raise ValueError("batch_size and eval_every must be >= 1, epochs_max >= 0")

    def loss_config(self) -> LossConfig:
        return LossConfig(
            alpha=self.alpha,
            gamma=self.gamma,
            n_layers=self.n_layers,
            uniformity_order=self.uniformity_order,
            uniformity_metric=self.uniformity_metric,
        )


@dataclass
class EpochRecord:
    epoch: int
    loss: dict
    valid: dict | None
    seconds: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    best_valid_ndcg: float | None = None
    stopped_early: bool = False

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)


def bpr_loss_and_grad(model: EmbeddingModel, edges: np.ndarray, negatives: np.ndarray):
    """Mean -log sigmoid(s_ui - s_uj) over (u, i, j) triples, with its gradient."""
    u, i = edges[:, 0], edges[:, 1]
    eu, ei, ej = model.user_emb0[u], model.item_emb0[i], model.item_emb0[negatives]
    x = np.sum(eu * (ei - ej), axis=1)
    n = len(x)
    # -log sigmoid(x) = logaddexp(0, -x)
    loss = float(np.logaddexp(0.0, -x).sum() / n)
    coef = (-0.5 * (1.0 - np.tanh(0.5 * x)) / n)[:, None]  # d/dx of the mean = -sigmoid(-x)/n
    g_users = np.zeros_like(model.user_emb0)
    g_items = np.zeros_like(model.item_emb0)
    np.add.at(g_users, u, coef * (ei - ej))
    np.add.at(g_items, i, coef * eu)
    np.add.at(g_items, negatives, -coef * eu)
    return loss, g_users, g_items


def bpr_step(model: EmbeddingModel, batch: Batch, state: AdamState, rng: np.random.Generator) -> float:
    negatives = rng.integers(0, model.n_items, size=len(batch.edges))
    loss, gu, gi = bpr_loss_and_grad(model, batch.edges, negatives)
    adam_step(model, (gu, gi), state)
    return loss


def graphau_step(model, graph, batch, cfg: LossConfig, state: AdamState):
    report, gu, gi = loss_and_grad(model, graph, batch, cfg)
    if not math.isfinite(report.total):
        raise TrainingError(f"non-finite loss: {report.to_json()}")
    adam_step(model, (gu, gi), state)
    return report


def train_epoch(model, graph, train_edges, config: TrainConfig, state, rng, loss_cfg=None) -> dict:
    """One shuffled pass over ``train_edges``; returns batch-size-weighted mean loss fields."""
    perm = rng.permutation(len(train_edges))
    edges = train_edges[perm]
    totals: dict[str, np.ndarray | float] = {}
    seen = 0
    for start in range(0, len(edges), config.batch_size):
        batch = Batch(edges[start:start + config.batch_size])
        n = len(batch.edges)
        if config.objective == "bpr":
            fields = {"total": bpr_step(model, batch, state, rng)}
            if not math.isfinite(fields["total"]):
                raise TrainingError(f"non-finite BPR loss at batch offset {start}")
        else:
            r = graphau_step(model, graph, batch, loss_cfg, state)
            fields = {
                "total": r.total,
                "align_per_layer": np.asarray(r.align_per_layer),
                "uniform_user": r.uniform_user,
                "uniform_item": r.uniform_item,
            }
        for key, val in fields.items():
            totals[key] = totals.get(key, 0.0) + n * val
        seen += n
    return {
        k: (v / seen).tolist() if isinstance(v, np.ndarray) else v / seen for k, v in totals.items()
    }


def train(
    dataset: InteractionDataset,
    config: TrainConfig,
    graph: BipartiteGraph | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[EmbeddingModel, TrainLog]:
    """Train and return the parameters of the best validation-NDCG epoch.

    Without validation interactions, the final parameters are returned.
    """
    graph = build_graph(dataset) if graph is None else graph
    n_layers = config.n_layers if config.objective == "graphau" else 0
    model = init_model(
        dataset.n_users, dataset.n_items, config.d, n_layers, config.seed, config.init_scale
    )
    trainlog = TrainLog()
    if config.epochs_max == 0 or len(dataset.train_edges) == 0:
        return model, trainlog

    loss_cfg = config.loss_config() if config.objective == "graphau" else None
    state = AdamState.for_model(model, lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    can_validate = len(dataset.valid_edges) > 0
    best = model.copy()
    best_ndcg = -math.inf
    stale = 0

    for epoch in range(1, config.epochs_max + 1):
        t0 = time.perf_counter()
        loss = train_epoch(model, graph, dataset.train_edges, config, state, rng, loss_cfg)
        seconds = time.perf_counter() - t0
        valid = None
        if can_validate and epoch % config.eval_every == 0:
            metrics = evaluate(model, dataset, "valid", config.k)
            valid = metrics.to_dict()
            if metrics.ndcg_at_k > best_ndcg:
                best_ndcg = metrics.ndcg_at_k
                best = model.copy()
                trainlog.best_epoch = epoch
                stale = 0
            else:
                stale += 1
        rec = EpochRecord(epoch, loss, valid, max(seconds, 1e-9))
        trainlog.records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        log.info("epoch %d loss %.5f valid %s (%.2fs)", epoch, loss["total"],
                 None if valid is None else round(valid["ndcg_at_k"], 5), seconds)
        if can_validate and stale >= config.early_stop_patience:
            trainlog.stopped_early = True
            break

    if not can_validate or trainlog.best_epoch is None:
        return model, trainlog
    trainlog.best_valid_ndcg = best_ndcg
    return best, trainlog
