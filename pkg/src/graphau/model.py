"""Embedding tables and the per-layer neighborhood stack."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import BipartiteGraph, aggregate_items_from_users, aggregate_users_from_items

CHECKPOINT_MAGIC = b"GRAPHAU\x00"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class EmbeddingModel:
    user_emb0: np.ndarray
    item_emb0: np.ndarray
    n_layers: int = 0

    def __post_init__(self):
        if self.user_emb0.ndim != 2 or self.item_emb0.ndim != 2:
            raise ValueError("embedding tables must be 2-d")
        if self.user_emb0.shape[1] != self.item_emb0.shape[1]:
            raise ValueError("user and item tables must share the embedding width")
        if self.dim < 1 or self.n_layers < 0:
            raise ValueError("need d >= 1 and L >= 0")

    @property
    def n_users(self) -> int:
        return self.user_emb0.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_emb0.shape[0]

    @property
    def dim(self) -> int:
        return self.user_emb0.shape[1]

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.user_emb0.copy(), self.item_emb0.copy(), self.n_layers)

    def scores(self, users=None) -> np.ndarray:
        """Dot-product scores of the base embeddings, shape (len(users), n_items)."""
        u = self.user_emb0 if users is None else self.user_emb0[users]
        return u @ self.item_emb0.T


@dataclass
class LayerStack:
    user_layers: list[np.ndarray]
    item_layers: list[np.ndarray]

    @property
    def n_layers(self) -> int:
        return len(self.user_layers) - 1


def init_model(n_users, n_items, d=32, n_layers=0, seed=0, init_scale=0.1) -> EmbeddingModel:
    if n_users < 1 or n_items < 1 or d < 1:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    users = rng.normal(0.0, 1.0, size=(n_users, d)) * init_scale
    items = rng.normal(0.0, 1.0, size=(n_items, d)) * init_scale
    return EmbeddingModel(users, items, n_layers)


def forward(model: EmbeddingModel, graph: BipartiteGraph, n_layers: int | None = None) -> LayerStack:
    """Layer l holds the pure l-hop aggregate; no residual mixing, no normalization."""
    if (graph.n_users, graph.n_items) != (model.n_users, model.n_items):
        raise ValueError(
            f"graph is {graph.n_users}x{graph.n_items} but model is {model.n_users}x{model.n_items}"
        )
    L = model.n_layers if n_layers is None else n_layers
    users, items = [model.user_emb0], [model.item_emb0]
    for _ in range(L):
        users.append(aggregate_users_from_items(graph, items[-1]))
        items.append(aggregate_items_from_users(graph, users[-2]))
    return LayerStack(users, items)


# Checkpoint layout (all integers little-endian):
#   8 bytes   magic b"GRAPHAU\0"
#   uint32    format version
#   uint32    header length H
#   H bytes   UTF-8 JSON header {n_users, n_items, d, L, vocab_hash, dtype}
#   n_users*d float64 user table, row-major, then n_items*d float64 item table


def save_checkpoint(model: EmbeddingModel, path, vocab_hash: str = "") -> None:
    header = json.dumps(
        {
            "n_users": model.n_users,
            "n_items": model.n_items,
            "d": model.dim,
            "L": model.n_layers,
            "vocab_hash": vocab_hash,
            "dtype": "<f8",
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(model.user_emb0, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.item_emb0, dtype="<f8").tobytes())


def load_checkpoint(path, vocab_hash: str | None = None) -> EmbeddingModel:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", raw, 8)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    if vocab_hash is not None and header["vocab_hash"] != vocab_hash:
        raise CheckpointError("checkpoint vocabulary does not match the dataset")
    nu, ni, d = header["n_users"], header["n_items"], header["d"]
    body = np.frombuffer(raw, dtype="<f8", offset=16 + hlen)
    if body.size != (nu + ni) * d:
        raise CheckpointError(f"{path}: truncated or oversized table data")
    users = body[: nu * d].reshape(nu, d).astype(np.float64)
    items = body[nu * d:].reshape(ni, d).astype(np.float64)
    return EmbeddingModel(users, items, header["L"])
