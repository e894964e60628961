"""Row-sparse Adam for embedding tables."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import EmbeddingModel


class NonFiniteGradient(FloatingPointError):
    def __init__(self, table: str, row: int):
        super().__init__(f"non-finite gradient in {table} table at row {row}")
        self.table = table
        self.row = row


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_model(cls, model: EmbeddingModel, **kwargs) -> "AdamState":
        state = cls(**kwargs)
        state.m = [np.zeros_like(model.user_emb0), np.zeros_like(model.item_emb0)]
        state.v = [np.zeros_like(model.user_emb0), np.zeros_like(model.item_emb0)]
        return state


def adam_step(model: EmbeddingModel, grads, state: AdamState) -> EmbeddingModel:
    """One in-place Adam update on rows whose gradient is not identically zero.

    The step counter is global. L2 weight decay is folded into the gradient
    of touched rows only; untouched rows keep their parameters and moments.
    """
    tables = (model.user_emb0, model.item_emb0)
    if len(grads) != 2:
        raise ValueError("expected (user_grad, item_grad)")
    for name, g, p in zip(("user", "item"), grads, tables):
        if g.shape != p.shape:
            raise ValueError(f"{name} gradient shape {g.shape} != parameter shape {p.shape}")
        bad = ~np.isfinite(g).all(axis=1)
        if bad.any():
            raise NonFiniteGradient(name, int(np.flatnonzero(bad)[0]))

    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for k, (g, p) in enumerate(zip(grads, tables)):
        rows = np.flatnonzero(np.any(g != 0.0, axis=1))
        if len(rows) == 0:
            continue
        gr = g[rows]
        if state.weight_decay:
            gr = gr + state.weight_decay * p[rows]
        m = state.m[k]
        v = state.v[k]
        m[rows] = state.beta1 * m[rows] + (1.0 - state.beta1) * gr
        v[rows] = state.beta2 * v[rows] + (1.0 - state.beta2) * gr * gr
        m_hat = m[rows] / bc1
        v_hat = v[rows] / bc2
        p[rows] -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return model
