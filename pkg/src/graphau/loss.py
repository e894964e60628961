"""Multi-hop alignment with layer-wise pooling plus uniformity, and its exact gradient.

Every vector entering alignment or uniformity is L2-normalized first. The
layer-l alignment of an edge (u, i) averages the user-to-item and
item-to-user terms::

    0.5 * (|n(u0) - n(i_l)|^2 + |n(i0) - n(u_l)|^2)

and layers are pooled with weights alpha**l (alpha**0 == 1).
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import BipartiteGraph
from .model import EmbeddingModel, LayerStack, forward

log = logging.getLogger(__name__)

ALPHA_RANGE = (0.0, 2.0)
GAMMA_RANGE = (0.0, 1.0)


@dataclass
class Batch:
    edges: np.ndarray
    users: np.ndarray = field(init=False)
    items: np.ndarray = field(init=False)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if len(self.edges) == 0:
            raise ValueError("empty batch")
        self.users = np.unique(self.edges[:, 0])
        self.items = np.unique(self.edges[:, 1])


@dataclass
class LossConfig:
    alpha: float = 1.0
    gamma: float = 0.5
    n_layers: int = 0
    uniformity_order: int = 0
    uniformity_metric: str = "sq"

    def __post_init__(self):
        if self.alpha < 0 or self.gamma < 0:
            raise ValueError("alpha and gamma must be non-negative")
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")
        if not 0 <= self.uniformity_order <= self.n_layers:
            raise ValueError("uniformity_order must lie in [0, n_layers]")
        if self.uniformity_metric not in ("sq", "l2"):
            raise ValueError("uniformity_metric must be 'sq' or 'l2'")
        if not ALPHA_RANGE[0] <= self.alpha <= ALPHA_RANGE[1]:
            warnings.warn(f"alpha={self.alpha} is outside the tuned range {ALPHA_RANGE}")
        if not GAMMA_RANGE[0] <= self.gamma <= GAMMA_RANGE[1]:
            warnings.warn(f"gamma={self.gamma} is outside the tuned range {GAMMA_RANGE}")

    def layer_weights(self) -> np.ndarray:
        return np.array([1.0] + [self.alpha**l for l in range(1, self.n_layers + 1)])


@dataclass
class LossReport:
    align_per_layer: list[float]
    uniform_user: float
    uniform_item: float
    total: float
    n_degenerate: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _normalize(x: np.ndarray):
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    ok = norms > 0
    return np.where(ok, x / np.where(ok, norms, 1.0), 0.0), norms, ok[..., 0]


def _normalize_backward(grad_hat: np.ndarray, x_hat: np.ndarray, norms: np.ndarray) -> np.ndarray:
    # d(x/|x|) = (I - x_hat x_hat^T) / |x|
    safe = np.where(norms > 0, norms, 1.0)
    proj = grad_hat - np.sum(grad_hat * x_hat, axis=-1, keepdims=True) * x_hat
    return np.where(norms > 0, proj / safe, 0.0)


def align_pair(x, y) -> float:
    """Squared distance between the L2-normalized copies of x and y, in [0, 4]."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        log.warning("align_pair: zero vector, contribution skipped")
        return 0.0
    diff = x / nx - y / ny
    return float(diff @ diff)


def _scatter_add(target: np.ndarray, rows: np.ndarray, vals: np.ndarray) -> None:
    """target[rows] += vals with repeated rows summed in a fixed (stable-sorted) order."""
    order = np.argsort(rows, kind="stable")
    sorted_rows = rows[order]
    uniq, starts = np.unique(sorted_rows, return_index=True)
    target[uniq] += np.add.reduceat(vals[order], starts, axis=0)


def _pair_terms(x: np.ndarray, y: np.ndarray):
    """Row-wise |n(x) - n(y)|^2 and the gradients wrt x and y."""
    xh, nx, okx = _normalize(x)
    yh, ny, oky = _normalize(y)
    ok = okx & oky
    diff = np.where(ok[:, None], xh - yh, 0.0)
    vals = np.sum(diff * diff, axis=1)
    gx = _normalize_backward(2.0 * diff, xh, nx)
    gy = _normalize_backward(-2.0 * diff, yh, ny)
    return vals, gx, gy, int(np.count_nonzero(~ok))


def _pairwise_sq(v: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", v, v)
    d = v @ v.T
    d *= -2.0
    d += sq[:, None]
    d += sq[None, :]
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def _uniformity_core(v: np.ndarray, metric: str = "sq"):
    """Value and gradient wrt v of log mean_{a,b} exp(-2 D_ab)."""
    m = len(v)
    d = _pairwise_sq(v)
    if metric == "l2":
        np.sqrt(d, out=d)
        with np.errstate(divide="ignore"):
            scale = np.where(d > 0, 0.5 / d, 0.0)
    # logits -2*D are <= 0 with zeros on the diagonal, so the plain
    # exp-sum below is already max-shifted and cannot overflow
    d *= -2.0
    kernel = np.exp(d, out=d)
    total = kernel.sum()
    value = float(np.log(total) - 2.0 * np.log(m))
    p = kernel
    p /= total
    if metric == "l2":
        p *= scale
    # d value / d v_a = -8 * sum_b p_ab (v_a - v_b), p symmetric
    grad = -8.0 * (p.sum(axis=1)[:, None] * v - p @ v)
    return value, grad


def uniformity(vectors, metric: str = "sq") -> float:
    """log of the mean Gaussian-kernel similarity over all ordered pairs (self-pairs included)."""
    v = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if len(v) == 0:
        raise ValueError("uniformity needs at least one vector")
    return _uniformity_core(v, metric)[0]


def _uniformity_on_rows(layer: np.ndarray, rows: np.ndarray, metric: str):
    """Uniformity of the normalized ``layer[rows]``; zero rows are excluded."""
    x = layer[rows]
    xh, norms, ok = _normalize(x)
    n_bad = int(np.count_nonzero(~ok))
    grad_x = np.zeros_like(x)
    if not ok.any():
        return 0.0, grad_x, n_bad
    value, g_hat = _uniformity_core(xh[ok], metric)
    grad_x[ok] = _normalize_backward(g_hat, xh[ok], norms[ok])
    return value, grad_x, n_bad


def _evaluate(stack: LayerStack, batch: Batch, cfg: LossConfig, want_grad: bool):
    L = cfg.n_layers
    if stack.n_layers < L:
        raise ValueError(f"stack has {stack.n_layers} layers, config needs {L}")
    U, I = stack.user_layers, stack.item_layers
    bu, bi = batch.edges[:, 0], batch.edges[:, 1]
    B = len(bu)
    weights = cfg.layer_weights()
    gU = [np.zeros_like(U[l]) for l in range(L + 1)] if want_grad else None
    gI = [np.zeros_like(I[l]) for l in range(L + 1)] if want_grad else None

    align = []
    n_bad = 0
    u0, i0 = U[0][bu], I[0][bi]
    vals, gx, gy, bad = _pair_terms(u0, i0)
    n_bad += bad
    align.append(float(vals.sum() / B))
    if want_grad:
        c = weights[0] / B
        _scatter_add(gU[0], bu, c * gx)
        _scatter_add(gI[0], bi, c * gy)

    for l in range(1, L + 1):
        v_ui, g_u0, g_il, bad1 = _pair_terms(u0, I[l][bi])
        v_iu, g_i0, g_ul, bad2 = _pair_terms(i0, U[l][bu])
        n_bad += bad1 + bad2
        align.append(float(0.5 * (v_ui.sum() + v_iu.sum()) / B))
        if want_grad and weights[l] != 0.0:
            c = 0.5 * weights[l] / B
            _scatter_add(gU[0], bu, c * g_u0)
            _scatter_add(gI[l], bi, c * g_il)
            _scatter_add(gI[0], bi, c * g_i0)
            _scatter_add(gU[l], bu, c * g_ul)

    k = cfg.uniformity_order
    unif_u, grad_u, bad_u = _uniformity_on_rows(U[k], batch.users, cfg.uniformity_metric)
    unif_i, grad_i, bad_i = _uniformity_on_rows(I[k], batch.items, cfg.uniformity_metric)
    n_bad += bad_u + bad_i
    if want_grad and cfg.gamma != 0.0:
        # rows of batch.users / batch.items are unique, plain fancy-index add is exact
        gU[k][batch.users] += 0.5 * cfg.gamma * grad_u
        gI[k][batch.items] += 0.5 * cfg.gamma * grad_i

    total = float(np.dot(weights, align) + 0.5 * cfg.gamma * (unif_u + unif_i))
    if n_bad:
        log.debug("skipped %d degenerate zero-vector terms", n_bad)
    report = LossReport(align, unif_u, unif_i, total, n_bad)
    return report, gU, gI


def alignment_losses(stack: LayerStack, batch: Batch, n_layers: int | None = None) -> list[float]:
    L = stack.n_layers if n_layers is None else n_layers
    cfg = LossConfig(alpha=1.0, gamma=0.0, n_layers=L)
    return _evaluate(stack, batch, cfg, want_grad=False)[0].align_per_layer


def total_loss(stack: LayerStack, batch: Batch, cfg: LossConfig) -> LossReport:
    return _evaluate(stack, batch, cfg, want_grad=False)[0]


def _propagate_back(gU, gI, graph: BipartiteGraph):
    """Pull layer-l cotangents back to layer 0 through the (self-adjoint) aggregator."""
    L = len(gU) - 1
    for l in range(L, 0, -1):
        # U_l = W I_{l-1}, I_l = W^T U_{l-1}
        gI[l - 1] = gI[l - 1] + graph.norm_adj_t @ gU[l]
        gU[l - 1] = gU[l - 1] + graph.norm_adj @ gI[l]
    return gU[0], gI[0]


def backward(stack: LayerStack, batch: Batch, cfg: LossConfig, graph: BipartiteGraph):
    """Exact gradients of ``total_loss`` wrt the base user and item tables."""
    _, gU, gI = _evaluate(stack, batch, cfg, want_grad=True)
    return _propagate_back(gU, gI, graph)


def loss_and_grad(model: EmbeddingModel, graph: BipartiteGraph, batch: Batch, cfg: LossConfig):
    stack = forward(model, graph, cfg.n_layers)
    report, gU, gI = _evaluate(stack, batch, cfg, want_grad=True)
    g_users, g_items = _propagate_back(gU, gI, graph)
    return report, g_users, g_items
