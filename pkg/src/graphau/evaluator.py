"""Full-ranking top-k evaluation: Recall@k, HitRatio@k, NDCG@k."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from .dataset import InteractionDataset
from .model import EmbeddingModel


class EvaluationError(ValueError):
    pass


@dataclass
class RankingMetrics:
    recall_at_k: float
    hitratio_at_k: float
    ndcg_at_k: float
    k: int
    n_users_evaluated: int
    masked_splits: tuple = ("train",)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["masked_splits"] = list(self.masked_splits)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def format_table(rows: dict[str, RankingMetrics]) -> str:
    """Fixed-width table with R@k, HR@k, N@k columns, one row per named result."""
    if not rows:
        return ""
    k = next(iter(rows.values())).k
    width = max(8, max(len(n) for n in rows))
    head = f"{'':<{width}}  {'R@' + str(k):>8}  {'HR@' + str(k):>8}  {'N@' + str(k):>8}"
    lines = [head]
    for name, m in rows.items():
        lines.append(
            f"{name:<{width}}  {m.recall_at_k:>8.4f}  {m.hitratio_at_k:>8.4f}  {m.ndcg_at_k:>8.4f}"
        )
    return "\n".join(lines)


def top_k(scores: np.ndarray, k: int, masked: np.ndarray | None = None) -> np.ndarray:
    """Indices of the k best-scoring items, ties broken by ascending item index.

    Masked items never appear; fewer than k indices come back if too few
    items remain.
    """
    s = np.asarray(scores, dtype=np.float64).copy()
    if masked is not None and len(masked):
        s[masked] = -np.inf
    n_avail = int(np.count_nonzero(s > -np.inf))
    k = min(k, n_avail)
    if k == 0:
        return np.empty(0, dtype=np.int64)
    kth = np.partition(s, len(s) - k)[len(s) - k]
    cand = np.flatnonzero(s >= kth)
    order = np.lexsort((cand, -s[cand]))
    return cand[order[:k]]


def _csr(edges: np.ndarray, n_users: int, n_items: int) -> sp.csr_matrix:
    m = sp.csr_matrix(
        (np.ones(len(edges), dtype=np.int8), (edges[:, 0], edges[:, 1])), shape=(n_users, n_items)
    )
    m.sort_indices()
    return m


def _discounts(k: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, k + 2))


def _top_k_block(scores: np.ndarray, k: int) -> np.ndarray:
    """Row-wise :func:`top_k` on a pre-masked score block, padded with -1."""
    b, n = scores.shape
    out = np.full((b, k), -1, dtype=np.int64)
    if k >= n:
        slow = range(b)
    else:
        kth = np.partition(scores, n - k, axis=1)[:, n - k]
        n_cand = np.count_nonzero(scores >= kth[:, None], axis=1)
        idx = np.argpartition(scores, n - k, axis=1)[:, n - k:]
        vals = np.take_along_axis(scores, idx, axis=1)
        order = np.lexsort((idx, -vals), axis=-1)
        out[:] = np.take_along_axis(idx, order, axis=1)
        # ties straddling the cut, or masked items reaching the top-k, take the exact path
        slow = np.flatnonzero((n_cand != k) | (kth == -np.inf))
    for r in slow:
        top = top_k(scores[r], k)
        out[r] = -1
        out[r, : len(top)] = top
    return out


def block_metrics(ranked: np.ndarray, truth_rows: np.ndarray, n_truth: np.ndarray, k: int):
    """Per-user recall, hit and NDCG from padded rankings and dense boolean ground truth."""
    valid = ranked >= 0
    hits = valid & np.take_along_axis(truth_rows, np.where(valid, ranked, 0), axis=1)
    n_hit = hits.sum(axis=1)
    disc = _discounts(k)
    dcg = hits @ disc
    idcg = np.cumsum(disc)[np.minimum(k, n_truth) - 1]
    return n_hit / n_truth, (n_hit > 0).astype(np.float64), dcg / idcg


def _iter_ranked(score_fn, users, mask, k, chunk):
    for start in range(0, len(users), chunk):
        block = users[start:start + chunk]
        scores = np.array(score_fn(block), dtype=np.float64)
        if mask is not None:
            m = mask[block].tocoo()
            scores[m.row, m.col] = -np.inf
        yield start, block, _top_k_block(scores, k)


def evaluate_scores(score_fn, n_users, n_items, truth_edges, mask_edges, k=20, chunk=512):
    """Metrics given a callable mapping a user-index array to a score matrix."""
    truth = _csr(truth_edges, n_users, n_items)
    mask = _csr(mask_edges, n_users, n_items) if len(mask_edges) else None
    n_truth_all = np.diff(truth.indptr)
    users = np.flatnonzero(n_truth_all > 0)
    if len(users) == 0:
        raise EvaluationError("no users with ground-truth items in the evaluated split")
    rec = np.zeros(len(users))
    hit = np.zeros(len(users))
    ndcg = np.zeros(len(users))
    for start, block, ranked in _iter_ranked(score_fn, users, mask, k, chunk):
        sl = slice(start, start + len(block))
        truth_rows = truth[block].toarray().astype(bool)
        rec[sl], hit[sl], ndcg[sl] = block_metrics(ranked, truth_rows, n_truth_all[block], k)
    return float(rec.mean()), float(hit.mean()), float(ndcg.mean()), len(users)


def _mask_edges(dataset: InteractionDataset, split: str):
    masked_splits = ("train",) if split == "valid" else ("train", "valid")
    return masked_splits, np.concatenate([dataset.split(s) for s in masked_splits])


def ranked_lists(model: EmbeddingModel, dataset: InteractionDataset, split: str = "test", k: int = 20) -> dict[int, list[int]]:
    """Top-k item lists for every user with ground truth in ``split``, masked as in :func:`evaluate`."""
    _, mask_edges = _mask_edges(dataset, split)
    mask = _csr(mask_edges, dataset.n_users, dataset.n_items) if len(mask_edges) else None
    truth = _csr(dataset.split(split), dataset.n_users, dataset.n_items)
    users = np.flatnonzero(np.diff(truth.indptr) > 0)
    out = {}
    for _, block, ranked in _iter_ranked(model.scores, users, mask, k, 512):
        for u, row in zip(block.tolist(), ranked):
            out[u] = row[row >= 0].tolist()
    return out


def evaluate(model: EmbeddingModel, dataset: InteractionDataset, split: str = "test", k: int = 20) -> RankingMetrics:
    """Score every item by base-embedding dot product and rank against ``split``.

    Training interactions are always masked; validation interactions are
    masked too when evaluating the test split.
    """
    if split not in ("valid", "test"):
        raise ValueError("split must be 'valid' or 'test'")
    if (model.n_users, model.n_items) != (dataset.n_users, dataset.n_items):
        raise EvaluationError("model and dataset vocabularies differ in size")
    masked_splits, mask_edges = _mask_edges(dataset, split)
    r, h, n, count = evaluate_scores(
        model.scores, dataset.n_users, dataset.n_items, dataset.split(split), mask_edges, k
    )
    return RankingMetrics(r, h, n, k, count, masked_splits)
