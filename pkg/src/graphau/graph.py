"""User-item bipartite graph with symmetric-normalized (light graph convolution) aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dataset import InteractionDataset


class FrontierCapExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class BipartiteGraph:
    n_users: int
    n_items: int
    edges: np.ndarray  # (|E|, 2), sorted by (user, item)
    norm_adj: sp.csr_matrix  # n_users x n_items, entries 1/sqrt(deg_u * deg_i)
    norm_adj_t: sp.csr_matrix  # n_items x n_users
    user_degree: np.ndarray
    item_degree: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def user_adj(self, u: int) -> tuple[np.ndarray, np.ndarray]:
        """Sorted neighbor items of user ``u`` and their edge weights."""
        lo, hi = self.norm_adj.indptr[u], self.norm_adj.indptr[u + 1]
        return self.norm_adj.indices[lo:hi], self.norm_adj.data[lo:hi]

    def item_adj(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.norm_adj_t.indptr[i], self.norm_adj_t.indptr[i + 1]
        return self.norm_adj_t.indices[lo:hi], self.norm_adj_t.data[lo:hi]

    def dense_adjacency(self) -> np.ndarray:
        """Full (n_users + n_items) square normalized adjacency, for small graphs only."""
        n = self.n_users + self.n_items
        out = np.zeros((n, n))
        w = self.norm_adj.toarray()
        out[: self.n_users, self.n_users:] = w
        out[self.n_users:, : self.n_users] = w.T
        return out


def graph_from_edges(edges, n_users: int, n_items: int) -> BipartiteGraph:
    edges = np.unique(np.asarray(edges, dtype=np.int64).reshape(-1, 2), axis=0)
    u, i = edges[:, 0], edges[:, 1]
    user_degree = np.bincount(u, minlength=n_users).astype(np.int64)
    item_degree = np.bincount(i, minlength=n_items).astype(np.int64)
    w = 1.0 / np.sqrt(user_degree[u].astype(np.float64) * item_degree[i])
    adj = sp.csr_matrix((w, (u, i)), shape=(n_users, n_items))
    adj.sort_indices()
    adj_t = adj.T.tocsr()
    adj_t.sort_indices()
    return BipartiteGraph(n_users, n_items, edges, adj, adj_t, user_degree, item_degree)


def build_graph(dataset: InteractionDataset) -> BipartiteGraph:
    """Graph over the training split only."""
    return graph_from_edges(dataset.train_edges, dataset.n_users, dataset.n_items)


def aggregate_users_from_items(graph: BipartiteGraph, item_vectors: np.ndarray) -> np.ndarray:
    item_vectors = np.asarray(item_vectors, dtype=np.float64)
    if item_vectors.ndim != 2 or item_vectors.shape[0] != graph.n_items:
        raise ValueError(
            f"expected item matrix with {graph.n_items} rows, got shape {item_vectors.shape}"
        )
    return graph.norm_adj @ item_vectors


def aggregate_items_from_users(graph: BipartiteGraph, user_vectors: np.ndarray) -> np.ndarray:
    user_vectors = np.asarray(user_vectors, dtype=np.float64)
    if user_vectors.ndim != 2 or user_vectors.shape[0] != graph.n_users:
        raise ValueError(
            f"expected user matrix with {graph.n_users} rows, got shape {user_vectors.shape}"
        )
    return graph.norm_adj_t @ user_vectors


def _bfs_levels(graph: BipartiteGraph, hops: int, max_frontier: int, block_size: int):
    """Level-synchronous BFS from every user, processed in blocks of sources.

    Yields ``(hop, sources, newly_reached_items)`` where ``newly_reached_items``
    is a boolean CSR matrix (len(sources) x n_items) of items first reached at
    distance ``2*hop - 1``.
    """
    pattern = graph.norm_adj.copy()
    pattern.data = np.ones_like(pattern.data, dtype=np.int64)
    pattern_t = pattern.T.tocsr()
    level_totals = np.zeros(hops + 1, dtype=np.int64)
    sources_all = np.flatnonzero(graph.user_degree > 0)

    for start in range(0, len(sources_all), block_size):
        sources = sources_all[start:start + block_size]
        b = len(sources)
        frontier_u = sp.csr_matrix(
            (np.ones(b, dtype=np.int64), (np.arange(b), sources)), shape=(b, graph.n_users)
        )
        seen_u = frontier_u.copy()
        seen_i = sp.csr_matrix((b, graph.n_items), dtype=np.int64)
        for hop in range(1, hops + 1):
            reach_i = (frontier_u @ pattern).astype(bool).astype(np.int64)
            new_i = reach_i - reach_i.multiply(seen_i)
            new_i.eliminate_zeros()
            level_totals[hop] += new_i.nnz
            if level_totals[hop] > max_frontier:
                raise FrontierCapExceeded(
                    f"BFS frontier at hop {hop} exceeds cap of {max_frontier} (source, node) entries"
                )
            yield hop, sources, new_i.astype(bool)
            if hop == hops:
                break
            seen_i = (seen_i + new_i).astype(bool).astype(np.int64)
            reach_u = (new_i @ pattern_t).astype(bool).astype(np.int64)
            new_u = reach_u - reach_u.multiply(seen_u)
            new_u.eliminate_zeros()
            if new_u.nnz > max_frontier:
                raise FrontierCapExceeded(
                    f"BFS user frontier before hop {hop + 1} exceeds cap of {max_frontier}"
                )
            seen_u = (seen_u + new_u).astype(bool).astype(np.int64)
            frontier_u = new_u


def khop_edge_count(
    graph: BipartiteGraph, hops: int, max_frontier: int = 50_000_000, block_size: int = 256
) -> list[int]:
    """Number of (user, item) pairs whose shortest path has exactly 2l-1 edges, for l = 1..hops."""
    if hops < 1:
        raise ValueError("hops must be >= 1")
    counts = [0] * hops
    for hop, _, new_i in _bfs_levels(graph, hops, max_frontier, block_size):
        counts[hop - 1] += int(new_i.nnz)
    return counts


def khop_pairs(
    graph: BipartiteGraph, hops: int, max_frontier: int = 50_000_000, block_size: int = 256
) -> np.ndarray:
    """All (user, item) pairs within shortest-path distance 2*hops-1, sorted by (user, item)."""
    if hops < 1:
        raise ValueError("hops must be >= 1")
    chunks = []
    for _, sources, new_i in _bfs_levels(graph, hops, max_frontier, block_size):
        coo = new_i.tocoo()
        chunks.append(np.stack([sources[coo.row], coo.col.astype(np.int64)], axis=1))
    if not chunks:
        return np.empty((0, 2), dtype=np.int64)
    pairs = np.concatenate(chunks)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order]
