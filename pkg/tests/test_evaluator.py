import math

import numpy as np
import pytest

from graphau.dataset import InteractionDataset
from graphau.evaluator import EvaluationError, RankingMetrics, evaluate, format_table, top_k
from graphau.model import EmbeddingModel


def _dataset(n_users, n_items, train, valid, test):
    return InteractionDataset(n_users, n_items, train, valid, test)


def _model_from_scores(scores):
    """Embeddings whose dot products reproduce ``scores`` exactly (items one-hot)."""
    scores = np.asarray(scores, dtype=np.float64)
    return EmbeddingModel(scores.copy(), np.eye(scores.shape[1]), 0)


def brute_force(scores, truth, masked, k):
    """Independent reranking: sort (-score, item) tuples with python's sorted."""
    recs, hits, ndcgs = [], [], []
    for u, g in truth.items():
        if not g:
            continue
        ranked = sorted(
            (i for i in range(len(scores[u])) if i not in masked.get(u, set())),
            key=lambda i: (-scores[u][i], i),
        )[:k]
        h = [i for i in ranked if i in g]
        recs.append(len(h) / len(g))
        hits.append(1.0 if h else 0.0)
        dcg = sum(1 / math.log2(r + 2) for r, i in enumerate(ranked) if i in g)
        idcg = sum(1 / math.log2(r + 2) for r in range(min(k, len(g))))
        ndcgs.append(dcg / idcg)
    return np.mean(recs), np.mean(hits), np.mean(ndcgs), len(recs)


def test_relevant_at_rank_one():
    ds = _dataset(1, 3, [], [], [(0, 2)])
    m = evaluate(_model_from_scores([[0.1, 0.2, 0.9]]), ds, "test", k=2)
    assert (m.recall_at_k, m.hitratio_at_k, m.ndcg_at_k) == (1.0, 1.0, 1.0)


def test_relevant_at_rank_two():
    ds = _dataset(1, 3, [], [], [(0, 1)])
    m = evaluate(_model_from_scores([[0.1, 0.5, 0.9]]), ds, "test", k=2)
    assert m.ndcg_at_k == pytest.approx(1 / math.log2(3), rel=1e-12)
    assert m.ndcg_at_k == pytest.approx(0.63093, abs=1e-5)


def test_half_recall():
    scores = [[9, 8, 7, 6, 1, 0, 0, 0]]
    ds = _dataset(1, 8, [], [], [(0, 0), (0, 2), (0, 4), (0, 5)])
    m = evaluate(_model_from_scores(scores), ds, "test", k=3)
    assert m.recall_at_k == 0.5 and m.hitratio_at_k == 1.0


def test_train_items_masked():
    ds = _dataset(1, 4, [(0, 3)], [], [(0, 1)])
    m = evaluate(_model_from_scores([[0.0, 0.5, 0.1, 9.0]]), ds, "test", k=1)
    assert m.recall_at_k == 1.0


def test_valid_masked_only_for_test():
    ds = _dataset(1, 3, [], [(0, 0)], [(0, 1)])
    model = _model_from_scores([[5.0, 1.0, 0.0]])
    test = evaluate(model, ds, "test", k=1)
    assert test.recall_at_k == 1.0 and test.masked_splits == ("train", "valid")
    valid = evaluate(model, ds, "valid", k=1)
    assert valid.recall_at_k == 1.0 and valid.masked_splits == ("train",)


def test_ties_break_by_index():
    assert top_k(np.array([1.0, 3.0, 3.0, 3.0, 0.0]), 2).tolist() == [1, 2]
    assert top_k(np.array([1.0, 3.0, 3.0, 3.0, 0.0]), 2, masked=np.array([1])).tolist() == [2, 3]


def test_top_k_never_returns_masked():
    s = np.zeros(4)
    assert top_k(s, 10, masked=np.array([0, 2])).tolist() == [1, 3]


def test_empty_split_errors():
    ds = _dataset(2, 2, [(0, 0)], [], [])
    with pytest.raises(EvaluationError):
        evaluate(_model_from_scores(np.zeros((2, 2))), ds, "test")


def random_instance(seed, n_users=30, n_items=60):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 6, size=(n_users, n_items)).astype(float)  # many ties
    perm = rng.permutation(n_users * n_items)[: n_users * 8]
    pairs = np.stack([perm // n_items, perm % n_items], 1)
    which = rng.integers(0, 3, len(pairs))
    ds = _dataset(n_users, n_items, pairs[which == 0], pairs[which == 1], pairs[which == 2])
    return scores, ds


def oracle_for(scores, ds, split, k):
    truth = {u: set() for u in range(ds.n_users)}
    for u, i in ds.split(split).tolist():
        truth[u].add(i)
    masked = {}
    for s in (("train",) if split == "valid" else ("train", "valid")):
        for u, i in ds.split(s).tolist():
            masked.setdefault(u, set()).add(i)
    return brute_force(scores.tolist(), truth, masked, k)


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("split", ["valid", "test"])
def test_matches_bruteforce_oracle(seed, split):
    scores, ds = random_instance(seed)
    for k in (1, 5, 20):
        m = evaluate(_model_from_scores(scores), ds, split, k)
        r, h, n, cnt = oracle_for(scores, ds, split, k)
        assert (m.recall_at_k, m.hitratio_at_k, m.n_users_evaluated) == (r, h, cnt)
        assert m.ndcg_at_k == pytest.approx(n, rel=1e-12)


def test_monotone_in_k_and_hr_ge_recall():
    scores, ds = random_instance(42)
    model = _model_from_scores(scores)
    m20, m40 = evaluate(model, ds, "test", 20), evaluate(model, ds, "test", 40)
    assert m40.recall_at_k >= m20.recall_at_k and m40.hitratio_at_k >= m20.hitratio_at_k
    assert m20.hitratio_at_k >= m20.recall_at_k


def test_deterministic_with_ties():
    scores, ds = random_instance(5)
    model = _model_from_scores(scores)
    assert evaluate(model, ds, "test").to_json() == evaluate(model, ds, "test").to_json()


def test_format_table_layout():
    t = format_table({"test": RankingMetrics(0.0979, 0.2003, 0.0539, 20, 10)})
    head, row = t.splitlines()
    assert head.split() == ["R@20", "HR@20", "N@20"]
    assert row.split() == ["test", "0.0979", "0.2003", "0.0539"]
