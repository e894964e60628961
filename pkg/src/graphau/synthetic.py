"""Synthetic interaction generators used by tests, benchmarks and the CLI."""

from __future__ import annotations

import numpy as np

from .dataset import RawInteraction


def _zipf_weights(n: int, exponent: float, rng: np.random.Generator) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** exponent
    rng.shuffle(w)
    return w


def _sample_unique(draw, n_target: int, max_rounds: int = 1000) -> np.ndarray:
    """Call ``draw(n)`` for (user, item) arrays until ``n_target`` distinct pairs exist."""
    seen: dict[tuple[int, int], None] = {}
    for _ in range(max_rounds):
        need = n_target - len(seen)
        if need <= 0:
            break
        users, items = draw(max(need, 64))
        for pair in zip(users.tolist(), items.tolist()):
            seen.setdefault(pair, None)
            if len(seen) == n_target:
                break
    return np.array(list(seen), dtype=np.int64).reshape(-1, 2)


def to_raw(pairs: np.ndarray) -> list[RawInteraction]:
    return [RawInteraction(f"u{u}", f"i{i}") for u, i in pairs.tolist()]


def _assign_topics(n_users, n_items, n_topics, rng):
    user_topic = np.arange(n_users) % n_topics
    item_topic = np.arange(n_items) % n_topics
    rng.shuffle(user_topic)
    rng.shuffle(item_topic)
    return user_topic, item_topic


def two_community(
    n_users: int = 2000,
    n_items: int = 2000,
    n_interactions: int = 20000,
    topics_per_community: int = 10,
    p_topic: float = 0.6,
    p_community: float = 0.3,
    popularity_exponent: float = 0.8,
    activity_exponent: float = 0.5,
    seed: int = 0,
) -> np.ndarray:
    """Two disjoint user/item communities, each split into topics.

    An interaction picks an item from the user's topic with probability
    ``p_topic``, from the rest of the user's community with ``p_community``
    and uniformly at random otherwise; items are drawn in proportion to a
    Zipf popularity and users in proportion to a Zipf activity.
    Returns (n, 2) distinct (user, item) index pairs.
    """
    rng = np.random.default_rng(seed)
    n_topics = 2 * topics_per_community
    user_topic, item_topic = _assign_topics(n_users, n_items, n_topics, rng)
    user_comm = user_topic // topics_per_community
    item_comm = item_topic // topics_per_community

    pop = _zipf_weights(n_items, popularity_exponent, rng)
    act = _zipf_weights(n_users, activity_exponent, rng)
    act /= act.sum()

    def pool(mask):
        idx = np.flatnonzero(mask)
        p = pop[idx] / pop[idx].sum()
        return idx, np.cumsum(p)

    topic_pool = [pool(item_topic == t) for t in range(n_topics)]
    comm_pool = [pool(item_comm == c) for c in range(2)]
    all_pool = pool(np.ones(n_items, dtype=bool))

    def pick(pool_, r):
        idx, cdf = pool_
        return idx[np.minimum(np.searchsorted(cdf, r, side="right"), len(idx) - 1)]

    def draw(n):
        users = rng.choice(n_users, size=n, p=act)
        kind = rng.random(n)
        r = rng.random(n)
        items = np.empty(n, dtype=np.int64)
        for j in range(n):
            u = users[j]
            if kind[j] < p_topic:
                items[j] = pick(topic_pool[user_topic[u]], r[j])
            elif kind[j] < p_topic + p_community:
                items[j] = pick(comm_pool[user_comm[u]], r[j])
            else:
                items[j] = pick(all_pool, r[j])
        return users, items

    return _sample_unique(draw, n_interactions)


def community_labels(n_users: int, n_items: int, topics_per_community: int = 10, seed: int = 0):
    """Community of every user and item as generated by :func:`two_community` with the same seed."""
    rng = np.random.default_rng(seed)
    user_topic, item_topic = _assign_topics(n_users, n_items, 2 * topics_per_community, rng)
    return user_topic // topics_per_community, item_topic // topics_per_community


def power_law_bipartite(
    n_users: int = 2500,
    n_items: int = 2500,
    n_edges: int = 5000,
    user_exponent: float = 0.5,
    item_exponent: float = 0.8,
    seed: int = 0,
) -> np.ndarray:
    """Chung-Lu style bipartite graph with Zipf-distributed expected degrees."""
    rng = np.random.default_rng(seed)
    wu = _zipf_weights(n_users, user_exponent, rng)
    wi = _zipf_weights(n_items, item_exponent, rng)
    wu /= wu.sum()
    wi /= wi.sum()

    def draw(n):
        return rng.choice(n_users, size=n, p=wu), rng.choice(n_items, size=n, p=wi)

    return _sample_unique(draw, n_edges)
