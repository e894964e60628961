"""Interaction loading, ID mapping and train/valid/test splitting."""

from __future__ import annotations

import csv
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np


class DatasetError(ValueError):
    pass


class RawInteraction(NamedTuple):
    user_id: str
    item_id: str


@dataclass
class InteractionDataset:
    n_users: int
    n_items: int
    train_edges: np.ndarray  # (n, 2) int64
    valid_edges: np.ndarray
    test_edges: np.ndarray
    user_vocab: list[str] = field(default_factory=list)
    item_vocab: list[str] = field(default_factory=list)

    def __post_init__(self):
        for name in ("train_edges", "valid_edges", "test_edges"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1, 2)
            setattr(self, name, arr)

    @property
    def user_index(self) -> dict[str, int]:
        return {tok: i for i, tok in enumerate(self.user_vocab)}

    @property
    def item_index(self) -> dict[str, int]:
        return {tok: i for i, tok in enumerate(self.item_vocab)}

    def split(self, name: str) -> np.ndarray:
        if name not in ("train", "valid", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, f"{name}_edges")

    def validate(self) -> None:
        """Raise DatasetError if any structural invariant is broken."""
        seen: set[tuple[int, int]] = set()
        for name in ("train", "valid", "test"):
            edges = self.split(name)
            if len(edges):
                if edges[:, 0].min() < 0 or edges[:, 0].max() >= self.n_users:
                    raise DatasetError(f"{name}: user index out of range")
                if edges[:, 1].min() < 0 or edges[:, 1].max() >= self.n_items:
                    raise DatasetError(f"{name}: item index out of range")
            pairs = set(map(tuple, edges.tolist()))
            if len(pairs) != len(edges):
                raise DatasetError(f"{name}: duplicate (user, item) pairs")
            if seen & pairs:
                raise DatasetError(f"{name}: overlaps another split")
            seen |= pairs
        if self.user_vocab and len(self.user_vocab) != self.n_users:
            raise DatasetError("user vocabulary size does not match n_users")
        if self.item_vocab and len(self.item_vocab) != self.n_items:
            raise DatasetError("item vocabulary size does not match n_items")

    def vocab_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for tok in self.user_vocab:
            h.update(tok.encode("utf-8") + b"\x00")
        h.update(b"\x01")
        for tok in self.item_vocab:
            h.update(tok.encode("utf-8") + b"\x00")
        h.update(f"{self.n_users}:{self.n_items}".encode())
        return h.hexdigest()


def load_interactions(path, format: str = "tsv", has_header: bool = False) -> list[RawInteraction]:
    """Read ``user, item[, ignored...]`` rows, keeping the first occurrence of each pair."""
    if format not in ("tsv", "csv"):
        raise ValueError(f"unknown format {format!r}")
    delimiter = "\t" if format == "tsv" else ","
    seen: set[tuple[str, str]] = set()
    out: list[RawInteraction] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for lineno, row in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise DatasetError(f"line {lineno}: expected at least 2 columns, got {len(row)}")
            user, item = row[0].strip(), row[1].strip()
            if not user or not item:
                raise DatasetError(f"line {lineno}: empty user or item id")
            if (user, item) in seen:
                continue
            seen.add((user, item))
            out.append(RawInteraction(user, item))
    if not out:
        raise DatasetError("empty dataset")
    return out


def kcore_filter(interactions: Iterable[RawInteraction], k: int) -> list[RawInteraction]:
    """Iteratively drop users and items with fewer than ``k`` interactions."""
    kept = list(interactions)
    while True:
        ucount = Counter(r.user_id for r in kept)
        icount = Counter(r.item_id for r in kept)
        nxt = [r for r in kept if ucount[r.user_id] >= k and icount[r.item_id] >= k]
        if len(nxt) == len(kept):
            return nxt
        kept = nxt


def _build_vocab(tokens: Iterable[str]) -> list[str]:
    vocab: dict[str, None] = {}
    for t in tokens:
        vocab.setdefault(t, None)
    return list(vocab)


def split_dataset(
    interactions: list[RawInteraction],
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 0,
    per_user: bool = False,
) -> InteractionDataset:
    """Assign every interaction to one of train/valid/test.

    The default draws one uniform variate per interaction and buckets it by
    the cumulative ratios. With ``per_user=True`` each user's interactions
    are shuffled and cut at the rounded ratio boundaries instead.
    Vocabularies are built over all interactions in first-seen order.
    """
    if not interactions:
        raise DatasetError("empty dataset")
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise DatasetError(f"ratios must be three positive fractions, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError(f"ratios must sum to 1, got {sum(ratios)!r}")

    # collapse duplicates, first occurrence wins
    uniq = list(dict.fromkeys((r[0], r[1]) for r in interactions))
    user_vocab = _build_vocab(u for u, _ in uniq)
    item_vocab = _build_vocab(i for _, i in uniq)
    uidx = {t: n for n, t in enumerate(user_vocab)}
    iidx = {t: n for n, t in enumerate(item_vocab)}
    edges = np.array([(uidx[u], iidx[i]) for u, i in uniq], dtype=np.int64)

    rng = np.random.default_rng(seed)
    if per_user:
        assign = np.empty(len(edges), dtype=np.int64)
        rows = defaultdict(list)
        for n, u in enumerate(edges[:, 0].tolist()):
            rows[u].append(n)
        for u in sorted(rows):
            idx = np.array(rows[u])
            rng.shuffle(idx)
            n = len(idx)
            n_train = int(round(ratios[0] * n))
            n_valid = int(round(ratios[1] * n))
            assign[idx[:n_train]] = 0
            assign[idx[n_train:n_train + n_valid]] = 1
            assign[idx[n_train + n_valid:]] = 2
    else:
        draws = rng.random(len(edges))
        cuts = np.array([ratios[0], ratios[0] + ratios[1]])
        assign = np.searchsorted(cuts, draws, side="right")

    return InteractionDataset(
        n_users=len(user_vocab),
        n_items=len(item_vocab),
        train_edges=edges[assign == 0],
        valid_edges=edges[assign == 1],
        test_edges=edges[assign == 2],
        user_vocab=user_vocab,
        item_vocab=item_vocab,
    )


# Split manifest: a directory holding
#   users.tsv / items.tsv   "<index>\t<token>" one per line, index ascending
#   train.tsv / valid.tsv / test.tsv   "<user_index>\t<item_index>" one edge per line
MANIFEST_FILES = ("users.tsv", "items.tsv", "train.tsv", "valid.tsv", "test.tsv")


def save_splits(dataset: InteractionDataset, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, vocab in (("users.tsv", dataset.user_vocab), ("items.tsv", dataset.item_vocab)):
        with open(d / name, "w", encoding="utf-8", newline="\n") as fh:
            for n, tok in enumerate(vocab):
                fh.write(f"{n}\t{tok}\n")
    for split in ("train", "valid", "test"):
        with open(d / f"{split}.tsv", "w", encoding="utf-8", newline="\n") as fh:
            for u, i in dataset.split(split).tolist():
                fh.write(f"{u}\t{i}\n")
    return d


def load_splits(directory) -> InteractionDataset:
    d = Path(directory)
    missing = [f for f in MANIFEST_FILES if not (d / f).is_file()]
    if missing:
        raise FileNotFoundError(f"split manifest {d} is missing {', '.join(missing)}")

    def read_vocab(name):
        toks = []
        with open(d / name, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                idx, _, tok = line.rstrip("\n").partition("\t")
                if int(idx) != len(toks):
                    raise DatasetError(f"{name}:{lineno}: indices must be dense and ascending")
                toks.append(tok)
        return toks

    def read_edges(name):
        if os.path.getsize(d / name) == 0:
            return np.empty((0, 2), dtype=np.int64)
        return np.loadtxt(d / name, dtype=np.int64, delimiter="\t", ndmin=2)

    users, items = read_vocab("users.tsv"), read_vocab("items.tsv")
    ds = InteractionDataset(
        n_users=len(users),
        n_items=len(items),
        train_edges=read_edges("train.tsv"),
        valid_edges=read_edges("valid.tsv"),
        test_edges=read_edges("test.tsv"),
        user_vocab=users,
        item_vocab=items,
    )
    ds.validate()
    return ds
