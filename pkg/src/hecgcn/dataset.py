"""Multi-behavior interaction loading, leave-one-out split and BPR sampling."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

logger = logging.getLogger(__name__)


class DatasetError(ValueError):
    """Malformed input files or an unusable dataset configuration."""


class RawInteraction(NamedTuple):
    user_token: str
    item_token: str
    order_index: int


class BprTriple(NamedTuple):
    behavior_index: int
    user_id: int
    pos_item: int
    neg_item: int


@dataclass(frozen=True)
class InteractionDataset:
    num_users: int
    num_items: int
    behaviors: tuple[str, ...]
    train_edges: tuple[np.ndarray, ...]  # one (E_k, 2) int64 array per behavior
    val_positive: dict[int, int]
    test_positive: dict[int, int]
    eval_users: frozenset[int]
    user_tokens: tuple[str, ...] = ()
    item_tokens: tuple[str, ...] = ()
    _edge_sets: tuple[frozenset, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if not self._edge_sets:
            sets = tuple(frozenset(map(tuple, e.tolist())) for e in self.train_edges)
            object.__setattr__(self, "_edge_sets", sets)

    @property
    def num_behaviors(self):
        return len(self.behaviors)

    @property
    def target(self):
        return len(self.behaviors) - 1

    def has_edge(self, k, u, i):
        return (u, i) in self._edge_sets[k]

    def user_items(self, k):
        """Per-user sorted item arrays for behavior ``k``."""
        edges = self.train_edges[k]
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        edges = edges[order]
        splits = np.searchsorted(edges[:, 0], np.arange(self.num_users + 1))
        return [edges[splits[u]:splits[u + 1], 1] for u in range(self.num_users)]

    def fingerprint(self):
        """Cheap identity of the dataset, used to tie checkpoints to data."""
        return {
            "num_users": self.num_users,
            "num_items": self.num_items,
            "behaviors": list(self.behaviors),
            "edges": [int(len(e)) for e in self.train_edges],
            "eval_users": len(self.eval_users),
        }


def load_behavior_file(path, behavior=None):
    """Read ``user<TAB>item`` lines; extra columns are ignored."""
    records = []
    counts: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) < 2 or not parts[0] or not parts[1]:
                raise DatasetError(f"{path}:{lineno}: expected 'user<TAB>item', got {line!r}")
            user, item = parts[0], parts[1]
            idx = counts.get(user, 0)
            counts[user] = idx + 1
            records.append(RawInteraction(user, item, idx))
    return records


def load_manifest(path):
    """Load a JSON dataset manifest.

    Format::

        {"behaviors": [{"name": "view", "path": "view.txt"}, ...],
         "min_target_interactions": 3}

    Relative paths resolve against the manifest's directory. The last
    behavior is the target.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    entries = manifest.get("behaviors")
    if not entries:
        raise DatasetError(f"{path}: manifest lists no behaviors")
    raw = {}
    for entry in entries:
        file_path = Path(entry["path"])
        if not file_path.is_absolute():
            file_path = path.parent / file_path
        if not file_path.exists():
            raise FileNotFoundError(f"behavior file not found: {file_path}")
        raw[entry["name"]] = load_behavior_file(file_path, entry["name"])
    return build_dataset(raw, target=entries[-1]["name"],
                         min_target_interactions=manifest.get("min_target_interactions", 3))


def build_dataset(raw, target, min_target_interactions=3):
    """Map tokens to contiguous ids and split the target behavior leave-one-out.

    ``raw`` maps behavior name to its records, in cascade order; ``target``
    must be the last key. Auxiliary behaviors go to training in full.
    """
    if target not in raw:
        raise DatasetError(f"target behavior {target!r} not in {list(raw)}")
    names = [b for b in raw if b != target] + [target]
    if not raw[target]:
        raise DatasetError(f"target behavior {target!r} has no interactions")

    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    for b in names:
        for rec in raw[b]:
            user_ids.setdefault(rec.user_token, len(user_ids))
            item_ids.setdefault(rec.item_token, len(item_ids))

    # per-behavior, per-user ordered and deduplicated histories
    histories = []
    for b in names:
        per_user: dict[int, list[int]] = {}
        seen: set[tuple[int, int]] = set()
        for rec in sorted(raw[b], key=lambda r: (user_ids[r.user_token], r.order_index)):
            u, i = user_ids[rec.user_token], item_ids[rec.item_token]
            if (u, i) in seen:
                continue
            seen.add((u, i))
            per_user.setdefault(u, []).append(i)
        histories.append(per_user)

    val, test = {}, {}
    train_target: list[tuple[int, int]] = []
    for u, items in histories[-1].items():
        if len(items) >= min_target_interactions:
            test[u] = items[-1]
            val[u] = items[-2]
            items = items[:-2]
        train_target.extend((u, i) for i in items)

    train_edges = []
    for per_user in histories[:-1]:
        edges = [(u, i) for u, items in per_user.items() for i in items]
        train_edges.append(_edge_array(edges))
    train_edges.append(_edge_array(train_target))

    ds = InteractionDataset(
        num_users=len(user_ids),
        num_items=len(item_ids),
        behaviors=tuple(names),
        train_edges=tuple(train_edges),
        val_positive=val,
        test_positive=test,
        eval_users=frozenset(test),
        user_tokens=tuple(user_ids),
        item_tokens=tuple(item_ids),
    )
    logger.info("dataset: %d users, %d items, edges %s, %d eval users",
                ds.num_users, ds.num_items, [len(e) for e in ds.train_edges], len(ds.eval_users))
    return ds


def from_edges(num_users, num_items, behaviors, train_edges, val_positive, test_positive):
    """Assemble a dataset directly from id-level edge lists (used by tests and synthetic data)."""
    return InteractionDataset(
        num_users=num_users,
        num_items=num_items,
        behaviors=tuple(behaviors),
        train_edges=tuple(_edge_array(e) for e in train_edges),
        val_positive=dict(val_positive),
        test_positive=dict(test_positive),
        eval_users=frozenset(test_positive),
    )


def _edge_array(edges):
    arr = np.asarray(list(edges), dtype=np.int64)
    return arr.reshape(-1, 2)


def sample_bpr_triples(ds, k, batch, rng):
    """Uniform positive edge plus a rejection-sampled negative item for behavior ``k``."""
    edges = ds.train_edges[k]
    if len(edges) == 0:
        raise DatasetError(f"behavior {ds.behaviors[k]!r} has no training edges")
    picks = rng.integers(0, len(edges), size=batch)
    max_tries = ds.num_items * 10
    triples = []
    for e in picks:
        u, i = int(edges[e, 0]), int(edges[e, 1])
        for _ in range(max_tries):
            j = int(rng.integers(0, ds.num_items))
            if not ds.has_edge(k, u, j):
                break
        else:
            raise DatasetError(f"no negative available for user {u} in behavior {ds.behaviors[k]!r}")
        triples.append(BprTriple(k, u, i, j))
    return triples


def triples_to_arrays(triples):
    arr = np.asarray([(t.user_id, t.pos_item, t.neg_item) for t in triples], dtype=np.int64)
    return arr[:, 0], arr[:, 1], arr[:, 2]
