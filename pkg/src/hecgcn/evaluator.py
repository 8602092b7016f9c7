"""Full-catalog leave-one-out ranking metrics (HR@n, NDCG@n)."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np


class EvaluationError(ValueError):
    pass


@dataclass
class EvalReport:
    hr: dict[int, float]
    ndcg: dict[int, float]
    per_user_rank: dict[int, int] = field(default_factory=dict)
    num_eval_users: int = 0

    def to_json(self):
        return {
            "hr": {str(n): v for n, v in sorted(self.hr.items())},
            "ndcg": {str(n): v for n, v in sorted(self.ndcg.items())},
            "num_eval_users": self.num_eval_users,
        }

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)

    def write_ranks(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["user", "rank"])
            for u, r in sorted(self.per_user_rank.items()):
                w.writerow([u, r])


def rank_from_scores(scores, positive, exclude=()):
    """1-based rank of ``positive`` among non-excluded items.

    Ties are broken by ascending item id.
    """
    scores = np.asarray(scores)
    s = scores[positive]
    ids = np.arange(len(scores))
    better = (scores > s) | ((scores == s) & (ids < positive))
    if len(exclude):
        better[np.asarray(list(exclude), dtype=np.int64)] = False
    return int(better.sum()) + 1


def rank_items(e_bar_user, e_bar_item, u, exclude, positive):
    if positive in set(exclude):
        raise EvaluationError(f"positive item {positive} is in the exclusion set")
    return rank_from_scores(e_bar_item @ e_bar_user[u], positive, list(exclude))


def metrics_from_ranks(ranks, ns):
    ranks = np.asarray(ranks, dtype=np.int64)
    if ranks.size == 0:
        raise EvaluationError("no users to evaluate")
    hr, ndcg = {}, {}
    for n in ns:
        hit = ranks <= n
        hr[n] = float(hit.mean())
        ndcg[n] = float(np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0).mean())
    return hr, ndcg


def evaluate(outputs, ds, ns=(10,), split="test", chunk=1024):
    """Rank each evaluation user's held-out item against the full catalog.

    ``outputs`` is a forward result or a ``(user_emb, item_emb)`` pair of
    numpy arrays. Only the user's target-behavior training items are removed
    from the candidates.
    """
    if isinstance(outputs, tuple):
        eu, ei = outputs
    else:
        eu, ei = outputs.e_bar[-1].user.value, outputs.e_bar[-1].item.value
    positives = {"test": ds.test_positive, "val": ds.val_positive}[split]
    users = np.array(sorted(u for u in ds.eval_users if u in positives), dtype=np.int64)
    if users.size == 0:
        raise EvaluationError(f"no evaluation users with a {split} positive")
    train_items = ds.user_items(ds.target)
    ranks = {}
    for start in range(0, len(users), chunk):
        block = users[start:start + chunk]
        scores = eu[block] @ ei.T
        for row, u in enumerate(block):
            ranks[int(u)] = rank_from_scores(scores[row], positives[int(u)], train_items[u])
    hr, ndcg = metrics_from_ranks([ranks[u] for u in sorted(ranks)], ns)
    return EvalReport(hr=hr, ndcg=ndcg, per_user_rank=ranks, num_eval_users=len(ranks))
