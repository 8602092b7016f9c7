"""Loss terms: per-behavior BPR, cosine InfoNCE consistency losses, and their
weighted combination with an L2 penalty."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    beta: float = 1e-3
    tau: float = 0.1

    def __post_init__(self):
        for name in ("alpha", "lambda1", "lambda2", "lambda3", "beta", "tau"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def from_config(cls, config):
        l1, l2, l3 = config.loss_weights()
        return cls(alpha=config.alpha, lambda1=l1, lambda2=l2, lambda3=l3, beta=config.reg, tau=config.tau)


def bpr_loss(scores_pos, scores_neg):
    """Sum over the batch of ``-log sigmoid(pos - neg)``."""
    if scores_pos.shape != scores_neg.shape:
        raise ad.ShapeError(f"bpr_loss: {scores_pos.shape} vs {scores_neg.shape}")
    return ad.scale(ad.reduce_sum(ad.log_sigmoid(ad.sub(scores_pos, scores_neg))), -1.0)


def info_nce(anchor, positive_ids, pool, tau):
    """Cosine InfoNCE summed over anchors.

    Row b of ``anchor`` is paired with ``pool[positive_ids[b]]``; every row of
    ``pool`` (including the positive) enters the denominator.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    positive_ids = np.asarray(positive_ids, dtype=np.int64)
    if len(positive_ids) != anchor.shape[0]:
        raise ad.ShapeError(f"info_nce: {anchor.shape[0]} anchors but {len(positive_ids)} positive ids")
    a = ad.row_l2_normalize(anchor)
    p = ad.row_l2_normalize(pool)
    logits = ad.scale(ad.matmul(a, ad.transpose(p)), 1.0 / tau)
    pos = ad.scale(ad.row_dot(a, ad.gather_rows(p, positive_ids)), 1.0 / tau)
    return ad.reduce_sum(ad.sub(ad.row_logsumexp(logits), pos))


def _contrast(anchors, targets, ids, tau, full_pool):
    """Sum of InfoNCE terms over behaviors for one side.

    ``ids`` are the unique batch node ids. With ``full_pool`` the denominator
    ranges over every node, otherwise over the batch nodes only.
    """
    terms = []
    for anchor, target in zip(anchors, targets):
        a = ad.gather_rows(anchor, ids)
        if full_pool:
            terms.append(info_nce(a, ids, target, tau))
        else:
            terms.append(info_nce(a, np.arange(len(ids)), ad.gather_rows(target, ids), tau))
    return ad.add_n(terms)


def inter_behavior_loss(outputs, batch_users, batch_items, tau, full_pool=False, which=("b", "h")):
    """Global-vs-behavior consistency, returning ``(L_gb, L_gh)``.

    Either entry is None when not requested or when the hypergraph branch is off.
    """
    users = np.unique(batch_users)
    items = np.unique(batch_items)
    K = len(outputs.e_b)
    res = []
    for kind in ("b", "h"):
        views = outputs.e_b if kind == "b" else outputs.e_h
        if kind not in which or any(v is None for v in views):
            res.append(None)
            continue
        lu = _contrast([outputs.e_g.user] * K, [v.user for v in views], users, tau, full_pool)
        li = _contrast([outputs.e_g.item] * K, [v.item for v in views], items, tau, full_pool)
        res.append(ad.add(lu, li))
    return tuple(res)


def intra_behavior_loss(outputs, batch_users, batch_items, tau, full_pool=False):
    """Interaction-graph vs hypergraph consistency within each behavior."""
    if any(v is None for v in outputs.e_h):
        return None
    users = np.unique(batch_users)
    items = np.unique(batch_items)
    lu = _contrast([v.user for v in outputs.e_b], [v.user for v in outputs.e_h], users, tau, full_pool)
    li = _contrast([v.item for v in outputs.e_b], [v.item for v in outputs.e_h], items, tau, full_pool)
    return ad.add(lu, li)


def l2_penalty(params, users, items):
    """Squared L2 norm of touched embedding rows plus the full projection matrices."""
    parts = [
        ad.gather_rows(params.user_emb, np.unique(users)),
        ad.gather_rows(params.item_emb, np.unique(items)),
    ]
    parts += list(params.hyper_proj_user) + list(params.hyper_proj_item)
    return ad.add_n(ad.reduce_sum(ad.hadamard(p, p)) for p in parts)


def total_loss(bpr_per_behavior, l_gb, l_gh, l_bh, weights, penalty=None):
    """``sum_k L_k + alpha * (l1 L_gb + l2 L_gh + l3 L_bh) + beta * penalty``.

    Terms given as None, or whose coefficient is zero, are left out.
    """
    total = ad.add_n(bpr_per_behavior)
    cl = []
    for term, lam in ((l_gb, weights.lambda1), (l_gh, weights.lambda2), (l_bh, weights.lambda3)):
        if term is not None and lam != 0.0:
            cl.append(ad.scale(term, lam))
    if cl and weights.alpha != 0.0:
        total = ad.add(total, ad.scale(ad.add_n(cl), weights.alpha))
    if penalty is not None and weights.beta != 0.0:
        total = ad.add(total, ad.scale(penalty, weights.beta))
    return total


@dataclass
class LossBreakdown:
    total: ad.Tensor
    bpr: float
    gb: float
    gh: float
    bh: float


def compute_loss(params, outputs, batches, weights, full_pool=False):
    """Build the full training loss for one step.

    ``batches[k]`` is a ``(users, pos_items, neg_items)`` triple of arrays.
    Contrastive and penalty terms use the union of nodes across all batches.
    """
    from .model import score

    bpr = []
    for k, (u, i, j) in enumerate(batches):
        bar = outputs.e_bar[k]
        bpr.append(bpr_loss(score(bar.user, bar.item, u, i), score(bar.user, bar.item, u, j)))
    all_users = np.concatenate([b[0] for b in batches])
    all_items = np.concatenate([np.concatenate([b[1], b[2]]) for b in batches])

    want = []
    if weights.alpha != 0.0 and weights.lambda1 != 0.0:
        want.append("b")
    if weights.alpha != 0.0 and weights.lambda2 != 0.0:
        want.append("h")
    l_gb, l_gh = inter_behavior_loss(outputs, all_users, all_items, weights.tau, full_pool, which=want)
    l_bh = None
    if weights.alpha != 0.0 and weights.lambda3 != 0.0:
        l_bh = intra_behavior_loss(outputs, all_users, all_items, weights.tau, full_pool)
    penalty = l2_penalty(params, all_users, all_items) if weights.beta != 0.0 else None
    total = total_loss(bpr, l_gb, l_gh, l_bh, weights, penalty)

    def val(t):
        return t.item() if t is not None else 0.0

    return LossBreakdown(total, sum(t.item() for t in bpr), val(l_gb), val(l_gh), val(l_bh))
