"""Forward computation: global graph, cascaded behavior graphs with hypergraph
enhancement, behavior mutual enhancement and inner-product scoring."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .config import TrainConfig


@dataclass
class ModelParams:
    user_emb: ad.Tensor
    item_emb: ad.Tensor
    hyper_proj_user: list[ad.Tensor]
    hyper_proj_item: list[ad.Tensor]

    @classmethod
    def init(cls, num_users, num_items, num_behaviors, dim, n_hyperedges, seed=0, dtype=np.float32,
             hyper_gain=1.0):
        rng = np.random.default_rng(seed)
        user = ad.param((num_users, dim), rng=rng, dtype=dtype, name="user_emb")
        item = ad.param((num_items, dim), rng=rng, dtype=dtype, name="item_emb")
        wu, wi = [], []
        for k in range(num_behaviors):
            wu.append(ad.param((dim, n_hyperedges), rng=rng, dtype=dtype, name=f"hyper_proj_user.{k}"))
            wi.append(ad.param((dim, n_hyperedges), rng=rng, dtype=dtype, name=f"hyper_proj_item.{k}"))
        if hyper_gain != 1.0:
            for w in wu + wi:
                w.value *= w.dtype.type(hyper_gain)
        return cls(user, item, wu, wi)

    def named(self):
        """(name, tensor) pairs in a fixed order."""
        out = [("user_emb", self.user_emb), ("item_emb", self.item_emb)]
        out += [(f"hyper_proj_user.{k}", w) for k, w in enumerate(self.hyper_proj_user)]
        out += [(f"hyper_proj_item.{k}", w) for k, w in enumerate(self.hyper_proj_item)]
        return out

    def tensors(self):
        return [t for _, t in self.named()]

    def zero_grad(self):
        ad.zero_grads(self.tensors())

    def copy(self):
        def c(t):
            return ad.Tensor(t.value.copy(), requires_grad=True, name=t.name)
        return ModelParams(c(self.user_emb), c(self.item_emb),
                           [c(w) for w in self.hyper_proj_user], [c(w) for w in self.hyper_proj_item])

    @property
    def dim(self):
        return self.user_emb.shape[1]


@dataclass
class Side:
    user: ad.Tensor
    item: ad.Tensor


@dataclass
class ForwardOutputs:
    e_g: Side
    e_b: list[Side] = field(default_factory=list)
    e_h: list[Side | None] = field(default_factory=list)
    e_int: list[Side] = field(default_factory=list)
    e_bar: list[Side] = field(default_factory=list)
    # raw layer-0 leaves, kept so the regularizer can gather touched rows
    e0: Side | None = None
    attention: list[np.ndarray] = field(default_factory=list)


# ---------------------------------------------------------------------------
# propagation


def propagate(graph, user, item, n_layers):
    """LightGCN-style propagation; returns the unweighted sum over layers 0..L."""
    a, at = graph.as_dtype(user.dtype)
    users, items = [user], [item]
    cur_u, cur_i = user, item
    for _ in range(n_layers):
        nxt_u = ad.spmm(a, cur_i, at)
        nxt_i = ad.spmm(at, cur_u, a)
        cur_u, cur_i = nxt_u, nxt_i
        users.append(cur_u)
        items.append(cur_i)
    return ad.add_n(users), ad.add_n(items)


def global_propagate(g_global, user_emb, item_emb, n_layers):
    return propagate(g_global, user_emb, item_emb, n_layers)


def behavior_propagate(g_k, init_user, init_item, n_layers):
    return propagate(g_k, init_user, init_item, n_layers)


def hyperedge_project(e_b, w, stop=True):
    """Low-rank hyperedge memberships ``sg(e_b) @ W``."""
    src = ad.stop_gradient(e_b) if stop else e_b
    return ad.matmul(src, w)


def hypergraph_convolve(h, e_b, stop=True):
    """``(H H^T) e_b`` evaluated as ``H (H^T e_b)`` without the n x n matrix."""
    src = ad.stop_gradient(e_b) if stop else e_b
    return ad.matmul(h, ad.matmul(ad.transpose(h), src))


def integrate_behavior(e_b, e_h, e_prev, hyper_weight=1.0):
    if e_h is None:
        return ad.add(e_b, e_prev)
    if hyper_weight != 1.0:
        e_h = ad.scale(e_h, hyper_weight)
    return ad.add(ad.add(e_b, e_h), e_prev)


def mutual_enhance(e_int_all, return_weights=False):
    """Per-node attention across behaviors.

    For behavior k and node n the logits are ``<e^k_n, e^j_n> / sqrt(d)`` over
    all behaviors j; the output is the softmax-weighted sum of the e^j_n.
    """
    K = len(e_int_all)
    if K == 1:
        return ([e_int_all[0]], [np.ones((e_int_all[0].shape[0], 1))]) if return_weights else [e_int_all[0]]
    d = e_int_all[0].shape[1]
    outs, weights = [], []
    for k in range(K):
        logits = ad.concat_cols([ad.row_dot(e_int_all[k], e_int_all[j]) for j in range(K)])
        w = ad.row_softmax(logits, 1.0 / np.sqrt(d))
        weights.append(w.value)
        outs.append(ad.add_n(ad.scale_rows(e_int_all[j], ad.select_col(w, j)) for j in range(K)))
    if return_weights:
        return outs, weights
    return outs


def final_embed(e_tilde, e_g):
    return ad.add(e_tilde, e_g)


def score(e_bar_user, e_bar_item, u, i):
    """Inner-product scores for paired user and item ids, as an (n x 1) tensor."""
    return ad.row_dot(ad.gather_rows(e_bar_user, u), ad.gather_rows(e_bar_item, i))


def score_value(outputs, u, i, k=None):
    """Plain float score for one (user, item) pair under behavior ``k`` (target by default)."""
    k = len(outputs.e_bar) - 1 if k is None else k
    eu = outputs.e_bar[k].user.value
    ei = outputs.e_bar[k].item.value
    if not (0 <= u < eu.shape[0] and 0 <= i < ei.shape[0]):
        raise IndexError(f"(user {u}, item {i}) out of range")
    return float(eu[u] @ ei[i])


# ---------------------------------------------------------------------------


def forward(params, graphs, config, stop_fn=None):
    """Full forward pass.

    ``graphs`` is ``(global_graph, [behavior graphs in cascade order])``.
    ``stop_fn``, when given, replaces ``stop_gradient`` at the two hypergraph
    entry points (used to build detached references in tests).
    """
    if config is None:
        config = TrainConfig()
    g_global, g_behaviors = graphs
    L = config.n_layers
    stop = not config.has("no_stop")
    use_hyper = not config.has("no_hyper")

    e0 = Side(params.user_emb, params.item_emb)
    if config.has("no_global"):
        e_g = e0
    else:
        e_g = Side(*global_propagate(g_global, params.user_emb, params.item_emb, L))

    out = ForwardOutputs(e_g=e_g, e0=e0)
    prev = e_g
    for k, g_k in enumerate(g_behaviors):
        if config.has("no_cascading"):
            prev = e_g
        eb = Side(*behavior_propagate(g_k, prev.user, prev.item, L))
        out.e_b.append(eb)
        if use_hyper:
            if stop_fn is not None:
                hu = ad.matmul(stop_fn(eb.user), params.hyper_proj_user[k])
                hi = ad.matmul(stop_fn(eb.item), params.hyper_proj_item[k])
                eh = Side(ad.matmul(hu, ad.matmul(ad.transpose(hu), stop_fn(eb.user))),
                          ad.matmul(hi, ad.matmul(ad.transpose(hi), stop_fn(eb.item))))
            else:
                hu = hyperedge_project(eb.user, params.hyper_proj_user[k], stop)
                hi = hyperedge_project(eb.item, params.hyper_proj_item[k], stop)
                eh = Side(hypergraph_convolve(hu, eb.user, stop), hypergraph_convolve(hi, eb.item, stop))
        else:
            eh = None
        out.e_h.append(eh)
        ei = Side(
            integrate_behavior(eb.user, eh.user if eh else None, prev.user, config.hyper_weight),
            integrate_behavior(eb.item, eh.item if eh else None, prev.item, config.hyper_weight),
        )
        out.e_int.append(ei)
        prev = ei

    if config.has("no_mutual"):
        tilde = out.e_int
    else:
        tu, wu = mutual_enhance([s.user for s in out.e_int], return_weights=True)
        ti, wi = mutual_enhance([s.item for s in out.e_int], return_weights=True)
        tilde = [Side(a, b) for a, b in zip(tu, ti)]
        out.attention = wu + wi
    out.e_bar = [Side(final_embed(t.user, e_g.user), final_embed(t.item, e_g.item)) for t in tilde]
    return out


def target_embeddings(params, graphs, config):
    """Numpy (user, item) embeddings used for ranking under the target behavior."""
    out = forward(params, graphs, config)
    return out.e_bar[-1].user.value, out.e_bar[-1].item.value
