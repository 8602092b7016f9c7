import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from hecgcn import autodiff as ad
from hecgcn.config import TrainConfig
from hecgcn.gradcheck import TOY_BATCHES, toy_problem
from hecgcn.model import ForwardOutputs, Side, forward
from hecgcn.objective import (LossWeights, bpr_loss, compute_loss, info_nce, inter_behavior_loss,
                              intra_behavior_loss, total_loss)
from hecgcn.synthetic import toy_dataset
from hecgcn.trainer import build_graphs, init_params


def col(values):
    return ad.constant(np.asarray(values, dtype=np.float64).reshape(-1, 1))


def scalar(x):
    return ad.constant(float(x))


# ---------------------------------------------------------------- BPR


def test_bpr_equal_scores():
    assert bpr_loss(col([1, 2, 3]), col([1, 2, 3])).item() == pytest.approx(3 * math.log(2), abs=1e-12)


def test_bpr_saturation():
    assert bpr_loss(col([50.0]), col([0.0])).item() == pytest.approx(0.0, abs=1e-20)


def test_bpr_scalar_example():
    assert bpr_loss(col([1.0]), col([0.5])).item() == pytest.approx(math.log1p(math.exp(-0.5)), abs=1e-15)
    assert bpr_loss(col([1.0]), col([0.5])).item() == pytest.approx(0.474077, abs=1e-6)


def test_bpr_length_mismatch():
    with pytest.raises(ad.ShapeError):
        bpr_loss(col([1.0, 2.0]), col([0.5]))


# ---------------------------------------------------------------- InfoNCE


def test_info_nce_pool_of_one_is_zero():
    x = ad.constant([[0.3, 0.4]])
    assert info_nce(x, [0], x, 0.1).item() == 0.0


def test_info_nce_scalar_example():
    anchor = ad.constant([[1.0, 0.0]])
    pool = ad.constant([[2.0, 0.0], [-3.0, 0.0]])
    expected = -math.log(math.exp(10) / (math.exp(10) + math.exp(-10)))
    assert info_nce(anchor, [0], pool, 0.1).item() == pytest.approx(expected, rel=1e-6)
    assert expected == pytest.approx(2.061e-9, rel=1e-3)


@pytest.mark.parametrize("pool_size", [1, 2, 5, 9])
def test_info_nce_collapse_is_log_pool(pool_size):
    v = np.tile([[0.5, -1.0, 2.0]], (pool_size, 1))
    loss = info_nce(ad.constant(v[:1]), [0], ad.constant(v), 0.1).item()
    assert loss == pytest.approx(math.log(pool_size), abs=1e-12)


def test_info_nce_rejects_bad_tau():
    x = ad.constant([[1.0]])
    with pytest.raises(ValueError):
        info_nce(x, [0], x, 0.0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), b=st.integers(1, 6), extra=st.integers(0, 5), tau=st.floats(0.05, 2.0))
def test_info_nce_nonnegative_and_matches_oracle(seed, b, extra, tau):
    rng = np.random.default_rng(seed)
    anchor, pool = rng.normal(size=(b, 4)), rng.normal(size=(b + extra, 4))
    ids = rng.permutation(b + extra)[:b]
    got = info_nce(ad.constant(anchor), ids, ad.constant(pool), tau).item()
    assert got >= 0
    assert got == pytest.approx(oracle.info_nce(anchor, pool, ids, tau), rel=1e-10, abs=1e-12)


# ---------------------------------------------------------------- inter / intra


def collapsed_outputs(n_users, n_items, k):
    v = ad.constant(np.ones((max(n_users, n_items), 3)))
    u, i = ad.gather_rows(v, np.arange(n_users)), ad.gather_rows(v, np.arange(n_items))
    side = Side(u, i)
    return ForwardOutputs(e_g=side, e_b=[side] * k, e_h=[side] * k, e_int=[side] * k, e_bar=[side] * k)


def test_inter_behavior_collapse():
    out = collapsed_outputs(5, 7, 2)
    users, items = np.array([0, 1, 1, 3]), np.array([2, 4, 6])
    l_gb, l_gh = inter_behavior_loss(out, users, items, 0.1)
    expected = 2 * (3 * math.log(3) + 3 * math.log(3))
    assert l_gb.item() == pytest.approx(expected, abs=1e-10)
    assert l_gh.item() == pytest.approx(expected, abs=1e-10)
    l_bh = intra_behavior_loss(out, users, items, 0.1)
    assert l_bh.item() == pytest.approx(expected, abs=1e-10)


def test_inter_behavior_reduces_to_scalar_case():
    # K=1, one user against a pool of two users under the full pool
    e_g = Side(ad.constant([[1.0, 0.0], [0.0, 1.0]]), ad.constant([[1.0, 0.0]]))
    e_b = Side(ad.constant([[2.0, 0.0], [-3.0, 0.0]]), ad.constant([[1.0, 0.0]]))
    out = ForwardOutputs(e_g=e_g, e_b=[e_b], e_h=[None])
    l_gb, l_gh = inter_behavior_loss(out, np.array([0]), np.array([0]), 0.1, full_pool=True)
    assert l_gh is None
    assert l_gb.item() == pytest.approx(-math.log(math.exp(10) / (math.exp(10) + math.exp(-10))), rel=1e-6)


@pytest.mark.parametrize("pool", ["in_batch", "full"])
def test_contrastive_terms_match_oracle_on_toy(pool):
    params, config, graphs, _ = toy_problem(negative_pool=pool)
    ds = toy_dataset()
    out = forward(params, graphs, config)
    ref = oracle.forward(ds, params.user_emb.value, params.item_emb.value,
                         [w.value for w in params.hyper_proj_user], [w.value for w in params.hyper_proj_item],
                         config.n_layers)
    users = np.concatenate([b[0] for b in TOY_BATCHES])
    items = np.concatenate([np.concatenate([b[1], b[2]]) for b in TOY_BATCHES])
    full = pool == "full"
    l_gb, l_gh = inter_behavior_loss(out, users, items, config.tau, full)
    l_bh = intra_behavior_loss(out, users, items, config.tau, full)
    uid, iid = np.unique(users), np.unique(items)
    for got, first, second in ((l_gb, "e_g", "e_b"), (l_gh, "e_g", "e_h"), (l_bh, "e_b", "e_h")):
        want = 0.0
        for side, ids in ((0, uid), (1, iid)):
            a = [ref[first][side]] * 2 if first == "e_g" else [e[side] for e in ref[first]]
            t = [e[side] for e in ref[second]]
            want += oracle.contrast(a, t, ids, config.tau, full)
        assert got.item() == pytest.approx(want, rel=1e-6)


# ---------------------------------------------------------------- total


def test_total_loss_without_weights_is_bpr_sum():
    w = LossWeights(alpha=0.0, beta=0.0)
    assert total_loss([scalar(1), scalar(2)], scalar(3), scalar(4), scalar(5), w).item() == 3.0


def test_total_loss_squared_norm_penalty():
    w = LossWeights(alpha=0.0, beta=1.0)
    p = ad.constant([[3.0, 4.0]])
    penalty = ad.reduce_sum(ad.hadamard(p, p))
    assert total_loss([scalar(0)], None, None, None, w, penalty).item() == 25.0


def test_total_loss_weighted_example():
    w = LossWeights(alpha=0.1, lambda1=1, lambda2=1, lambda3=1, beta=0.0)
    got = total_loss([scalar(1), scalar(2)], scalar(3), scalar(4), scalar(5), w).item()
    assert got == pytest.approx(3 + 0.1 * 12, abs=1e-12)
    assert got == pytest.approx(4.2, abs=1e-12)


@pytest.mark.parametrize("pool", ["in_batch", "full"])
def test_compute_loss_matches_oracle(pool):
    params, config, graphs, loss = toy_problem(negative_pool=pool)
    ds = toy_dataset()
    ref_out = oracle.forward(ds, params.user_emb.value, params.item_emb.value,
                             [w.value for w in params.hyper_proj_user], [w.value for w in params.hyper_proj_item],
                             config.n_layers)
    want = oracle.loss(ref_out, params.user_emb.value, params.item_emb.value,
                       [w.value for w in params.hyper_proj_user], [w.value for w in params.hyper_proj_item],
                       TOY_BATCHES, config.alpha, config.loss_weights(), config.reg, config.tau, pool == "full")
    assert loss().item() == pytest.approx(want, rel=1e-9)


def test_alpha_zero_gradient_equals_bpr_only_build():
    ds = toy_dataset()
    config = TrainConfig(embedding_dim=4, n_hyperedges=3, dtype="float64", alpha=0.0, reg=1e-2)
    graphs = build_graphs(ds)

    def grads(build):
        params = init_params(ds, config)
        out = forward(params, graphs, config)
        ad.backward(build(params, out))
        return [t.grad.copy() if t.grad is not None else np.zeros_like(t.value) for t in params.tensors()]

    def full(params, out):
        return compute_loss(params, out, TOY_BATCHES, LossWeights.from_config(config)).total

    def bpr_only(params, out):
        w = LossWeights(alpha=0.0, lambda1=0.0, lambda2=0.0, lambda3=0.0, beta=config.reg, tau=config.tau)
        return compute_loss(params, out, TOY_BATCHES, w).total

    for a, b in zip(grads(full), grads(bpr_only)):
        assert np.array_equal(a, b)


def test_negative_weights_rejected():
    with pytest.raises(ValueError):
        LossWeights(alpha=-1.0)
