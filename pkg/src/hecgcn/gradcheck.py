"""Finite-difference check of the full training loss on the built-in toy."""

from __future__ import annotations

from contextlib import ExitStack

import numpy as np

from . import autodiff as ad
from .config import TrainConfig
from .model import forward
from .objective import LossWeights, compute_loss
from .synthetic import toy_dataset
from .trainer import build_graphs, init_params

TOLERANCE = 1e-4

TOY_BATCHES = (
    (np.array([0, 1, 2, 4]), np.array([0, 1, 2, 6]), np.array([3, 4, 7, 1])),
    (np.array([0, 2, 5]), np.array([2, 4, 3]), np.array([1, 1, 0])),
)


def toy_problem(ablations=(), seed=0, negative_pool="in_batch", init_scale=0.5, **overrides):
    """Params, config, graphs and a loss closure for the 6-user/8-item/2-behavior toy in float64.

    ``init_scale`` shrinks the initial parameters: the loss is a high-degree
    polynomial in them and central differences need moderate curvature.
    """
    ds = toy_dataset()
    fields = dict(embedding_dim=4, n_layers=2, n_hyperedges=3, dtype="float64", alpha=0.5, reg=1e-2,
                  seed=seed, ablations=tuple(ablations), negative_pool=negative_pool,
                  hyper_init_gain=1.0)
    fields.update(overrides)
    config = TrainConfig(**fields)
    graphs = build_graphs(ds)
    params = init_params(ds, config)
    for t in params.tensors():
        t.value *= init_scale
    weights = LossWeights.from_config(config)

    def loss():
        out = forward(params, graphs, config)
        return compute_loss(params, out, TOY_BATCHES, weights,
                            full_pool=config.negative_pool == "full").total

    return params, config, graphs, loss


def run_gradcheck(ablations=(), seed=0, broken=(), negative_pool="in_batch"):
    """Return ``(max_rel_err, worst_param_name, flat_index)``."""
    params, _, _, loss = toy_problem(ablations, seed, negative_pool)
    with ExitStack() as stack:
        for rule in broken:
            stack.enter_context(ad.break_rule(rule))
        err, where = ad.finite_diff_check(loss, params.tensors(), return_detail=True)
    names = [n for n, _ in params.named()]
    if where is None:
        return err, None, None
    return err, names[where[0]], where[1]
