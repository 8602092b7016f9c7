"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

import numbers

import numpy as np

from .dataset import InteractionDataset


def check_interaction_dataset(ds, require_eval=True):
    if not isinstance(ds, InteractionDataset):
        raise TypeError(f"expected an InteractionDataset, got {type(ds).__name__}")
    if ds.num_behaviors < 1:
        raise ValueError("dataset has no behaviors")
    for k, edges in enumerate(ds.train_edges):
        if edges.size and (edges[:, 0].max() >= ds.num_users or edges[:, 1].max() >= ds.num_items
                           or edges.min() < 0):
            raise ValueError(f"behavior {ds.behaviors[k]!r} has ids out of range")
    if len(ds.train_edges[ds.target]) == 0:
        raise ValueError("target behavior has no training edges")
    if require_eval and not ds.eval_users:
        raise ValueError("dataset has no evaluation users")
    return ds


def check_user_ids(users, num_users):
    users = np.asarray(users)
    if users.ndim == 0:
        users = users.reshape(1)
    if users.ndim != 1 or not np.issubdtype(users.dtype, np.integer):
        raise ValueError("users must be a 1-D array of integer ids")
    if users.size and (users.min() < 0 or users.max() >= num_users):
        raise IndexError(f"user ids must lie in [0, {num_users})")
    return users.astype(np.int64)


def check_positive_int(value, name):
    if not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)
