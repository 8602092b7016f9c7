"""Symmetric degree-normalized user-item adjacency in CSR form."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class NormalizedBipartiteGraph:
    """Holds ``A[u, i] = 1 / sqrt(d_u * d_i)`` and its explicit transpose.

    Both orientations are CSR so that the forward product (items -> users)
    and its backward (users -> items) are row-major scans.
    """

    num_users: int
    num_items: int
    user_to_item: sp.csr_matrix
    item_to_user: sp.csr_matrix
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def nnz(self):
        return self.user_to_item.nnz

    def as_dtype(self, dtype):
        """Both orientations cast to ``dtype`` (cached)."""
        dtype = np.dtype(dtype)
        if dtype == self.user_to_item.dtype:
            return self.user_to_item, self.item_to_user
        if dtype not in self._cache:
            self._cache[dtype] = (self.user_to_item.astype(dtype), self.item_to_user.astype(dtype))
        return self._cache[dtype]

    def dense(self):
        return self.user_to_item.toarray()


def build_graph(edges, num_users, num_items):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size:
        if edges[:, 0].min() < 0 or edges[:, 0].max() >= num_users:
            raise IndexError(f"user id outside [0, {num_users})")
        if edges[:, 1].min() < 0 or edges[:, 1].max() >= num_items:
            raise IndexError(f"item id outside [0, {num_items})")
    rows, cols = edges[:, 0], edges[:, 1]
    du = np.bincount(rows, minlength=num_users).astype(np.float64)
    di = np.bincount(cols, minlength=num_items).astype(np.float64)
    vals = 1.0 / np.sqrt(du[rows] * di[cols])
    a = sp.csr_matrix((vals, (rows, cols)), shape=(num_users, num_items))
    a.sum_duplicates()
    a.sort_indices()
    at = a.T.tocsr()
    at.sort_indices()
    return NormalizedBipartiteGraph(num_users, num_items, a, at)


def union_edges(edge_lists):
    stacked = [np.asarray(e, dtype=np.int64).reshape(-1, 2) for e in edge_lists]
    if not stacked:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(np.concatenate(stacked, axis=0), axis=0)


def build_global_graph(ds):
    """Graph over the union of every behavior's training edges."""
    return build_graph(union_edges(ds.train_edges), ds.num_users, ds.num_items)


def build_behavior_graphs(ds):
    return [build_graph(e, ds.num_users, ds.num_items) for e in ds.train_edges]
