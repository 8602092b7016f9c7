"""Adam with lazy row-sparse updates for embedding tables."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, named):
        return cls(m={n: np.zeros_like(t.value) for n, t in named},
                   v={n: np.zeros_like(t.value) for n, t in named})


def adam_step(named, state, lr, sparse=("user_emb", "item_emb")):
    """One bias-corrected Adam update in place.

    Tensors named in ``sparse`` are updated only on rows whose gradient is not
    all zero; the moments of the remaining rows are left untouched (no decay).
    Bias correction uses the global step count.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, t in named:
        g = t.grad
        if g is None:
            continue
        m, v = state.m[name], state.v[name]
        if name in sparse:
            rows = np.flatnonzero(np.any(g != 0, axis=1))
            if rows.size == 0:
                continue
            gr = g[rows]
            m[rows] = b1 * m[rows] + (1 - b1) * gr
            v[rows] = b2 * v[rows] + (1 - b2) * gr * gr
            t.value[rows] -= (lr * (m[rows] / c1) / (np.sqrt(v[rows] / c2) + state.eps)).astype(t.dtype)
        else:
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            t.value -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(t.dtype)
