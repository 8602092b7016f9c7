"""Small built-in datasets: the gradient-check toy and a planted block dataset."""

from __future__ import annotations

import numpy as np

from .dataset import from_edges


def toy_dataset():
    """6 users, 8 items, 2 behaviors (click -> buy), fixed edges."""
    click = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 3), (2, 2), (2, 4), (2, 5),
             (3, 5), (3, 6), (4, 6), (4, 7), (4, 0), (5, 3), (5, 7)]
    buy = [(0, 0), (0, 2), (1, 3), (2, 4), (3, 6), (4, 7), (5, 3), (2, 5)]
    return from_edges(6, 8, ("click", "buy"), [click, buy],
                      val_positive={0: 1, 1: 1, 2: 2, 3: 5},
                      test_positive={0: 5, 1: 6, 2: 7, 3: 1})


def planted_dataset(n_groups=5, users_per_group=4, items_per_block=6, noise_views=1, seed=0):
    """Block-structured view -> cart -> buy data with a known best ranking.

    User group g buys every item of block g. Members rotate the purchase order
    so each has a different validation and test item; the last four are
    training purchases. Each user views and carts its validation item but
    never its test item, so the validation positive is the only unbought block
    item directly linked to the user. Views also contain ``noise_views``
    random off-block items.
    """
    rng = np.random.default_rng(seed)
    n_users = n_groups * users_per_group
    n_items = n_groups * items_per_block
    view, cart, buy = [], [], []
    val, test = {}, {}
    for g in range(n_groups):
        block = [g * items_per_block + j for j in range(items_per_block)]
        for r in range(users_per_group):
            u = g * users_per_group + r
            order = [block[(r + j) % items_per_block] for j in range(items_per_block)]
            train, v, t = order[:-2], order[-2], order[-1]
            buy.extend((u, i) for i in train)
            val[u], test[u] = v, t
            cart.extend((u, i) for i in order[:-1])
            view.extend((u, i) for i in order[:-1])
            others = [i for i in range(n_items) if i not in block]
            for i in rng.choice(others, size=noise_views, replace=False):
                view.append((u, int(i)))
    return from_edges(n_users, n_items, ("view", "cart", "buy"), [view, cart, buy], val, test)
