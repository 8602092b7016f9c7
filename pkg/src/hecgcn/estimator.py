"""scikit-learn style wrapper around the training loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import TrainConfig
from .evaluator import evaluate
from .model import forward
from .trainer import build_graphs, fit, init_params
from .validation import check_interaction_dataset, check_positive_int, check_user_ids


class HECGCNRecommender(BaseEstimator):
    """Multi-behavior recommender estimator.

    ``fit`` takes an :class:`~hecgcn.dataset.InteractionDataset`; ``predict``
    returns top-n item ids per user for the target behavior, with the user's
    target-behavior training items removed. ``score`` is test HR@10.

    Parameters mirror :class:`~hecgcn.config.TrainConfig` one to one, so
    ``get_params``/``set_params`` and ``sklearn.base.clone`` work as usual.
    """

    def __init__(self, embedding_dim=64, n_layers=1, n_hyperedges=64, lr=5e-4, reg=1e-3, alpha=0.1,
                 lambda1=1.0, lambda2=1.0, lambda3=1.0, tau=0.1, batch_size=1024, max_epochs=100,
                 patience=10, seed=0, ablations=(), negative_pool="in_batch", dtype="float32",
                 hyper_weight=1.0, hyper_init_gain=0.1, eval_ns=(10,)):
        self.embedding_dim = embedding_dim
        self.n_layers = n_layers
        self.n_hyperedges = n_hyperedges
        self.lr = lr
        self.reg = reg
        self.alpha = alpha
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.lambda3 = lambda3
        self.tau = tau
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed
        self.ablations = ablations
        self.negative_pool = negative_pool
        self.dtype = dtype
        self.hyper_weight = hyper_weight
        self.hyper_init_gain = hyper_init_gain
        self.eval_ns = eval_ns

    def to_config(self):
        return TrainConfig.from_dict(self.get_params())

    def fit(self, X, y=None):
        ds = check_interaction_dataset(X)
        config = self.to_config()
        graphs = build_graphs(ds)
        params = init_params(ds, config)
        result = fit(params, graphs, ds, config)
        self.config_ = config
        self.dataset_ = ds
        self.graphs_ = graphs
        self.params_ = result.params
        self.opt_state_ = result.opt_state
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.n_users_, self.n_items_ = ds.num_users, ds.num_items
        self._cache_embeddings()
        return self

    def _cache_embeddings(self):
        out = forward(self.params_, self.graphs_, self.config_)
        self.user_embeddings_ = out.e_bar[-1].user.value
        self.item_embeddings_ = out.e_bar[-1].item.value

    def transform(self, users):
        """Target-behavior user embeddings for ``users``."""
        check_is_fitted(self, "params_")
        users = check_user_ids(users, self.n_users_)
        return self.user_embeddings_[users]

    def decision_function(self, users):
        """Target-behavior scores, shape (len(users), n_items)."""
        check_is_fitted(self, "params_")
        users = check_user_ids(users, self.n_users_)
        return self.user_embeddings_[users] @ self.item_embeddings_.T

    def predict(self, users, n=10):
        """Top-``n`` unseen item ids per user, best first (ties by lower id)."""
        n = check_positive_int(n, "n")
        scores = self.decision_function(users).astype(np.float64)
        seen = self.dataset_.user_items(self.dataset_.target)
        users = check_user_ids(users, self.n_users_)
        for row, u in enumerate(users):
            scores[row, seen[u]] = -np.inf
        order = np.lexsort((np.broadcast_to(np.arange(self.n_items_), scores.shape), -scores), axis=1)
        return order[:, :n]

    def evaluate(self, X=None, ns=(10,), split="test"):
        check_is_fitted(self, "params_")
        ds = self.dataset_ if X is None else check_interaction_dataset(X)
        return evaluate((self.user_embeddings_, self.item_embeddings_), ds, ns=ns, split=split)

    def score(self, X=None, y=None):
        return self.evaluate(X, ns=(10,)).hr[10]
