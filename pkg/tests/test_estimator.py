import numpy as np
import pytest
from sklearn.base import clone

from hecgcn import HECGCNRecommender, TrainConfig
from hecgcn.synthetic import planted_dataset


def small(**kw):
    params = dict(embedding_dim=8, n_layers=1, n_hyperedges=4, batch_size=16, lr=1e-3, max_epochs=3)
    params.update(kw)
    return HECGCNRecommender(**params)


def test_params_mirror_config():
    est = HECGCNRecommender()
    assert set(est.get_params()) == set(TrainConfig().to_dict())
    assert est.to_config() == TrainConfig()


def test_clone_keeps_params():
    est = small(alpha=0.5)
    assert clone(est).get_params() == est.get_params()


def test_fit_predict():
    ds = planted_dataset()
    est = small().fit(ds)
    top = est.predict([0, 1], n=5)
    assert top.shape == (2, 5)
    seen = est.dataset_.user_items(ds.target)
    for row, u in enumerate([0, 1]):
        assert not set(top[row]) & set(seen[u].tolist())
        assert len(set(top[row])) == 5
    assert est.transform([0]).shape == (1, 8)
    assert est.decision_function([0, 1, 2]).shape == (3, ds.num_items)
    assert 0.0 <= est.score() <= 1.0


def test_fit_is_deterministic():
    ds = planted_dataset()
    a = small().fit(ds).decision_function(np.arange(4))
    b = small().fit(ds).decision_function(np.arange(4))
    assert np.array_equal(a, b)


def test_input_validation():
    est = small()
    with pytest.raises(TypeError):
        est.fit([[0, 1]])
    est.fit(planted_dataset())
    with pytest.raises(IndexError):
        est.predict([999])
    with pytest.raises(ValueError):
        est.predict([0], n=0)
