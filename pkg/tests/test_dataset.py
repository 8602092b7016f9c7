import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hecgcn.dataset import (DatasetError, RawInteraction, build_dataset, from_edges, load_behavior_file,
                            load_manifest, sample_bpr_triples)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def records(user, items):
    return [RawInteraction(user, it, n) for n, it in enumerate(items)]


def test_load_preserves_order(tmp_path):
    recs = load_behavior_file(write(tmp_path / "b.txt", "u1\ti9\nu1\ti3\n"))
    assert recs == [RawInteraction("u1", "i9", 0), RawInteraction("u1", "i3", 1)]


def test_load_indexes_per_user(tmp_path):
    recs = load_behavior_file(write(tmp_path / "b.txt", "u1\ti9\nu2\ti9\n"))
    assert [r.order_index for r in recs] == [0, 0]


def test_load_ignores_third_column_and_blank_lines(tmp_path):
    recs = load_behavior_file(write(tmp_path / "b.txt", "u1\ti9\t1650000000\n\nu1\ti2\n"))
    assert [(r.item_token, r.order_index) for r in recs] == [("i9", 0), ("i2", 1)]


def test_load_malformed_line_names_line_number(tmp_path):
    with pytest.raises(DatasetError, match=r"b\.txt:2:"):
        load_behavior_file(write(tmp_path / "b.txt", "u1\ti9\nbroken\n"))


def test_load_empty_file(tmp_path):
    assert load_behavior_file(write(tmp_path / "b.txt", "")) == []


def test_leave_one_out_split():
    ds = build_dataset({"buy": records("u", ["a", "b", "c", "d"])}, target="buy")
    items = dict(zip(ds.item_tokens, range(ds.num_items)))
    assert sorted(ds.train_edges[0][:, 1].tolist()) == [items["a"], items["b"]]
    assert ds.val_positive[0] == items["c"]
    assert ds.test_positive[0] == items["d"]
    assert ds.eval_users == frozenset({0})


def test_short_history_stays_in_train():
    ds = build_dataset({"buy": records("u", ["a", "b"])}, target="buy", min_target_interactions=3)
    assert len(ds.train_edges[0]) == 2
    assert ds.eval_users == frozenset()


def test_empty_target_raises():
    with pytest.raises(DatasetError):
        build_dataset({"view": records("u", ["a"]), "buy": []}, target="buy")


def test_ids_by_first_appearance_in_cascade_order():
    raw = {"view": records("u2", ["x"]) + records("u1", ["y"]), "buy": records("u1", ["z", "x", "y"])}
    ds = build_dataset(raw, target="buy")
    assert ds.user_tokens == ("u2", "u1")
    assert ds.item_tokens == ("x", "y", "z")


def test_dedup_keeps_earliest():
    ds = build_dataset({"buy": records("u", ["a", "b", "a", "c", "d"])}, target="buy")
    tok = ds.item_tokens
    assert tok[ds.test_positive[0]] == "d"
    assert tok[ds.val_positive[0]] == "c"
    assert sorted(tok[i] for i in ds.train_edges[0][:, 1]) == ["a", "b"]


def test_manifest_relative_paths(tmp_path):
    write(tmp_path / "view.txt", "u1\ti1\nu1\ti2\n")
    write(tmp_path / "buy.txt", "u1\ti1\nu1\ti2\nu1\ti3\n")
    manifest = {"behaviors": [{"name": "view", "path": "view.txt"}, {"name": "buy", "path": "buy.txt"}]}
    write(tmp_path / "m.json", json.dumps(manifest))
    ds = load_manifest(tmp_path / "m.json")
    assert ds.behaviors == ("view", "buy")
    assert ds.num_users == 1 and ds.num_items == 3
    assert ds.test_positive == {0: 2}


def test_sampler_single_edge():
    ds = from_edges(1, 3, ["buy"], [[(0, 0)]], {}, {})
    triples = sample_bpr_triples(ds, 0, 200, np.random.default_rng(0))
    assert all(t.user_id == 0 and t.pos_item == 0 and t.neg_item in (1, 2) for t in triples)


def test_sampler_deterministic():
    ds = from_edges(3, 5, ["buy"], [[(0, 0), (1, 2), (2, 4)]], {}, {})
    a = sample_bpr_triples(ds, 0, 50, np.random.default_rng(9))
    b = sample_bpr_triples(ds, 0, 50, np.random.default_rng(9))
    assert a == b


def test_sampler_negative_frequency_uniform():
    ds = from_edges(1, 3, ["buy"], [[(0, 0)]], {}, {})
    triples = sample_bpr_triples(ds, 0, 100_000, np.random.default_rng(1))
    freq = np.bincount([t.neg_item for t in triples], minlength=3) / len(triples)
    assert freq[0] == 0
    assert abs(freq[1] - 0.5) <= 0.02 and abs(freq[2] - 0.5) <= 0.02


def test_sampler_no_negative_available():
    ds = from_edges(1, 2, ["buy"], [[(0, 0), (0, 1)]], {}, {})
    with pytest.raises(DatasetError, match="no negative available"):
        sample_bpr_triples(ds, 0, 1, np.random.default_rng(0))


histories = st.dictionaries(
    st.sampled_from([f"u{n}" for n in range(6)]),
    st.lists(st.sampled_from([f"i{n}" for n in range(8)]), min_size=1, max_size=8),
    min_size=1,
)


@settings(max_examples=60, deadline=None)
@given(view=histories, buy=histories)
def test_split_round_trip_and_bijective_ids(view, buy):
    raw = {"view": [r for u, its in view.items() for r in records(u, its)],
           "buy": [r for u, its in buy.items() for r in records(u, its)]}
    ds = build_dataset(raw, target="buy")
    assert sorted(ds.user_tokens) == sorted(set(view) | set(buy))
    assert len(set(ds.user_tokens)) == ds.num_users
    assert len(set(ds.item_tokens)) == ds.num_items
    uid = {t: n for n, t in enumerate(ds.user_tokens)}
    iid = {t: n for n, t in enumerate(ds.item_tokens)}
    for user, items in buy.items():
        u = uid[user]
        unique = list(dict.fromkeys(iid[i] for i in items))
        train = ds.train_edges[1][ds.train_edges[1][:, 0] == u, 1].tolist()
        held = [ds.val_positive[u], ds.test_positive[u]] if u in ds.test_positive else []
        assert sorted(train + held) == sorted(unique)
        assert not set(held) & set(train)
        if u in ds.test_positive:
            assert held == unique[-2:]
    for k in range(2):
        pairs = list(map(tuple, ds.train_edges[k].tolist()))
        assert len(pairs) == len(set(pairs))
    assert ds.eval_users <= set(ds.test_positive)


@settings(max_examples=60, deadline=None)
@given(edges=st.sets(st.tuples(st.integers(0, 4), st.integers(0, 6)), min_size=1, max_size=25),
       seed=st.integers(0, 2**31 - 1))
def test_sampler_never_emits_train_pair(edges, seed):
    ds = from_edges(5, 7, ["buy"], [sorted(edges)], {}, {})
    try:
        triples = sample_bpr_triples(ds, 0, 64, np.random.default_rng(seed))
    except DatasetError:
        full = {u for u in range(5) if sum(1 for e in edges if e[0] == u) == 7}
        assert full
        return
    for t in triples:
        assert (t.user_id, t.pos_item) in edges
        assert (t.user_id, t.neg_item) not in edges
