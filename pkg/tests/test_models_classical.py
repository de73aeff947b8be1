import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from recbench.metrics import top_k_lists
from recbench.models import MODELS, ItemKNN, PopularityRecommender, RandomRecommender, UserKNN, make_model

from conftest import random_binary

HAND = np.array([[1, 1, 0], [1, 0, 1], [0, 1, 1], [1, 1, 1]], dtype=float)


def dense_cos(a, b):
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.nan_to_num((a @ b.T) / np.outer(na, nb))


def test_make_model_registry():
    assert len(MODELS) == 13
    with pytest.raises(ValueError):
        make_model("nope")
    with pytest.raises(TypeError):
        make_model("ease", lam=3)


def test_unfitted_and_shape_errors():
    with pytest.raises(RuntimeError):
        PopularityRecommender().score(sp.csr_matrix((1, 3)))
    m = PopularityRecommender().fit(sp.csr_matrix(HAND))
    with pytest.raises(ValueError):
        m.score(sp.csr_matrix((1, 4)))


def test_popularity_counts_and_tie_break():
    x = sp.csr_matrix(np.array([[1, 0, 1], [0, 1, 1], [1, 1, 0]], dtype=float))
    m = PopularityRecommender().fit(x)
    assert m.counts_.tolist() == [2, 2, 2]
    top = top_k_lists(m.score(sp.csr_matrix((1, 3))), None, 3)
    assert top[0].tolist() == [0, 1, 2]
    s = m.score(x)
    assert np.all(s == s[0])


def test_random_seeded():
    x = sp.csr_matrix(HAND)
    a = RandomRecommender(seed=4).fit(x).score(x)
    b = RandomRecommender(seed=4).fit(x).score(x)
    c = RandomRecommender(seed=5).fit(x).score(x)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert np.all((a >= 0) & (a < 1))


def test_itemknn_full_k_matches_dense_cosine():
    m = ItemKNN(k=2, shrinkage=0.0).fit(sp.csr_matrix(HAND))
    ref = dense_cos(HAND.T, HAND.T)
    np.fill_diagonal(ref, 0)
    assert np.allclose(m.weights_.toarray(), ref)
    h = sp.csr_matrix(np.array([[1, 0, 0]], dtype=float))
    assert np.allclose(m.score(h), h.toarray() @ ref)


def test_itemknn_single_user():
    m = ItemKNN(k=10).fit(sp.csr_matrix(np.array([[1, 1, 1, 0]], dtype=float)))
    w = m.weights_.toarray()
    assert np.allclose(w[:3, :3], 1 - np.eye(3))
    assert np.all(w[3] == 0) and np.all(w[:, 3] == 0)


def test_itemknn_normalize_rows():
    m = ItemKNN(k=2, normalize=True).fit(sp.csr_matrix(HAND))
    assert np.allclose(m.weights_.toarray().sum(axis=1), 1.0)


def test_userknn_matches_dense_oracle():
    train = np.array([[1, 1, 0, 0], [0, 1, 1, 0], [1, 0, 0, 1]], dtype=float)
    q = np.array([[1, 1, 1, 0], [0, 0, 0, 1]], dtype=float)
    m = UserKNN(k=2, shrinkage=0.5).fit(sp.csr_matrix(train))
    dots = q @ train.T
    sims = dots / (np.outer(np.linalg.norm(q, axis=1), np.linalg.norm(train, axis=1)) + 0.5)
    for r in range(2):
        keep = np.argsort(-sims[r], kind="stable")[:2]
        drop = np.setdiff1d(np.arange(3), keep)
        sims[r, drop] = 0
    assert np.allclose(m.score(sp.csr_matrix(q)), sims @ train)


def test_userknn_identical_user_dominates():
    train = random_binary(20, 15, density=0.3, seed=9)
    m = UserKNN(k=1).fit(train)
    s = m.score(train[4])
    owned = train[4].indices
    assert np.all(s[0, owned] > 0)
    assert np.allclose(s[0], train[4].toarray()[0])


@given(st.sampled_from(sorted(MODELS)), st.integers(0, 500))
def test_masked_items_never_recommended(name, seed):
    x = random_binary(25, 20, density=0.3, seed=seed)
    params = {"epochs": 2} if name in ("multidae", "multivae") else {}
    if name in ("puresvd", "als", "gfcf"):
        params["rank"] = 4
    model = make_model(name, **params).fit(x)
    tops = top_k_lists(model.score(x), x, 5)
    for u in range(x.shape[0]):
        assert not set(tops[u]) & set(x[u].indices)


def test_knn_scores_nonnegative(small):
    for m in (ItemKNN(k=5, shrinkage=2.0), UserKNN(k=5, shrinkage=2.0)):
        assert np.all(m.fit(small).score(small) >= 0)
