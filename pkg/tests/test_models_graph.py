import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from recbench.models import GFCF, P3alpha, RP3beta

from conftest import random_binary


def markov(x):
    "Dense item -> user -> item transition probabilities."
    p_ui = x / x.sum(axis=1, keepdims=True)
    p_iu = x.T / x.T.sum(axis=1, keepdims=True)
    return p_iu @ p_ui


def test_p3alpha_alpha_one_is_markov_chain():
    x = random_binary(8, 6, density=0.4, seed=1)
    m = P3alpha(alpha=1.0, topk=6).fit(x)
    ref = markov(x.toarray())
    assert np.allclose(m.weights_.toarray(), ref, atol=1e-8)
    assert np.allclose(ref.sum(axis=1), 1.0)
    h = x[:3]
    hn = h.toarray() / h.toarray().sum(axis=1, keepdims=True)
    assert np.allclose(m.score(h), hn @ ref, atol=1e-8)


def test_p3alpha_single_user_single_item():
    m = P3alpha(alpha=1.0, topk=1).fit(sp.csr_matrix(np.array([[1.0]])))
    assert m.weights_.toarray().tolist() == [[1.0]]


def test_p3alpha_alpha_on_transitions():
    x = random_binary(10, 7, density=0.4, seed=2).toarray()
    m = P3alpha(alpha=0.5, topk=7).fit(sp.csr_matrix(x))
    p_ui = (x / x.sum(axis=1, keepdims=True)) ** 0.5
    p_iu = (x.T / x.T.sum(axis=1, keepdims=True)) ** 0.5
    assert np.allclose(m.weights_.toarray(), p_iu @ p_ui)


def test_p3alpha_topk_and_alpha_guard(small):
    m = P3alpha(topk=3).fit(small)
    assert np.all(np.diff(m.weights_.indptr) <= 3)
    with pytest.raises(ValueError):
        P3alpha(alpha=0).fit(small)


def test_rp3beta_beta_zero_is_p3alpha(small):
    a = P3alpha(alpha=0.8, topk=10).fit(small).weights_.toarray()
    b = RP3beta(alpha=0.8, beta=0.0, topk=10).fit(small).weights_.toarray()
    assert np.allclose(a, b)


def test_rp3beta_beta_one_oracle():
    x = random_binary(9, 6, density=0.4, seed=3).toarray()
    m = RP3beta(alpha=1.0, beta=1.0, topk=6).fit(sp.csr_matrix(x))
    ref = markov(x) / x.sum(axis=0)[None, :]
    assert np.allclose(m.weights_.toarray(), ref, atol=1e-8)


@given(st.integers(0, 1000), st.floats(0.1, 2.0), st.floats(0, 1))
def test_walk_scores_nonnegative(seed, alpha, beta):
    x = random_binary(12, 9, density=0.3, seed=seed)
    for m in (P3alpha(alpha=alpha, topk=4), RP3beta(alpha=alpha, beta=beta, topk=4)):
        assert np.all(m.fit(x).score(x) >= 0)


def dense_gfcf_linear(x):
    du = x.sum(axis=1)
    di = x.sum(axis=0)
    r = x / np.sqrt(du)[:, None] / np.sqrt(di)[None, :]
    return np.diag(di**-0.5) @ (r.T @ r) @ np.diag(di**0.5)


def test_gfcf_linear_filter_oracle():
    x = random_binary(6, 5, density=0.5, seed=4).toarray()
    m = GFCF(filter_alpha=0.0, rank=0).fit(sp.csr_matrix(x))
    assert np.allclose(m.weights_, dense_gfcf_linear(x), atol=1e-8)


def test_gfcf_low_pass_term():
    x = random_binary(20, 12, density=0.3, seed=5).toarray()
    m = GFCF(filter_alpha=0.4, rank=4).fit(sp.csr_matrix(x))
    du, di = x.sum(axis=1), x.sum(axis=0)
    r = x / np.sqrt(du)[:, None] / np.sqrt(di)[None, :]
    v = np.linalg.svd(r)[2][:4].T
    ref = dense_gfcf_linear(x) + 0.4 * np.diag(di**-0.5) @ (v @ v.T) @ np.diag(di**0.5)
    assert np.allclose(m.weights_, ref, atol=1e-8)


def test_gfcf_rank_required(small):
    with pytest.raises(ValueError, match="low-pass rank required"):
        GFCF(filter_alpha=0.5, rank=0).fit(small)


@given(st.integers(0, 1000))
def test_gfcf_linear_in_history(seed):
    x = random_binary(15, 10, density=0.3, seed=seed)
    m = GFCF(filter_alpha=0.3, rank=3).fit(x)
    h1, h2 = x[[0]], x[[1]]
    assert np.allclose(m.score(h1 + h2), m.score(h1) + m.score(h2))
