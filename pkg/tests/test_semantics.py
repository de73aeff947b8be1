import math

import numpy as np
import pandas as pd
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from recbench.models import Recommender, make_model
from recbench.semantics import SemanticSpace, build_semantic_space, sci

from conftest import random_binary


class FixedItemModel(Recommender):
    "Item-item model with a given weight matrix."

    name = "fixed"
    item_item = True

    def __init__(self, w):
        super().__init__()
        self.w = np.asarray(w, dtype=float)
        self.n_items = self.w.shape[0]

    def score(self, histories):
        return np.asarray(self._check_histories(histories) @ self.w)

    def item_weights(self):
        return self.w


class ProbeOnlyModel(FixedItemModel):
    "Same scores, but without exposing weights (forces one-hot probes)."

    item_item = False

    def item_weights(self):
        return None


def random_space(n_items=100, n_tags=30, seed=0):
    rng = np.random.default_rng(seed)
    w = sp.random(n_items, n_tags, density=0.15, random_state=rng, format="lil")
    for i in range(n_items):
        if not w.rows[i]:
            w[i, rng.integers(n_tags)] = 1.0
    return SemanticSpace(sp.csr_matrix(w), np.arange(n_tags).astype(str))


def test_one_tag_item_is_one_hot():
    tags = pd.DataFrame({"item": ["a", "b", "b"], "tag": ["x", "x", "y"]})
    s = build_semantic_space(tags, ["a", "b", "c"])
    row = s.weights[0].toarray()[0]
    assert np.count_nonzero(row) == 1
    assert s.covered.tolist() == [True, True, False]


def test_identical_tag_multisets_cosine_one():
    tags = pd.DataFrame({"item": ["a", "a", "b", "b", "c"], "tag": ["x", "y", "x", "y", "z"]})
    s = build_semantic_space(tags, ["a", "b", "c"])
    assert s.cosine()[0, 1] == pytest.approx(1.0)


def test_tfidf_hand_corpus():
    # item a: x, x, y   item b: y, z   item c: z
    tags = pd.DataFrame({"item": list("aaabbc"), "tag": ["x", "x", "y", "y", "z", "z"]})
    s = build_semantic_space(tags, ["a", "b", "c"])
    w = s.weights.toarray()
    idf_x = 1 + math.log(3 / 1)
    idf_y = 1 + math.log(3 / 2)
    idf_z = 1 + math.log(3 / 2)
    expect = np.array([[2 * idf_x, idf_y, 0], [0, idf_y, idf_z], [0, 0, idf_z]])
    assert s.tags.tolist() == ["x", "y", "z"]
    assert np.allclose(w, expect)
    assert np.allclose(w, [[4.197225, 1.405465, 0], [0, 1.405465, 1.405465], [0, 0, 1.405465]], atol=1e-6)


def test_genome_scores_used_directly():
    tags = pd.DataFrame({"item": ["a", "a", "b"], "tag": ["t1", "t2", "t1"], "relevance": [0.9, 0.1, 0.5]})
    s = build_semantic_space(tags, ["a", "b"])
    assert np.allclose(s.weights.toarray(), [[0.9, 0.1], [0.5, 0.0]])


def test_sci_perfect_and_negated():
    space = random_space(60, 20, seed=1)
    cos = space.cosine()
    assert sci(FixedItemModel(cos), space).value == pytest.approx(1.0)
    assert sci(FixedItemModel(-cos), space).value == pytest.approx(-1.0)
    # one-hot probes give the same answer as reading W
    assert sci(ProbeOnlyModel(cos), space).value == pytest.approx(1.0)


@given(st.floats(0.1, 10), st.floats(-5, 5))
def test_sci_affine_invariance(a, b):
    space = random_space(30, 10, seed=2)
    w = np.random.default_rng(0).random((30, 30))
    base = sci(FixedItemModel(w), space).value
    assert sci(FixedItemModel(a * w + b), space).value == pytest.approx(base, abs=1e-9)
    assert -1 <= base <= 1


def test_sci_random_model_near_zero():
    space = random_space(100, 30, seed=3)
    x = random_binary(50, 100, density=0.1, seed=4)
    vals = []
    for seed in range(5):
        res = sci(make_model("random", seed=seed).fit(x), space)
        assert abs(res.value) < 0.05
        vals.append(res.value)
    assert abs(np.mean(vals)) < 0.05


def test_sci_constant_rows_skipped():
    space = random_space(20, 8, seed=5)
    w = space.cosine()
    w[3] = 1.0
    res = sci(FixedItemModel(w), space)
    assert res.n_skipped >= 1 and res.n_items == 20 - res.n_skipped


def test_sci_no_valid_items():
    space = random_space(10, 4, seed=6)
    with pytest.raises(ValueError):
        sci(FixedItemModel(np.zeros((10, 10))), space)
