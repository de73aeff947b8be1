"""
Unpersonalized baselines and neighborhood models.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..sparse import as_csr, cosine_topk, row_normalize, shrunk_cosine, topk_rows
from .base import Recommender


class RandomRecommender(Recommender):
    """
    Scores every item with i.i.d. uniform noise, i.e. a random permutation
    per user.  Scores depend only on ``seed`` and the number of rows scored.
    """

    name = "random"

    @classmethod
    def defaults(cls):
        return {"seed": 0}

    def fit(self, x, validation=None):
        self.n_items = x.shape[1]
        return self

    def score(self, histories):
        h = self._check_histories(histories)
        rng = np.random.default_rng(self.seed)
        return rng.random((h.shape[0], self.n_items))


class PopularityRecommender(Recommender):
    "Scores each item by its training interaction count."

    name = "popularity"

    def fit(self, x, validation=None):
        self.n_items = x.shape[1]
        self.counts_ = np.bincount(as_csr(x).indices, minlength=self.n_items).astype(np.float64)
        return self

    def score(self, histories):
        h = self._check_histories(histories)
        return np.tile(self.counts_, (h.shape[0], 1))


NEIGHBORS = ("history", "candidate")


def check_neighbors(value: str):
    if value not in NEIGHBORS:
        raise ValueError(f"neighbors must be one of {NEIGHBORS}, got {value!r}")


class ItemKNN(Recommender):
    """
    Item-based neighborhood model scoring ``h @ W`` with shrunk-cosine
    weights ``W``.

    ``neighbors`` picks which neighborhoods are kept: ``"history"`` keeps
    the ``k`` most similar items of each item (row ``i`` of ``W``), so a
    history item votes for its own neighbors; ``"candidate"`` keeps the
    ``k`` most similar items of each candidate (column ``j`` of ``W``), so
    a candidate is scored from its neighbors found in the history.  With
    ``normalize`` each kept neighborhood's weights sum to one.
    """

    name = "itemknn"
    item_item = True

    @classmethod
    def defaults(cls):
        return {"k": 100, "shrinkage": 0.0, "normalize": False, "neighbors": "history"}

    def fit(self, x, validation=None):
        check_neighbors(self.neighbors)
        x = as_csr(x)
        self.n_items = x.shape[1]
        if x.nnz == 0:
            self.weights_ = sp.csr_matrix((self.n_items, self.n_items))
            return self
        # the similarity is symmetric, so each item's top-k row is also its
        # top-k column after transposition
        w = cosine_topk(x, axis="cols", shrinkage=float(self.shrinkage), k=int(self.k))
        if self.normalize:
            w = row_normalize(w)
        self.weights_ = w if self.neighbors == "history" else as_csr(w.T)
        return self

    def score(self, histories):
        h = self._check_histories(histories)
        return np.asarray((h @ self.weights_).todense())

    def item_weights(self):
        return self.weights_


class UserKNN(Recommender):
    """
    User-based neighborhood model evaluated at query time: each query
    history is compared against every training row, the ``k`` most similar
    training users are kept, and scores are the similarity-weighted sum of
    their rows.
    """

    name = "userknn"

    @classmethod
    def defaults(cls):
        return {"k": 100, "shrinkage": 0.0}

    def fit(self, x, validation=None):
        self.train_ = as_csr(x)
        self.n_items = x.shape[1]
        self.norms_ = np.sqrt(np.asarray(self.train_.multiply(self.train_).sum(axis=1)).ravel())
        self._train_t = as_csr(self.train_.T)
        return self

    def similarities(self, histories) -> sp.csr_matrix:
        "Top-``k`` query-to-training-user similarity matrix."
        h = self._check_histories(histories)
        qnorm = np.sqrt(np.asarray(h.multiply(h).sum(axis=1)).ravel())
        dots = (h @ self._train_t).toarray()
        sims = shrunk_cosine(dots, qnorm, self.norms_, float(self.shrinkage))
        return topk_rows(sims, int(self.k))

    def score(self, histories):
        sims = self.similarities(histories)
        return np.asarray((sims @ self.train_).todense())
