"""
Random-walk and graph-filter models on the user-item bipartite graph.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..sparse import as_csr, row_normalize, topk_rows, truncated_svd
from .base import Recommender
from .classical import check_neighbors


def _inv_power(deg: np.ndarray, power: float) -> np.ndarray:
    "``deg ** -power`` with zero degrees mapped to zero."
    out = np.zeros(len(deg), dtype=np.float64)
    pos = deg > 0
    out[pos] = deg[pos] ** -power
    return out


def walk_weights(x, alpha: float) -> np.ndarray:
    """
    Dense item-to-item two-step transition matrix ``P_iu @ P_ui`` with each
    transition probability raised to ``alpha``.  For ``alpha == 1`` the rows
    of items with at least one user sum to one.
    """
    x = as_csr(x)
    p_ui = row_normalize(x)
    p_iu = row_normalize(as_csr(x.T))
    p_ui.data **= alpha
    p_iu.data **= alpha
    return np.asarray((p_iu @ p_ui).todense())


class P3alpha(Recommender):
    """
    Three-step random walk user -> item -> user -> item.

    The walk matrix is truncated to the ``topk`` largest entries per row
    (``neighbors="history"``: each history item keeps its strongest
    destinations) or per column (``neighbors="candidate"``: each candidate
    keeps its strongest sources).
    """

    name = "p3alpha"
    item_item = True

    @classmethod
    def defaults(cls):
        return {"alpha": 1.0, "topk": 100, "neighbors": "history"}

    def _weights(self, x):
        return walk_weights(x, float(self.alpha))

    def fit(self, x, validation=None):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        check_neighbors(self.neighbors)
        self.n_items = x.shape[1]
        w = self._weights(x)
        if self.neighbors == "history":
            self.weights_ = topk_rows(w, int(self.topk))
        else:
            self.weights_ = as_csr(topk_rows(np.ascontiguousarray(w.T), int(self.topk)).T)
        return self

    def score(self, histories):
        h = row_normalize(self._check_histories(histories))
        return np.asarray((h @ self.weights_).todense())

    def item_weights(self):
        return self.weights_


class RP3beta(P3alpha):
    """
    P3alpha with column ``j`` of the walk matrix divided by
    ``popularity(j) ** beta`` before the ``topk`` truncation.
    """

    name = "rp3beta"

    @classmethod
    def defaults(cls):
        return {"alpha": 1.0, "beta": 0.5, "topk": 100, "neighbors": "history"}

    def _weights(self, x):
        w = walk_weights(x, float(self.alpha))
        pop = np.bincount(as_csr(x).indices, minlength=x.shape[1]).astype(np.float64)
        return w * _inv_power(pop, float(self.beta))[None, :]


class GFCF(Recommender):
    """
    Graph-filter collaborative filtering.

    With ``R = D_u^-1/2 X D_i^-1/2`` the item filter is

        F = D_i^-1/2 (R^T R + filter_alpha * V V^T) D_i^1/2

    where ``V`` holds the top ``rank`` right singular vectors of ``R``
    (the ideal low-pass term).  Scores are ``h @ F``.
    """

    name = "gfcf"
    item_item = True

    @classmethod
    def defaults(cls):
        return {"filter_alpha": 0.3, "rank": 256, "seed": 0}

    def fit(self, x, validation=None):
        x = as_csr(x)
        alpha = float(self.filter_alpha)
        rank = int(self.rank)
        if alpha > 0 and rank <= 0:
            raise ValueError("low-pass rank required")
        self.n_items = x.shape[1]
        du = np.diff(x.indptr).astype(np.float64)
        di = np.bincount(x.indices, minlength=x.shape[1]).astype(np.float64)
        r = as_csr(sp.diags(_inv_power(du, 0.5)) @ x @ sp.diags(_inv_power(di, 0.5)))
        core = np.asarray((r.T @ r).todense())
        if alpha > 0:
            rank = min(rank, *r.shape)
            v = truncated_svd(r, rank, seed=int(self.seed)).col_factors
            core += alpha * (v @ v.T)
        left = _inv_power(di, 0.5)
        right = np.sqrt(di)
        self.weights_ = left[:, None] * core * right[None, :]
        return self

    def score(self, histories):
        h = self._check_histories(histories)
        return np.asarray(h @ self.weights_)

    def item_weights(self):
        return self.weights_
