"""
Factorization models.  New users are folded in against the fitted item
factors, so neither model needs the test users at fit time.
"""

from __future__ import annotations

import logging

import numpy as np

from ..sparse import as_csr, truncated_svd
from .base import Recommender

_log = logging.getLogger(__name__)

#: users per batched normal-equation solve
SOLVE_CHUNK = 512


class PureSVD(Recommender):
    """
    Truncated SVD of the training matrix; a history ``h`` is scored as
    ``h V V^T`` with ``V`` the top right singular vectors.
    """

    name = "puresvd"

    @classmethod
    def defaults(cls):
        return {"rank": 50, "seed": 0}

    def fit(self, x, validation=None):
        x = as_csr(x)
        self.n_items = x.shape[1]
        rank = min(int(self.rank), *x.shape)
        self.factors_ = truncated_svd(x, rank, seed=int(self.seed))
        self.item_factors_ = self.factors_.col_factors
        return self

    def fold_in(self, histories) -> np.ndarray:
        h = self._check_histories(histories)
        return np.asarray(h @ self.item_factors_)

    def score(self, histories):
        return self.fold_in(histories) @ self.item_factors_.T


def _ridge_step(x, fixed, reg, alpha):
    """
    Solve every row's weighted ridge problem against ``fixed`` factors.

    With binary ``x``, confidence ``c = 1 + alpha * x`` and preference
    ``p = x``, row ``u`` solves

        (F^T F + alpha * F_u^T F_u + reg * I) z_u = (1 + alpha) * F_u^T 1

    where ``F_u`` holds the rows of ``fixed`` for the items in row ``u``.
    """
    n_rows = x.shape[0]
    rank = fixed.shape[1]
    base = fixed.T @ fixed + reg * np.eye(rank)
    out = np.zeros((n_rows, rank))
    for start in range(0, n_rows, SOLVE_CHUNK):
        stop = min(start + SOLVE_CHUNK, n_rows)
        lhs = np.broadcast_to(base, (stop - start, rank, rank)).copy()
        rhs = np.zeros((stop - start, rank))
        for j, u in enumerate(range(start, stop)):
            idx = x.indices[x.indptr[u] : x.indptr[u + 1]]
            if len(idx) == 0:
                continue
            fu = fixed[idx]
            lhs[j] += alpha * (fu.T @ fu)
            rhs[j] = (1.0 + alpha) * fu.sum(axis=0)
        out[start:stop] = np.linalg.solve(lhs, rhs[..., None])[..., 0]
    return out


def als_objective(x, users, items, reg, alpha) -> float:
    """
    Weighted squared loss plus ridge penalty:
    ``sum_ui c_ui (p_ui - u_u . v_i)^2 + reg (|U|^2 + |V|^2)``.
    """
    x = as_csr(x)
    # all cells as if unobserved, then correct the observed ones
    total = float(np.sum((users.T @ users) * (items.T @ items)))
    rows = np.repeat(np.arange(x.shape[0]), np.diff(x.indptr))
    pred = np.einsum("ij,ij->i", users[rows], items[x.indices])
    total += float(np.sum((1.0 + alpha) * (1.0 - pred) ** 2 - pred**2))
    return total + reg * float(np.sum(users**2) + np.sum(items**2))


class ALS(Recommender):
    """
    Implicit-feedback weighted matrix factorization fitted by alternating
    ridge solves, with linear confidence ``1 + alpha * x``.
    """

    name = "als"

    @classmethod
    def defaults(cls):
        return {"rank": 64, "reg": 1.0, "alpha": 10.0, "iters": 15, "seed": 0}

    def fit(self, x, validation=None):
        if self.reg <= 0:
            raise ValueError("ALS needs reg > 0")
        x = as_csr(x)
        xt = as_csr(x.T)
        self.n_items = x.shape[1]
        rank = int(self.rank)
        rng = np.random.default_rng(int(self.seed))
        users = rng.uniform(-0.01, 0.01, (x.shape[0], rank))
        items = rng.uniform(-0.01, 0.01, (x.shape[1], rank))
        reg, alpha = float(self.reg), float(self.alpha)
        self.objective_ = []
        for _ in range(int(self.iters)):
            users = _ridge_step(x, items, reg, alpha)
            items = _ridge_step(xt, users, reg, alpha)
            self.objective_.append(als_objective(x, users, items, reg, alpha))
        self.user_factors_ = users
        self.item_factors_ = items
        return self

    def fold_in(self, histories) -> np.ndarray:
        "One user-side ridge solve per history against the fitted item factors."
        h = self._check_histories(histories)
        return _ridge_step(h, self.item_factors_, float(self.reg), float(self.alpha))

    def score(self, histories):
        return self.fold_in(histories) @ self.item_factors_.T
