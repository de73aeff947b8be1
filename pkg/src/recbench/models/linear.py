"""
Item-item linear models: Ease (closed-form ridge with a zero-diagonal
constraint) and SLIM (elastic net per item column).
"""

from __future__ import annotations

import logging

import numba
import numpy as np
import scipy.sparse as sp

from ..sparse import as_csr, spd_solve
from .base import Recommender

_log = logging.getLogger(__name__)

#: largest catalog for which Ease keeps its dense weight matrix
EASE_MAX_ITEMS = 40_000


def gram(x) -> np.ndarray:
    x = as_csr(x)
    return np.asarray((x.T @ x).todense(), dtype=np.float64)


def ease_weights(g: np.ndarray, reg: float) -> np.ndarray:
    """
    Closed-form Ease weights from the item Gram matrix.

    With ``P = (G + reg I)^-1`` the solution is ``B = I - P diag(1/diag(P))``,
    which has an exactly zero diagonal.
    """
    n = g.shape[0]
    lhs = g + reg * np.eye(n)
    p = spd_solve(lhs, np.eye(n))
    b = -p / np.diag(p)[None, :]
    np.fill_diagonal(b, 0.0)
    return b


class Ease(Recommender):
    name = "ease"
    item_item = True

    @classmethod
    def defaults(cls):
        return {"reg": 500.0}

    def fit(self, x, validation=None):
        if self.reg <= 0:
            raise ValueError("Ease needs reg > 0")
        n = x.shape[1]
        if n > EASE_MAX_ITEMS:
            raise MemoryError(f"Ease keeps a dense {n}x{n} matrix; limit is {EASE_MAX_ITEMS} items")
        self.n_items = n
        self.weights_ = ease_weights(gram(x), float(self.reg))
        return self

    def score(self, histories):
        h = self._check_histories(histories)
        return np.asarray(h @ self.weights_)

    def item_weights(self):
        return self.weights_


@numba.njit(cache=True)
def _cd_sweep(g, target, w, gw, coords, l1, l2, positive):
    """
    One cyclic pass of coordinate descent over ``coords``.  ``g`` is the
    Gram matrix restricted to the candidate coordinates and ``gw`` caches
    ``g @ w``; returns the largest coefficient change.
    """
    n_c = len(w)
    biggest = 0.0
    for a in coords:
        k_diag = g[a, a] + l2
        if k_diag <= 0.0:
            continue
        rho = target[a] - gw[a] + g[a, a] * w[a]
        if positive:
            new = max(rho - l1, 0.0) / k_diag
        else:
            mag = max(abs(rho) - l1, 0.0)
            new = mag / k_diag if rho >= 0 else -mag / k_diag
        delta = new - w[a]
        if delta != 0.0:
            for b in range(n_c):
                gw[b] += delta * g[a, b]
            w[a] = new
            if abs(delta) > biggest:
                biggest = abs(delta)
    return biggest


@numba.njit(cache=True)
def _slim_column(g, target, l1, l2, max_iter, tol, positive):
    """
    Minimize ``1/2 |x_j - X w|^2 + l1 |w|_1 + l2/2 |w|^2`` over candidate
    coordinates, given the Gram matrix ``g`` on those coordinates and
    ``target = X^T x_j`` restricted to them.

    Full sweeps alternate with sweeps restricted to the non-zero
    coordinates; the fit stops once a full sweep changes no coefficient by
    more than ``tol``.
    """
    n_c = len(target)
    w = np.zeros(n_c)
    gw = np.zeros(n_c)
    everything = np.arange(n_c)
    for _ in range(max_iter):
        if _cd_sweep(g, target, w, gw, everything, l1, l2, positive) < tol:
            break
        for _ in range(max_iter):
            active = np.flatnonzero(w)
            if len(active) == 0:
                break
            if _cd_sweep(g, target, w, gw, active, l1, l2, positive) < tol:
                break
    return w


@numba.njit(cache=True)
def _gather(g, cand):
    n_c = len(cand)
    out = np.empty((n_c, n_c))
    for a in range(n_c):
        for b in range(n_c):
            out[a, b] = g[cand[a], cand[b]]
    return out


def slim_weights(g, l1, l2, max_iter=100, tol=1e-4, positive=True) -> sp.csr_matrix:
    """
    Column ``j`` of the result regresses item ``j`` on all other items with
    the elastic-net penalty; the ``(j, j)`` coefficient is pinned to zero.
    """
    n = g.shape[0]
    rows, cols, vals = [], [], []
    for j in range(n):
        if positive:
            # with w >= 0 and G >= 0 an item that never co-occurs with j
            # cannot get a positive coefficient
            cand = np.flatnonzero(g[:, j])
        else:
            cand = np.arange(n)
        cand = cand[cand != j]
        if len(cand) == 0:
            continue
        g_sub = _gather(g, cand)
        w = _slim_column(g_sub, g[cand, j].copy(), l1, l2, max_iter, tol, positive)
        nz = w != 0
        rows.append(cand[nz])
        cols.append(np.full(nz.sum(), j))
        vals.append(w[nz])
    if not rows:
        return sp.csr_matrix((n, n))
    w = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return as_csr(w)


class SLIM(Recommender):
    """
    Sparse linear method: an elastic-net regression per item column fitted
    by cyclic coordinate descent on the Gram matrix.  ``positive`` keeps the
    non-negativity constraint of the original formulation.
    """

    name = "slim"
    item_item = True

    @classmethod
    def defaults(cls):
        return {"l1": 1.0, "l2": 10.0, "max_iter": 100, "tol": 1e-4, "positive": True}

    def fit(self, x, validation=None):
        if self.l1 < 0 or self.l2 < 0:
            raise ValueError("SLIM penalties must be non-negative")
        self.n_items = x.shape[1]
        self.weights_ = slim_weights(
            gram(x), float(self.l1), float(self.l2), int(self.max_iter),
            float(self.tol), bool(self.positive),
        )
        _log.debug("SLIM learned %d weights", self.weights_.nnz)
        return self

    def score(self, histories):
        h = self._check_histories(histories)
        return np.asarray((h @ self.weights_).todense())

    def item_weights(self):
        return self.weights_
