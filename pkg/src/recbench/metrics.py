"""
Ranking, utility, diversity and confidence-interval computations.

All rankings order candidates by descending score with ties broken by the
smaller item index; masked items are not candidates.  Ranks are 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

Z_95 = 1.96
#: rows ranked per chunk in the vectorized helpers
CHUNK = 512


class RankedList:
    """
    Full ranking of one user's candidate items.

    ``order`` lists candidate item indices best-first; :meth:`rank` returns
    the 1-based position of an item.
    """

    def __init__(self, order):
        self.order = np.asarray(order, dtype=np.int64)
        self._pos = {int(i): n + 1 for n, i in enumerate(self.order)}

    @classmethod
    def from_scores(cls, scores, masked=()) -> "RankedList":
        scores = np.asarray(scores, dtype=np.float64)
        cand = np.setdiff1d(np.arange(len(scores)), np.asarray(list(masked), dtype=np.int64))
        order = cand[np.argsort(-scores[cand], kind="stable")]
        return cls(order)

    def __len__(self):
        return len(self.order)

    def top(self, k: int) -> np.ndarray:
        return self.order[:k]

    def rank(self, item: int) -> int:
        try:
            return self._pos[int(item)]
        except KeyError:
            raise ValueError(f"item {item} is not a candidate") from None

    def ranks(self, items) -> np.ndarray:
        return np.array([self.rank(i) for i in items], dtype=np.int64)


def recall_at_k(ranked: RankedList, targets, k: int) -> float:
    "Fraction of ``targets`` in the top ``k`` of ``ranked``."
    if k < 1:
        raise ValueError("k must be at least 1")
    targets = np.asarray(targets)
    if len(targets) == 0:
        raise ValueError("no targets")
    return float(np.mean(ranked.ranks(targets) <= k))


def hitrate_at_k(ranked: RankedList, target: int, k: int) -> int:
    return int(recall_at_k(ranked, [target], k))


def mean_ranks(ranked: RankedList, targets) -> float:
    return float(np.mean(ranked.ranks(targets)))


def _masked(scores: np.ndarray, mask) -> np.ndarray:
    s = np.array(scores, dtype=np.float64)
    if mask is not None:
        m = sp.csr_matrix(mask)
        rows = np.repeat(np.arange(m.shape[0]), np.diff(m.indptr))
        s[rows, m.indices] = -np.inf
    return s


def target_ranks(scores: np.ndarray, mask, targets) -> np.ndarray:
    """
    Rank of ``targets[u]`` among row ``u``'s unmasked candidates.  ``mask``
    is a sparse matrix (or ``None``) whose stored entries are excluded.
    """
    scores = np.asarray(scores)
    targets = np.asarray(targets, dtype=np.int64)
    out = np.empty(len(targets), dtype=np.int64)
    idx = np.arange(scores.shape[1])
    mask = sp.csr_matrix(mask) if mask is not None else None
    for start in range(0, len(targets), CHUNK):
        stop = min(start + CHUNK, len(targets))
        s = _masked(scores[start:stop], None if mask is None else mask[start:stop])
        t = targets[start:stop]
        ts = s[np.arange(stop - start), t]
        if np.any(np.isneginf(ts)):
            raise ValueError("target item is masked")
        ahead = (s > ts[:, None]) | ((s == ts[:, None]) & (idx[None, :] < t[:, None]))
        out[start:stop] = 1 + ahead.sum(axis=1)
    return out


def full_ranks(scores: np.ndarray, mask=None) -> np.ndarray:
    """
    Rank of every item in each row (masked items get rank 0).
    """
    scores = np.asarray(scores)
    out = np.zeros(scores.shape, dtype=np.int64)
    mask = sp.csr_matrix(mask) if mask is not None else None
    for start in range(0, scores.shape[0], CHUNK):
        stop = min(start + CHUNK, scores.shape[0])
        s = _masked(scores[start:stop], None if mask is None else mask[start:stop])
        order = np.argsort(-s, axis=1, kind="stable")
        r = np.empty_like(order)
        np.put_along_axis(r, order, np.arange(1, s.shape[1] + 1)[None, :].repeat(stop - start, 0), axis=1)
        r[np.isneginf(s)] = 0
        out[start:stop] = r
    return out


def top_k_lists(scores: np.ndarray, mask, k: int) -> np.ndarray:
    "Top ``k`` unmasked items per row, best first."
    scores = np.asarray(scores)
    mask = sp.csr_matrix(mask) if mask is not None else None
    out = []
    for start in range(0, scores.shape[0], CHUNK):
        stop = min(start + CHUNK, scores.shape[0])
        s = _masked(scores[start:stop], None if mask is None else mask[start:stop])
        out.append(np.argsort(-s, axis=1, kind="stable")[:, :k])
    return np.vstack(out) if out else np.zeros((0, k), dtype=np.int64)


def exposure_counts(lists: np.ndarray, n_items: int) -> np.ndarray:
    "How often each item appears across a set of top-n lists."
    return np.bincount(np.asarray(lists).ravel(), minlength=n_items)


def _probabilities(counts) -> np.ndarray:
    c = np.asarray(counts, dtype=np.float64)
    if c.ndim != 1 or len(c) == 0:
        raise ValueError("need a non-empty 1-d count vector")
    if np.any(c < 0):
        raise ValueError("counts must be non-negative")
    total = c.sum()
    if total <= 0:
        raise ValueError("counts sum to zero")
    return c / total


def gini_index(counts, n_items: int | None = None) -> float:
    """
    Gini index of item exposure.  ``counts`` may be shorter than the
    catalog; missing items count as never recommended.
    """
    p = _probabilities(counts)
    n = n_items if n_items is not None else len(p)
    if n < len(p):
        raise ValueError("n_items smaller than count vector")
    p = np.sort(np.concatenate([p, np.zeros(n - len(p))]))
    if n == 1:
        return 0.0
    j = np.arange(1, n + 1)
    # clip rounding residue on near-uniform inputs
    return float(np.clip(np.sum((2 * j - n - 1) * p) / (n - 1), 0.0, 1.0))


def shannon_entropy(counts) -> float:
    "Natural-log entropy of the exposure distribution (0 log 0 = 0)."
    p = _probabilities(counts)
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def ci95_proportion(p: float, n: float) -> float:
    "Normal-approximation half-width for a proportion measured on ``n`` users."
    return float(Z_95 * np.sqrt(max(p * (1.0 - p), 0.0) / n))


def ci95_mean(values, n: float) -> float:
    "Half-width ``1.96 s / sqrt(n)`` with ``s`` the sample standard deviation."
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        return 0.0
    return float(Z_95 * np.std(values, ddof=1) / np.sqrt(n))


#: metrics reported as proportions (binomial CI)
PROPORTIONS = {"HR@50", "HR@10"}
#: direction of each metric for ranking: True if larger is better
HIGHER_IS_BETTER = {
    "HR@50": True,
    "HR@10": True,
    "Recall@50": True,
    "MeanRanks": False,
    "Gini": False,
    "Entropy": True,
    "SCI": True,
}


@dataclass(frozen=True)
class MetricReport:
    model: str
    dataset: str
    protocol: str
    metric: str
    value: float
    ci95: float
    per_fold: tuple[float, ...] = field(default_factory=tuple)
    n_users: int = 0

    def as_row(self) -> dict:
        row = {
            "model": self.model,
            "dataset": self.dataset,
            "protocol": self.protocol,
            "metric": self.metric,
            "value": round(self.value, 6),
            "ci95": round(self.ci95, 6),
            "n_users": self.n_users,
        }
        for f, v in enumerate(self.per_fold):
            row[f"fold{f}"] = round(v, 6)
        return row


def summarize(
    values, folds, metric: str, *, model: str, dataset: str, protocol: str, n_folds: int = 5
) -> MetricReport:
    """
    Pool per-user metric values into a report.  The CI uses one fold's
    worth of users (``n / n_folds``), matching how per-round results are
    usually reported.
    """
    values = np.asarray(values, dtype=np.float64)
    folds = np.asarray(folds)
    if len(values) == 0:
        raise ValueError("no users to summarize")
    value = float(values.mean())
    per_fold = tuple(float(values[folds == f].mean()) for f in range(n_folds) if np.any(folds == f))
    n_fold = len(values) / n_folds
    if metric in PROPORTIONS:
        ci = ci95_proportion(value, n_fold)
    else:
        ci = ci95_mean(values, n_fold)
    return MetricReport(model, dataset, protocol, metric, value, ci, per_fold, len(values))
