"""
Item semantic vectors and the semantic coherence probe, which correlates a
model's item-to-item relatedness with tag-based similarity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .sparse import as_csr

_log = logging.getLogger(__name__)

#: one-hot probe users scored per batch
PROBE_BATCH = 512


def _l2_rows(m) -> sp.csr_matrix:
    norms = np.sqrt(np.asarray(m.multiply(m).sum(axis=1)).ravel())
    inv = np.zeros_like(norms)
    np.divide(1.0, norms, out=inv, where=norms > 0)
    return as_csr(sp.diags(inv) @ m)


@dataclass
class SemanticSpace:
    """
    Item-by-tag weights aligned with an interaction matrix's item indices.

    Rows of items without any tag are all zero and flagged as uncovered.
    """

    weights: sp.csr_matrix
    tags: np.ndarray

    def __post_init__(self):
        self.weights = sp.csr_matrix(self.weights, dtype=np.float64)
        if self.weights.shape[1] != len(self.tags):
            raise ValueError("tag vocabulary does not match weight columns")

    @property
    def n_items(self) -> int:
        return self.weights.shape[0]

    @property
    def covered(self) -> np.ndarray:
        return np.diff(self.weights.indptr) > 0

    def cosine(self, items=None) -> np.ndarray:
        "Dense cosine similarity between the rows of ``items`` (default: covered items)."
        if items is None:
            items = np.flatnonzero(self.covered)
        w = _l2_rows(self.weights[items])
        return np.asarray((w @ w.T).todense())


def build_semantic_space(tags: pd.DataFrame, item_ids, *, genome: bool | None = None) -> SemanticSpace:
    """
    Build item vectors from tag data.

    ``tags`` has ``item`` and ``tag`` columns.  If it also has a
    ``relevance`` column (genome-style scores) the scores are used as the
    weights directly; otherwise every row is one tag application and the
    weights are TF-IDF: raw tag count times ``1 + log(n / df)`` where ``n``
    is the number of tagged items and ``df`` the number of items carrying
    the tag.  ``item_ids`` maps matrix column to raw item id; tag rows for
    other items are dropped.
    """
    if genome is None:
        genome = "relevance" in tags.columns
    item_ids = pd.Index(item_ids)
    pos = item_ids.get_indexer(tags["item"])
    frame = tags.assign(_pos=pos)
    frame = frame[frame["_pos"] >= 0]
    vocab, tag_codes = np.unique(frame["tag"].astype(str).to_numpy(), return_inverse=True)
    rows = frame["_pos"].to_numpy()
    if genome:
        vals = frame["relevance"].to_numpy(np.float64)
        w = sp.csr_matrix((vals, (rows, tag_codes)), shape=(len(item_ids), len(vocab)))
        w.sum_duplicates()
    else:
        counts = sp.csr_matrix(
            (np.ones(len(rows)), (rows, tag_codes)), shape=(len(item_ids), len(vocab))
        )
        counts.sum_duplicates()
        n = max(int(np.sum(np.diff(counts.indptr) > 0)), 1)
        df = np.bincount(counts.indices, minlength=len(vocab))
        idf = 1.0 + np.log(n / np.maximum(df, 1))
        w = sp.csr_matrix(counts @ sp.diags(idf))
    w.eliminate_zeros()
    space = SemanticSpace(w, vocab)
    _log.info("semantic space: %d/%d items covered, %d tags",
              space.covered.sum(), len(item_ids), len(vocab))
    return space


@dataclass(frozen=True)
class SCIResult:
    value: float
    n_items: int
    n_skipped: int

    def __float__(self):
        return self.value


def _relatedness(model, items: np.ndarray, n_items: int) -> np.ndarray:
    "Model relatedness scores for each probe item, one row per item."
    w = model.item_weights() if model.item_item else None
    if w is not None:
        w = w[items]
        return np.asarray(w.todense()) if sp.issparse(w) else np.asarray(w)
    out = np.empty((len(items), n_items))
    for start in range(0, len(items), PROBE_BATCH):
        batch = items[start : start + PROBE_BATCH]
        probe = sp.csr_matrix(
            (np.ones(len(batch)), (np.arange(len(batch)), batch)), shape=(len(batch), n_items)
        )
        out[start : start + len(batch)] = model.score(probe)
    return out


def _rowwise_pearson(a: np.ndarray, b: np.ndarray, keep: np.ndarray):
    "Pearson correlation of each row pair over the ``keep`` entries; NaN when constant."
    n = keep.sum(axis=1, keepdims=True)
    am = np.where(keep, a, 0.0)
    bm = np.where(keep, b, 0.0)
    ac = np.where(keep, a - am.sum(axis=1, keepdims=True) / n, 0.0)
    bc = np.where(keep, b - bm.sum(axis=1, keepdims=True) / n, 0.0)
    sa = np.sqrt(np.sum(ac * ac, axis=1))
    sb = np.sqrt(np.sum(bc * bc, axis=1))
    num = np.sum(ac * bc, axis=1)
    scale_a = np.max(np.abs(np.where(keep, a, 0.0)), axis=1)
    scale_b = np.max(np.abs(np.where(keep, b, 0.0)), axis=1)
    const = (sa <= 1e-12 * np.maximum(scale_a, 1e-300) * np.sqrt(n[:, 0])) | (
        sb <= 1e-12 * np.maximum(scale_b, 1e-300) * np.sqrt(n[:, 0])
    )
    with np.errstate(invalid="ignore", divide="ignore"):
        r = num / (sa * sb)
    r[const] = np.nan
    return np.clip(r, -1.0, 1.0)


def sci(model, space: SemanticSpace) -> SCIResult:
    """
    Semantic coherence index of a fitted model.

    For every covered item ``i`` the model's relatedness scores to the
    other covered items are correlated with the semantic cosine between
    ``i`` and those items.  Item-item models contribute row ``i`` of their
    weight matrix; other models score a user whose history is the single
    item ``i``.  Items where either vector is constant are skipped.
    """
    covered = np.flatnonzero(space.covered)
    if len(covered) < 3:
        raise ValueError("semantic space covers fewer than 3 items")
    n_items = space.n_items
    vals = []
    skipped = 0
    for start in range(0, len(covered), PROBE_BATCH):
        batch = covered[start : start + PROBE_BATCH]
        rel = _relatedness(model, batch, n_items)[:, covered]
        w_all = _l2_rows(space.weights[covered])
        w_b = _l2_rows(space.weights[batch])
        sem = np.asarray((w_b @ w_all.T).todense())
        keep = np.ones_like(sem, dtype=bool)
        keep[np.arange(len(batch)), start + np.arange(len(batch))] = False
        r = _rowwise_pearson(rel, sem, keep)
        skipped += int(np.isnan(r).sum())
        vals.append(r[~np.isnan(r)])
    vals = np.concatenate(vals)
    if len(vals) == 0:
        raise ValueError("no item yields a defined correlation")
    return SCIResult(float(vals.mean()), len(vals), skipped)
