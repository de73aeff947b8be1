"""
Dataset ingestion: delimited-text readers, binarization, iterative h-core
filtering, user folds and hold-out selection.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .sparse import as_csr

_log = logging.getLogger(__name__)

SNAPSHOT_MAGIC = "recbench-snapshot"
SNAPSHOT_VERSION = 1

EVENT_COLUMNS = ["user", "item", "value", "timestamp"]


@dataclass(frozen=True)
class DatasetConfig:
    """
    How to read one dataset's raw interaction file.

    ``columns`` gives the positions of user, item and value (and optionally
    timestamp) in each record.  A ``value_column`` of ``None`` means every
    row is a positive with value 1.
    """

    name: str
    filename: str
    delimiter: str = ","
    header: bool = False
    user_column: int = 0
    item_column: int = 1
    value_column: int | None = 2
    timestamp_column: int | None = None
    threshold: float | None = 4.0
    h: int = 5
    encoding: str = "utf-8"

    def with_overrides(self, **kw) -> "DatasetConfig":
        fields = {**self.__dict__, **kw}
        return DatasetConfig(**fields)


#: built-in adapters; paths are relative to the data directory
DATASETS: dict[str, DatasetConfig] = {
    "ml100k": DatasetConfig("ml100k", "ml-100k/u.data", "\t", False, 0, 1, 2, 3, 4.0),
    "ml1m": DatasetConfig("ml1m", "ml-1m/ratings.dat", "::", False, 0, 1, 2, 3, 4.0),
    "ml20m": DatasetConfig("ml20m", "ml-20m/ratings.csv", ",", True, 0, 1, 2, 3, 4.0),
    "lastfm": DatasetConfig("lastfm", "hetrec2011-lastfm-2k/user_artists.dat", "\t", True, 0, 1, 2, None, 1.0),
    # kuai's positivity rule is dataset specific and must come from config
    "kuai": DatasetConfig("kuai", "kuairec/small_matrix.csv", ",", True, 0, 1, 2, 4, None),
    "jester": DatasetConfig("jester", "jester/ratings.csv", ",", False, 0, 1, 2, None, 4.0),
    "bookx": DatasetConfig("bookx", "book-crossing/BX-Book-Ratings.csv", ";", True, 0, 1, 2, None, 4.0, encoding="latin-1"),
    "amazon-e": DatasetConfig("amazon-e", "amazon/ratings_Electronics.csv", ",", False, 0, 1, 2, 3, 4.0),
    "netflix": DatasetConfig("netflix", "netflix/ratings.csv", ",", False, 0, 1, 2, 3, 4.0),
}


def read_events(path: str | Path, config: DatasetConfig) -> pd.DataFrame:
    """
    Read a delimited text file into a raw event frame with columns
    ``user``, ``item`` (strings), ``value`` (float) and ``timestamp``
    (nullable integer).
    """
    cols = {"user": config.user_column, "item": config.item_column}
    if config.value_column is not None:
        cols["value"] = config.value_column
    if config.timestamp_column is not None:
        cols["timestamp"] = config.timestamp_column
    engine = "python" if len(config.delimiter) > 1 else "c"
    frame = pd.read_csv(
        path,
        sep=config.delimiter,
        header=0 if config.header else None,
        usecols=sorted(cols.values()),
        dtype=str,
        engine=engine,
        encoding=config.encoding,
        quotechar='"',
    )
    by_pos = {pos: name for name, pos in cols.items()}
    frame.columns = [by_pos[i] for i in sorted(cols.values())]
    return _normalize_events(frame)


def events_from_records(records) -> pd.DataFrame:
    """Build a raw event frame from ``(user, item, value[, timestamp])`` tuples."""
    rows = [tuple(r) + (None,) * (4 - len(r)) for r in records]
    frame = pd.DataFrame(rows, columns=EVENT_COLUMNS)
    return _normalize_events(frame)


def _normalize_events(frame: pd.DataFrame) -> pd.DataFrame:
    out = pd.DataFrame(
        {
            "user": frame["user"].astype(str).str.strip(),
            "item": frame["item"].astype(str).str.strip(),
        }
    )
    out["value"] = pd.to_numeric(frame["value"], errors="coerce") if "value" in frame else 1.0
    ts = frame["timestamp"] if "timestamp" in frame else pd.Series([None] * len(frame))
    out["timestamp"] = pd.to_numeric(ts, errors="coerce").astype("Int64").to_numpy()
    return out.dropna(subset=["value"]).reset_index(drop=True)


def binarize(events: pd.DataFrame, threshold: float) -> pd.DataFrame:
    """
    Keep events whose value is at least ``threshold`` and collapse repeated
    (user, item) pairs to their first occurrence.
    """
    if not np.isfinite(threshold):
        raise ValueError("threshold must be finite")
    kept = events[events["value"] >= threshold]
    return kept.drop_duplicates(subset=["user", "item"], keep="first").reset_index(drop=True)


@dataclass(frozen=True)
class Interactions:
    """
    Binary user-item matrix with the external ids of its rows and columns.
    """

    matrix: sp.csr_matrix
    user_ids: np.ndarray
    item_ids: np.ndarray

    @property
    def n_users(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_items(self) -> int:
        return self.matrix.shape[1]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    @classmethod
    def from_events(cls, events: pd.DataFrame) -> "Interactions":
        uidx, users = pd.factorize(events["user"], sort=True)
        iidx, items = pd.factorize(events["item"], sort=True)
        mat = sp.csr_matrix(
            (np.ones(len(events)), (uidx, iidx)), shape=(len(users), len(items))
        )
        mat = as_csr(mat)
        mat.data[:] = 1.0
        return cls(mat, np.asarray(users, dtype=str), np.asarray(items, dtype=str))

    def subset(self, users=None, items=None) -> "Interactions":
        "Restrict to the given row and/or column indices (order preserved)."
        mat = self.matrix
        uids, iids = self.user_ids, self.item_ids
        if users is not None:
            mat = mat[users]
            uids = uids[users]
        if items is not None:
            mat = mat[:, items]
            iids = iids[items]
        return Interactions(as_csr(mat), uids, iids)

    def row(self, u: int) -> np.ndarray:
        m = self.matrix
        return m.indices[m.indptr[u] : m.indptr[u + 1]]

    def user_counts(self) -> np.ndarray:
        return np.diff(self.matrix.indptr)

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.matrix.indices, minlength=self.n_items)

    def digest(self) -> str:
        "Content hash of the matrix and id maps."
        h = hashlib.sha256()
        for arr in (self.matrix.indptr, self.matrix.indices):
            h.update(np.ascontiguousarray(arr, dtype=np.int64).tobytes())
        h.update("\x1f".join(self.user_ids).encode())
        h.update("\x1e".join(self.item_ids).encode())
        return h.hexdigest()[:16]


def kcore_filter(x: Interactions, h: int) -> Interactions:
    """
    Iteratively drop users and items with fewer than ``h`` interactions
    until every remaining row and column has at least ``h``.
    """
    if h < 1:
        raise ValueError("h must be at least 1")
    cur = x
    while True:
        ucount = cur.user_counts()
        users = np.flatnonzero(ucount >= h)
        cur = cur.subset(users=users)
        icount = cur.item_counts()
        items = np.flatnonzero(icount >= h)
        cur = cur.subset(items=items)
        if cur.nnz == 0:
            raise ValueError("h-core eliminated all data")
        if len(items) == len(icount):
            return cur


@dataclass(frozen=True)
class FoldPlan:
    """
    Assignment of each user to one of ``n_folds`` folds.

    Round ``r`` uses fold ``r`` for test, fold ``r + 1`` (mod ``n_folds``)
    for validation and the rest for training.
    """

    fold_of_user: np.ndarray
    seed: int
    n_folds: int = 5

    def users_in(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of_user == fold)

    def split(self, round_: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(train, validation, test)`` user indices for a round."""
        if not 0 <= round_ < self.n_folds:
            raise ValueError(f"round {round_} out of range")
        test_f = round_
        val_f = (round_ + 1) % self.n_folds
        test = self.users_in(test_f)
        val = self.users_in(val_f)
        train = np.flatnonzero((self.fold_of_user != test_f) & (self.fold_of_user != val_f))
        return train, val, test

    def fold_sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of_user, minlength=self.n_folds)


def make_folds(x: Interactions, n_folds: int = 5, seed: int = 0) -> FoldPlan:
    "Uniform random partition of users into ``n_folds`` near-equal folds."
    if n_folds < 2:
        raise ValueError("need at least two folds")
    if x.n_users < n_folds:
        raise ValueError("fewer users than folds")
    perm = np.random.default_rng(seed).permutation(x.n_users)
    fold = np.empty(x.n_users, dtype=np.int64)
    fold[perm] = np.arange(x.n_users) % n_folds
    return FoldPlan(fold, seed, n_folds)


@dataclass(frozen=True)
class HoldoutSet:
    "One held-out item per covered user."

    users: np.ndarray
    items: np.ndarray
    seed: int
    _lookup: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        self._lookup.update(zip(self.users.tolist(), self.items.tolist()))

    def __getitem__(self, user: int) -> int:
        return self._lookup[user]

    def __contains__(self, user: int) -> bool:
        return user in self._lookup

    def __len__(self) -> int:
        return len(self.users)

    def items_for(self, users) -> np.ndarray:
        return np.array([self._lookup[int(u)] for u in users], dtype=np.int64)


def select_holdouts(x: Interactions, users, seed: int = 0) -> HoldoutSet:
    """
    Pick one owned item uniformly at random for each user in ``users``.
    The draw for a user depends only on ``seed``, the user index and the
    user's row, so it does not change with the set of other users.
    """
    users = np.asarray(sorted(int(u) for u in users), dtype=np.int64)
    items = np.empty(len(users), dtype=np.int64)
    for n, u in enumerate(users):
        row = x.row(u)
        if len(row) == 0:
            raise ValueError(f"user {u} has no interactions")
        rng = np.random.default_rng([seed, u])
        items[n] = row[rng.integers(len(row))]
    return HoldoutSet(users, items, seed)


def remove_holdouts(m: sp.csr_matrix, holdouts: HoldoutSet, users=None) -> sp.csr_matrix:
    """
    Copy of ``m`` with each covered user's held-out item removed.  If
    ``users`` is given, ``m``'s rows correspond to those user indices.
    """
    m = m.tolil(copy=True)
    rows = range(m.shape[0]) if users is None else users
    for r, u in enumerate(rows):
        u = int(u)
        if u in holdouts:
            m[r, holdouts[u]] = 0
    return as_csr(m)


ML100K_GENRES = [
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime",
    "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror", "Musical", "Mystery",
    "Romance", "Sci-Fi", "Thriller", "War", "Western",
]


def read_item_tags(name: str, data_dir: str | Path) -> pd.DataFrame:
    """
    Item annotations for a built-in dataset as a frame with ``item`` and
    ``tag`` columns (plus ``relevance`` for genome scores).  Item ids are
    strings, matching :class:`Interactions` ids.

    ml100k and ml1m contribute their genre labels; ml20m uses the tag
    genome when present and user tag applications otherwise.
    """
    base = Path(data_dir)
    if name == "ml100k":
        raw = pd.read_csv(base / "ml-100k/u.item", sep="|", header=None, dtype=str,
                          encoding="latin-1")
        flags = raw.iloc[:, 5 : 5 + len(ML100K_GENRES)].astype(int).to_numpy()
        u, g = np.nonzero(flags)
        return pd.DataFrame({"item": raw[0].str.strip().to_numpy()[u],
                             "tag": np.asarray(ML100K_GENRES)[g]})
    if name == "ml1m":
        raw = pd.read_csv(base / "ml-1m/movies.dat", sep="::", header=None, dtype=str,
                          engine="python", encoding="latin-1")
        tags = raw[2].str.split("|")
        frame = pd.DataFrame({"item": raw[0].str.strip(), "tag": tags}).explode("tag")
        return frame.reset_index(drop=True)
    if name == "ml20m":
        genome = base / "ml-20m/genome-scores.csv"
        if genome.exists():
            raw = pd.read_csv(genome, dtype={"movieId": str, "tagId": str})
            return pd.DataFrame({"item": raw["movieId"], "tag": raw["tagId"],
                                 "relevance": raw["relevance"].astype(float)})
        raw = pd.read_csv(base / "ml-20m/tags.csv", dtype=str)
        return pd.DataFrame({"item": raw["movieId"], "tag": raw["tag"].str.lower().str.strip()})
    raise ValueError(f"no item annotations known for {name!r}")


def load_dataset(config: DatasetConfig, data_dir: str | Path) -> Interactions:
    "Read, binarize and h-core filter one dataset."
    if config.threshold is None:
        raise ValueError(f"dataset {config.name} needs an explicit positivity threshold")
    path = Path(data_dir) / config.filename
    events = read_events(path, config)
    pos = binarize(events, config.threshold)
    x = kcore_filter(Interactions.from_events(pos), config.h)
    _log.info(
        "%s: %d users, %d items, %d interactions after %d-core",
        config.name, x.n_users, x.n_items, x.nnz, config.h,
    )
    return x


def snapshot_key(name: str, h: int, threshold: float, seed: int, n_folds: int = 5) -> str:
    raw = json.dumps([name, h, threshold, seed, n_folds])
    return f"{name}-{hashlib.sha256(raw.encode()).hexdigest()[:12]}"


def save_snapshot(path: str | Path, x: Interactions, plan: FoldPlan, meta: dict | None = None):
    "Write interactions and fold plan to a versioned ``.npz`` file."
    m = x.matrix
    np.savez_compressed(
        path,
        magic=np.array(SNAPSHOT_MAGIC),
        version=np.array(SNAPSHOT_VERSION),
        shape=np.array(m.shape),
        indptr=m.indptr,
        indices=m.indices,
        user_ids=x.user_ids,
        item_ids=x.item_ids,
        fold_of_user=plan.fold_of_user,
        fold_seed=np.array(plan.seed),
        n_folds=np.array(plan.n_folds),
        meta=np.array(json.dumps(meta or {}, sort_keys=True)),
    )


def load_snapshot(path: str | Path) -> tuple[Interactions, FoldPlan, dict]:
    with np.load(path, allow_pickle=False) as z:
        if str(z["magic"]) != SNAPSHOT_MAGIC:
            raise ValueError(f"{path}: not a snapshot file")
        if int(z["version"]) != SNAPSHOT_VERSION:
            raise ValueError(f"{path}: unsupported snapshot version {int(z['version'])}")
        indices = z["indices"]
        m = sp.csr_matrix(
            (np.ones(len(indices)), indices, z["indptr"]), shape=tuple(z["shape"])
        )
        x = Interactions(m, z["user_ids"], z["item_ids"])
        plan = FoldPlan(z["fold_of_user"], int(z["fold_seed"]), int(z["n_folds"]))
        meta = json.loads(str(z["meta"]))
    return x, plan, meta
