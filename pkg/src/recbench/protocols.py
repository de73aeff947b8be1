"""
Evaluation protocols: strong generalization over user folds, the two
memorization tasks, subgroup partitions and exposure diversity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import hpo
from .data import FoldPlan, HoldoutSet, Interactions, remove_holdouts, select_holdouts
from .metrics import (
    MetricReport,
    exposure_counts,
    gini_index,
    shannon_entropy,
    summarize,
    target_ranks,
    top_k_lists,
)
from .models import Recommender, ValidationData, make_model
from .sparse import as_csr

_log = logging.getLogger(__name__)

CUTOFF = 50
#: length of the lists used for exposure diversity
DIVERSITY_K = 10

STRONG_GEN = "strong-gen"
LOO = "loo-memorization"
RERANK = "rerank-memorization"
PROTOCOLS = (STRONG_GEN, LOO, RERANK, "subgroups", "diversity", "sci")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    params: dict = field(default_factory=dict)

    def build(self) -> Recommender:
        return make_model(self.name, **self.params)


def _spec(spec) -> ModelSpec:
    return ModelSpec(spec) if isinstance(spec, str) else spec


@dataclass
class RoundData:
    """
    Matrices for one cross-validation round.  ``*_input`` rows are user
    profiles with the hold-out removed; ``*_targets`` are the hold-outs.
    """

    round: int
    train_users: np.ndarray
    val_users: np.ndarray
    test_users: np.ndarray
    train_input: sp.csr_matrix
    train_targets: np.ndarray
    val_input: sp.csr_matrix
    val_targets: np.ndarray
    test_input: sp.csr_matrix
    test_targets: np.ndarray

    @property
    def early_stopping(self) -> ValidationData:
        return ValidationData(self.train_input, self.train_targets, CUTOFF)


def round_data(x: Interactions, plan: FoldPlan, round_: int, holdouts: HoldoutSet) -> RoundData:
    train, val, test = plan.split(round_)
    m = x.matrix

    def part(users):
        return remove_holdouts(m[users], holdouts, users), holdouts.items_for(users)

    tr_in, tr_t = part(train)
    va_in, va_t = part(val)
    te_in, te_t = part(test)
    return RoundData(round_, train, val, test, tr_in, tr_t, va_in, va_t, te_in, te_t)


def all_holdouts(x: Interactions, seed: int) -> HoldoutSet:
    return select_holdouts(x, np.arange(x.n_users), seed)


def fit_round(spec, data: RoundData) -> Recommender:
    "Fit on the round's training users only."
    model = _spec(spec).build()
    return model.fit(data.train_input, validation=data.early_stopping)


def hitrate_objective(model: Recommender, inputs, targets, k: int = CUTOFF) -> float:
    ranks = target_ranks(model.score(inputs), inputs, targets)
    return float(np.mean(ranks <= k))


def validation_objective(name: str, data: RoundData) -> Callable[[dict], float]:
    "Objective for hyper-parameter search: validation-user HitRate@50."

    def objective(config: dict) -> float:
        model = fit_round(ModelSpec(name, config), data)
        return hitrate_objective(model, data.val_input, data.val_targets)

    return objective


@dataclass
class UserOutcomes:
    """
    Per-user results of one protocol, pooled over rounds.  For the
    single-target protocols ``value`` is the hit indicator at the cutoff.
    """

    model: str
    dataset: str
    protocol: str
    users: np.ndarray
    folds: np.ndarray
    ranks: np.ndarray
    value: np.ndarray
    n_folds: int
    top_lists: np.ndarray | None = None
    configs: dict = field(default_factory=dict)

    def restrict(self, users) -> "UserOutcomes":
        keep = np.isin(self.users, np.asarray(users))
        return UserOutcomes(
            self.model, self.dataset, self.protocol, self.users[keep], self.folds[keep],
            self.ranks[keep], self.value[keep], self.n_folds,
            None if self.top_lists is None else self.top_lists[keep], self.configs,
        )

    def reports(self, metric: str = f"HR@{CUTOFF}", protocol: str | None = None) -> list[MetricReport]:
        kw = dict(model=self.model, dataset=self.dataset,
                  protocol=protocol or self.protocol, n_folds=self.n_folds)
        return [
            summarize(self.value, self.folds, metric, **kw),
            summarize(self.ranks, self.folds, "MeanRanks", **kw),
        ]


def _concat(parts: list[UserOutcomes]) -> UserOutcomes:
    first = parts[0]
    order = np.argsort(np.concatenate([p.users for p in parts]), kind="stable")

    def cat(attr):
        return np.concatenate([getattr(p, attr) for p in parts])[order]

    tops = None if first.top_lists is None else np.vstack([p.top_lists for p in parts])[order]
    configs = {}
    for p in parts:
        configs.update(p.configs)
    return UserOutcomes(
        first.model, first.dataset, first.protocol, cat("users"), cat("folds"),
        cat("ranks"), cat("value"), first.n_folds, tops, configs,
    )


def evaluate_round(model: Recommender, data: RoundData, *, name: str, dataset: str,
                   n_folds: int) -> UserOutcomes:
    "Score the round's test users; the mask is exactly the scoring input."
    scores = model.score(data.test_input)
    ranks = target_ranks(scores, data.test_input, data.test_targets)
    tops = top_k_lists(scores, data.test_input, DIVERSITY_K)
    return UserOutcomes(
        name, dataset, STRONG_GEN, data.test_users, np.full(len(ranks), data.round),
        ranks, (ranks <= CUTOFF).astype(np.float64), n_folds, tops,
        {data.round: dict(model.params)},
    )


def run_strong_generalization(
    spec,
    x: Interactions,
    plan: FoldPlan,
    *,
    seed: int = 0,
    rounds=None,
    params_by_round: dict[int, dict] | None = None,
    dataset: str = "",
) -> UserOutcomes:
    """
    Fit on each round's training users (hold-outs removed) and rank every
    test user's hold-out against all items outside their input.
    ``params_by_round`` overrides the model spec's parameters per round.
    """
    spec = _spec(spec)
    holdouts = all_holdouts(x, seed)
    rounds = range(plan.n_folds) if rounds is None else rounds
    parts = []
    for r in rounds:
        data = round_data(x, plan, r, holdouts)
        params = spec.params if params_by_round is None else params_by_round[r]
        model = fit_round(ModelSpec(spec.name, params), data)
        parts.append(evaluate_round(model, data, name=spec.name, dataset=dataset,
                                    n_folds=plan.n_folds))
    return _concat(parts)


def run_loo_memorization(spec, x: Interactions, plan: FoldPlan, *, seed: int = 0,
                         dataset: str = "", loo_mask: bool = True) -> UserOutcomes:
    """
    Fit on every user's full profile, then rank one of each user's own
    training items.  With ``loo_mask`` the user's other training items are
    excluded from the candidates.
    """
    spec = _spec(spec)
    m = x.matrix
    model = spec.build().fit(m)
    holdouts = all_holdouts(x, seed)
    targets = holdouts.items_for(np.arange(x.n_users))
    mask = remove_holdouts(m, holdouts) if loo_mask else None
    ranks = target_ranks(model.score(m), mask, targets)
    return UserOutcomes(
        spec.name, dataset, LOO, np.arange(x.n_users), plan.fold_of_user.copy(),
        ranks, (ranks <= CUTOFF).astype(np.float64), plan.n_folds,
        configs={"all": dict(model.params)},
    )


def run_rerank_memorization(spec, x: Interactions, plan: FoldPlan, *, dataset: str = "") -> UserOutcomes:
    """
    Fit on full profiles and rank the whole catalog without a mask; the
    targets are all of the user's training items.  ``value`` holds each
    user's Recall@50 and ``ranks`` the mean rank of their items.
    """
    spec = _spec(spec)
    m = x.matrix
    model = spec.build().fit(m)
    scores = model.score(m)
    recall = np.empty(x.n_users)
    mean_rank = np.empty(x.n_users)
    idx = np.arange(x.n_items)
    for start in range(0, x.n_users, 512):
        s = np.asarray(scores[start : start + 512], dtype=np.float64)
        order = np.argsort(-s, axis=1, kind="stable")
        pos = np.empty_like(order)
        np.put_along_axis(pos, order, idx[None, :] + 1, axis=1)
        block = m[start : start + 512]
        for r in range(block.shape[0]):
            items = block.indices[block.indptr[r] : block.indptr[r + 1]]
            rk = pos[r, items]
            recall[start + r] = np.mean(rk <= CUTOFF)
            mean_rank[start + r] = rk.mean()
    return UserOutcomes(
        spec.name, dataset, RERANK, np.arange(x.n_users), plan.fold_of_user.copy(),
        mean_rank, recall, plan.n_folds, configs={"all": dict(model.params)},
    )


def rerank_reports(out: UserOutcomes) -> list[MetricReport]:
    return out.reports(metric=f"Recall@{CUTOFF}")


def diversity_reports(out: UserOutcomes, n_items: int) -> list[MetricReport]:
    "Gini and entropy of item exposure in the test users' top-10 lists."
    if out.top_lists is None:
        raise ValueError("outcomes carry no top-n lists")
    reports = []
    for metric, fn in (("Gini", lambda c: gini_index(c, n_items)), ("Entropy", shannon_entropy)):
        per_fold = []
        for f in range(out.n_folds):
            sel = out.folds == f
            if sel.any():
                per_fold.append(fn(exposure_counts(out.top_lists[sel], n_items)))
        value = fn(exposure_counts(out.top_lists, n_items))
        reports.append(MetricReport(out.model, out.dataset, "diversity", metric, value, 0.0,
                                    tuple(per_fold), len(out.users)))
    return reports


# -- subgroups ---------------------------------------------------------------


@dataclass
class SubgroupPartition:
    """
    Named user groups from one partitioning rule, with the parameters the
    rule settled on.
    """

    kind: str
    groups: dict[str, np.ndarray]
    params: dict = field(default_factory=dict)

    def merge(self, other: "SubgroupPartition") -> "SubgroupPartition":
        groups = {k: np.union1d(v, other.groups[k]) for k, v in self.groups.items()}
        params = {k: [*np.atleast_1d(self.params.get(k, [])), *np.atleast_1d(other.params.get(k, []))]
                  for k in self.params}
        return SubgroupPartition(self.kind, groups, params)


def _third(n: int) -> int:
    return max(1, n // 3)


def partition_active_inactive(x, test_users) -> SubgroupPartition:
    """
    Active users are the top third by profile size.  Inactive users are
    taken from the least active upward until their interaction total is
    closest to the active total (ties go to the smaller set), never
    overlapping the active set.
    """
    m = as_csr(x.matrix if isinstance(x, Interactions) else x)
    users = np.asarray(test_users, dtype=np.int64)
    counts = np.diff(m.indptr)[users]
    desc = np.lexsort((users, -counts))
    n_act = _third(len(users))
    active = users[desc[:n_act]]
    target = counts[desc[:n_act]].sum()
    pool = desc[n_act:][::-1]
    if len(pool) == 0:
        inactive = users[:0]
    else:
        csum = np.cumsum(counts[pool])
        best = int(np.argmin(np.abs(csum - target)))
        inactive = users[pool[: best + 1]]
    r = len(users) / max(len(inactive), 1)
    return SubgroupPartition(
        "activity",
        {"active": np.sort(active), "inactive": np.sort(inactive)},
        {"r": r, "active_interactions": int(target),
         "inactive_interactions": int(np.diff(m.indptr)[inactive].sum())},
    )


def top_similarity_sums(x, test_users, train_users, l: int = 10) -> np.ndarray:
    "Sum of each test user's ``l`` largest cosine similarities to train users."
    m = as_csr(x.matrix if isinstance(x, Interactions) else x)
    norms = np.sqrt(np.asarray(m.multiply(m).sum(axis=1)).ravel())
    inv = np.zeros_like(norms)
    np.divide(1.0, norms, out=inv, where=norms > 0)
    mn = as_csr(sp.diags(inv) @ m)
    tr = mn[np.asarray(train_users)]
    te = np.asarray(test_users)
    out = np.empty(len(te))
    for start in range(0, len(te), 512):
        sims = np.asarray((mn[te[start : start + 512]] @ tr.T).todense())
        kk = min(l, sims.shape[1])
        top = -np.sort(-sims, axis=1)[:, :kk]
        out[start : start + len(top)] = top.sum(axis=1)
    return out


def partition_similar_dissimilar(x, test_users, train_users, l: int = 10) -> SubgroupPartition:
    """
    Split test users by how close they are to the training population:
    top third of top-``l`` similarity sums vs bottom third.
    """
    users = np.asarray(test_users, dtype=np.int64)
    sums = top_similarity_sums(x, users, train_users, l)
    desc = np.lexsort((users, -sums))
    n3 = _third(len(users))
    return SubgroupPartition(
        "similarity",
        {"similar": np.sort(users[desc[:n3]]), "dissimilar": np.sort(users[desc[-n3:]])},
        {"l": l},
    )


def head_items(x, test_users) -> np.ndarray:
    """
    Smallest most-popular prefix (popularity among ``test_users``, ties by
    item index) holding at least half of their interactions.
    """
    m = as_csr(x.matrix if isinstance(x, Interactions) else x)
    counts = np.bincount(m[np.asarray(test_users)].indices, minlength=m.shape[1])
    order = np.lexsort((np.arange(len(counts)), -counts))
    csum = np.cumsum(counts[order])
    n_head = int(np.searchsorted(csum, csum[-1] / 2.0, side="left")) + 1
    return np.sort(order[:n_head])


def partition_head_tail(x, test_users, holdouts: HoldoutSet) -> SubgroupPartition:
    "Group test users by whether their hold-out is a head or a tail item."
    users = np.asarray(test_users, dtype=np.int64)
    head = head_items(x, users)
    is_head = np.isin(holdouts.items_for(users), head)
    m = as_csr(x.matrix if isinstance(x, Interactions) else x)
    return SubgroupPartition(
        "popularity",
        {"head": np.sort(users[is_head]), "tail": np.sort(users[~is_head])},
        {"n_head_items": len(head),
         "n_tail_items": int(np.sum(np.bincount(m[users].indices, minlength=m.shape[1]) > 0)) - len(head)},
    )


def subgroup_partitions(x: Interactions, plan: FoldPlan, *, seed: int = 0, l: int = 10) -> list[SubgroupPartition]:
    """
    The three partitions, computed per round on that round's test users
    and pooled.  Similarity uses the profiles the models see (hold-outs
    removed).
    """
    holdouts = all_holdouts(x, seed)
    visible = remove_holdouts(x.matrix, holdouts)
    pooled: list[SubgroupPartition] | None = None
    for r in range(plan.n_folds):
        train, _, test = plan.split(r)
        parts = [
            partition_active_inactive(x, test),
            partition_similar_dissimilar(visible, test, train, l),
            partition_head_tail(x, test, holdouts),
        ]
        pooled = parts if pooled is None else [a.merge(b) for a, b in zip(pooled, parts)]
    return pooled


def evaluate_subgroups(out: UserOutcomes, partitions: list[SubgroupPartition]) -> list[MetricReport]:
    "Strong-generalization metrics restricted to each subgroup."
    reports = []
    for part in partitions:
        for label, users in part.groups.items():
            if len(users) == 0:
                continue
            reports.extend(out.restrict(users).reports(protocol=f"subgroup:{label}"))
    return reports


# -- tuning ------------------------------------------------------------------


@dataclass
class TunedRun:
    outcomes: UserOutcomes
    searches: dict[int, hpo.SearchResult]


def tune_and_evaluate(
    name: str,
    x: Interactions,
    plan: FoldPlan,
    *,
    dataset: str = "",
    seed: int = 0,
    n_trials: int = 50,
    strategy: str = "random",
    shared: bool = False,
    log_dir: str | Path | None = None,
    space: hpo.SearchSpace | None = None,
    rounds=None,
) -> TunedRun:
    """
    Nested cross-validation for one model: in each round search the
    hyper-parameters on validation-user HitRate@50, then refit the best
    configuration on the training users and evaluate on the test users.
    With ``shared`` the round-0 search result is reused in every round.
    """
    holdouts = all_holdouts(x, seed)
    if space is None:
        space = hpo.default_space(name, x.n_items, int(len(plan.split(0)[0])))
    rounds = list(range(plan.n_folds) if rounds is None else rounds)
    searches: dict[int, hpo.SearchResult] = {}
    parts = []
    for r in rounds:
        data = round_data(x, plan, r, holdouts)
        if shared and searches:
            res = next(iter(searches.values()))
        else:
            log = None if log_dir is None else Path(log_dir) / f"{dataset or 'data'}-{name}-round{r}.jsonl"
            res = hpo.search(space, validation_objective(name, data), n_trials, strategy,
                             seed=seed * 1000 + r, fold=r, log_path=log)
        searches[r] = res
        _log.info("%s round %d: best validation HR@%d %.4f with %s",
                  name, r, CUTOFF, res.best.objective, res.best.config)
        model = fit_round(ModelSpec(name, res.best.config), data)
        parts.append(evaluate_round(model, data, name=name, dataset=dataset, n_folds=plan.n_folds))
    return TunedRun(_concat(parts), searches)
