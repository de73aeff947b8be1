import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from recbench.data import HoldoutSet, Interactions, make_folds, select_holdouts
from recbench.metrics import summarize
from recbench.models import MODELS, Recommender
from recbench.protocols import (
    CUTOFF,
    ModelSpec,
    all_holdouts,
    diversity_reports,
    evaluate_subgroups,
    fit_round,
    head_items,
    partition_active_inactive,
    partition_head_tail,
    partition_similar_dissimilar,
    round_data,
    run_loo_memorization,
    run_rerank_memorization,
    run_strong_generalization,
    subgroup_partitions,
    top_similarity_sums,
)

from conftest import random_binary


class Echo(Recommender):
    "Scores are the history itself."

    name = "echo"

    def fit(self, x, validation=None):
        self.n_items = x.shape[1]
        return self

    def score(self, histories):
        return self._check_histories(histories).toarray()


@pytest.fixture
def echo(monkeypatch):
    monkeypatch.setitem(MODELS, "echo", Echo)


def interactions(m):
    m = sp.csr_matrix(m, dtype=np.float64)
    return Interactions(m, np.arange(m.shape[0]).astype(str), np.arange(m.shape[1]).astype(str))


@pytest.fixture
def data():
    return interactions(random_binary(80, 60, density=0.12, seed=7, min_per_row=3))


def counts_matrix(counts, n_items=12):
    rows = [np.arange(c) for c in counts]
    return interactions(sp.csr_matrix(
        (np.ones(sum(counts)), (np.repeat(np.arange(len(counts)), counts), np.concatenate(rows))),
        shape=(len(counts), n_items),
    ))


def test_every_user_tested_once(data):
    plan = make_folds(data, 5, seed=2)
    tested = np.concatenate([plan.split(r)[2] for r in range(5)])
    assert np.array_equal(np.sort(tested), np.arange(data.n_users))


def test_round_mask_is_input_and_excludes_target(data):
    plan = make_folds(data, 5, seed=0)
    rd = round_data(data, plan, 0, all_holdouts(data, 0))
    for n, u in enumerate(rd.test_users):
        inp = rd.test_input[n].indices
        assert rd.test_targets[n] not in inp
        assert set(inp) | {rd.test_targets[n]} == set(data.row(u))


def test_loo_oracle_model_hits(data, echo):
    out = run_loo_memorization("echo", data, make_folds(data, 5), dataset="toy")
    assert np.all(out.ranks == 1)
    assert out.reports()[0].value == 1.0


def test_loo_random_mean_rank(data):
    plan = make_folds(data, 5)
    n_u = np.diff(data.matrix.indptr)
    expect = np.mean((data.n_items - n_u + 2) / 2)
    means = [run_loo_memorization(ModelSpec("random", {"seed": s}), data, plan).ranks.mean()
             for s in range(200)]
    assert np.mean(means) == pytest.approx(expect, rel=0.02)


def test_loo_unmasked_ranks_are_worse_or_equal(data):
    plan = make_folds(data, 5)
    masked = run_loo_memorization("popularity", data, plan, loo_mask=True)
    unmasked = run_loo_memorization("popularity", data, plan, loo_mask=False)
    assert np.all(unmasked.ranks >= masked.ranks)


def test_rerank_user_owning_every_item():
    m = np.zeros((3, 80))
    m[0] = 1
    m[1, :5] = 1
    m[2, 40:50] = 1
    x = interactions(m)
    out = run_rerank_memorization("popularity", x, make_folds(x, 3))
    assert out.value[0] == pytest.approx(CUTOFF / 80)


def test_rerank_popularity_hand_case():
    # item counts: 0:2 1:1 2:1 3:0 -> ranking 0, 1, 2, 3
    x = interactions(np.array([[1, 1, 0, 0], [1, 0, 1, 0]]))
    out = run_rerank_memorization("popularity", x, make_folds(x, 2))
    assert out.ranks.tolist() == [1.5, 2.0]
    assert out.value.tolist() == [1.0, 1.0]


def test_strong_gen_echo_ranks_by_index(data, echo):
    plan = make_folds(data, 5)
    out = run_strong_generalization("echo", data, plan)
    hold = all_holdouts(data, 0)
    for u, rank in zip(out.users, out.ranks):
        target = hold[int(u)]
        others = np.setdiff1d(data.row(u), [target])
        assert rank == 1 + np.sum(np.setdiff1d(np.arange(target), others) < target)


def test_strong_gen_ignores_test_rows(data):
    plan = make_folds(data, 5)
    hold = all_holdouts(data, 0)
    rd = round_data(data, plan, 0, hold)
    base = fit_round(ModelSpec("ease", {"reg": 10.0}), rd).item_weights()
    m = data.matrix.tolil()
    rng = np.random.default_rng(1)
    for u in rd.test_users:
        m[u, rng.choice(data.n_items, 3, replace=False)] = 1
    alt = interactions(m)
    rd2 = round_data(alt, plan, 0, select_holdouts(alt, np.arange(alt.n_users)))
    assert np.array_equal(rd2.train_input.toarray(), rd.train_input.toarray())
    again = fit_round(ModelSpec("ease", {"reg": 10.0}), rd2).item_weights()
    assert np.array_equal(base, again)


def test_active_inactive_nine_users():
    x = counts_matrix([9, 8, 7, 3, 3, 3, 3, 3, 2])
    p = partition_active_inactive(x, np.arange(9))
    assert p.groups["active"].tolist() == [0, 1, 2]
    assert p.params["active_interactions"] == 24
    # cumulative sums from the bottom: 2, 5, 8, 11, 14, 17; the whole pool is closest
    assert p.groups["inactive"].tolist() == [3, 4, 5, 6, 7, 8]
    assert p.params["inactive_interactions"] == 17
    assert p.params["r"] == pytest.approx(1.5)


def test_active_inactive_equal_counts():
    x = counts_matrix([4] * 9)
    p = partition_active_inactive(x, np.arange(9))
    assert p.params["r"] == pytest.approx(3.0)
    assert len(p.groups["active"]) == len(p.groups["inactive"]) == 3


@given(st.lists(st.integers(1, 12), min_size=3, max_size=30))
def test_active_inactive_properties(counts):
    x = counts_matrix(counts)
    users = np.arange(len(counts))
    p = partition_active_inactive(x, users)
    q = partition_active_inactive(x, users)
    a, i = p.groups["active"], p.groups["inactive"]
    assert np.array_equal(a, q.groups["active"]) and np.array_equal(i, q.groups["inactive"])
    assert len(np.intersect1d(a, i)) == 0
    assert set(a) | set(i) <= set(users)
    c = np.asarray(counts)
    assert c[a].min() >= np.max(np.delete(c, a), initial=0)


def test_similarity_extremes():
    m = np.zeros((14, 8))
    m[:12, :3] = 1  # 12 identical users
    m[12, 6:] = 1  # disjoint user
    m[13, 2:5] = 1
    x = interactions(m)
    test = np.array([0, 12, 13])
    train = np.arange(1, 12)
    sums = top_similarity_sums(x, test, train, l=10)
    assert sums[0] == pytest.approx(10.0)
    assert sums[1] == 0.0
    p = partition_similar_dissimilar(x, test, train)
    assert p.groups["similar"].tolist() == [0]
    assert p.groups["dissimilar"].tolist() == [12]


def test_similarity_dense_oracle():
    m = np.array([
        [1, 1, 0, 0, 1], [0, 1, 1, 0, 0], [1, 0, 0, 1, 1],
        [0, 0, 1, 1, 0], [1, 1, 1, 0, 0], [0, 1, 0, 1, 1],
    ], dtype=float)
    test, train = np.array([0, 3]), np.array([1, 2, 4, 5])
    norm = m / np.linalg.norm(m, axis=1, keepdims=True)
    sims = norm[test] @ norm[train].T
    expect = np.sort(sims, axis=1)[:, ::-1][:, :2].sum(axis=1)
    assert np.allclose(top_similarity_sums(interactions(m), test, train, l=2), expect)


def test_head_one_dominant_item():
    m = np.zeros((4, 5))
    m[:, 0] = 1
    m[0, 1:] = 1
    assert head_items(interactions(m), np.arange(4)).tolist() == [0]


def test_head_uniform_items():
    m = np.ones((3, 10))
    assert head_items(interactions(m), np.arange(3)).tolist() == [0, 1, 2, 3, 4]


@given(st.lists(st.integers(0, 8), min_size=2, max_size=15))
def test_head_prefix_oracle(pops):
    if sum(pops) == 0:
        return
    n_users = max(pops)
    m = np.zeros((n_users, len(pops)))
    for i, c in enumerate(pops):
        m[:c, i] = 1
    head = head_items(interactions(m), np.arange(n_users))
    order = sorted(range(len(pops)), key=lambda i: (-pops[i], i))
    total, n = 0, 0
    while total * 2 < sum(pops):
        total += pops[order[n]]
        n += 1
    assert head.tolist() == sorted(order[:n])


def test_head_tail_partition_exhaustive(data):
    users = np.arange(data.n_users)
    hold = select_holdouts(data, users)
    p = partition_head_tail(data, users, hold)
    assert len(np.intersect1d(p.groups["head"], p.groups["tail"])) == 0
    assert np.array_equal(np.union1d(p.groups["head"], p.groups["tail"]), users)
    interacted = np.sum(data.item_counts() > 0)
    assert p.params["n_head_items"] + p.params["n_tail_items"] == interacted


def test_subgroups(data):
    plan = make_folds(data, 5)
    out = run_strong_generalization("popularity", data, plan)
    parts = subgroup_partitions(data, plan)
    assert [p.kind for p in parts] == ["activity", "similarity", "popularity"]
    for p in parts:
        for users in p.groups.values():
            assert set(users) <= set(range(data.n_users))
    # whole set reproduces the full result
    whole = out.restrict(np.arange(data.n_users)).reports()
    assert whole[0].value == out.reports()[0].value
    # counting identity over a two-way split
    head_tail = parts[2]
    reps = {r.protocol: r for r in evaluate_subgroups(out, [head_tail]) if r.metric.startswith("HR")}
    nh, nt = len(head_tail.groups["head"]), len(head_tail.groups["tail"])
    recombined = (reps["subgroup:head"].value * nh + reps["subgroup:tail"].value * nt) / (nh + nt)
    assert recombined == pytest.approx(out.reports()[0].value)


def test_diversity_reports(data):
    plan = make_folds(data, 5)
    rnd = diversity_reports(run_strong_generalization("random", data, plan), data.n_items)
    pop = diversity_reports(run_strong_generalization("popularity", data, plan), data.n_items)
    g = {r.metric: r.value for r in rnd}
    p = {r.metric: r.value for r in pop}
    assert g["Gini"] < p["Gini"] and g["Entropy"] > p["Entropy"]
