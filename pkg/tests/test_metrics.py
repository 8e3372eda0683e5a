import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bmcd.exceptions import InputError, ParameterError
from bmcd.metrics import (
    GroundTruth,
    PopularityProfile,
    accuracy,
    correct_coverage,
    cosine_matrix,
    coverage,
    evaluate,
    intra_list_similarity,
    novelty,
    rare_item_stats,
)
from bmcd.recommend import RecommendationList


def make_recs(lists, k=None):
    users, pos, items = [], [], []
    for j, lst in enumerate(lists):
        for p, i in enumerate(lst):
            users.append(j)
            pos.append(p + 1)
            items.append(i)
    k = k or max((len(l) for l in lists), default=1)
    return RecommendationList(np.array(users, np.int64), np.array(pos, np.int64), np.array(items, np.int64),
                              np.zeros(len(items)), len(lists), k)


# --- accuracy ----------------------------------------------------------------


def test_accuracy_all_hits():
    truth = GroundTruth.from_holdout([{1, 2}, {0}], n_items=4)
    assert accuracy(make_recs([[1, 2], [0]]), truth) == 1.0


def test_accuracy_hand_count_simulation_mode():
    # user 0 clicked 1 item, its next two are items 3 and 0; user 1 clicked 2, next two are 4 and 2
    R = np.array([[2, 4, 5, 3, 1], [5, 1, 4, 2, 3]])
    truth = GroundTruth.from_rankings(R, [1, 2], 2)
    recs = make_recs([[3, 1], [2, 0]])
    # hits: (0,3) yes, (0,1) no, (1,2) rank 4 yes, (1,0) rank 5 no
    assert accuracy(recs, truth) == 0.5


def test_accuracy_after_cutoff_uses_surviving_denominator():
    truth = GroundTruth.from_holdout([{1}, {0}], n_items=3)
    recs = make_recs([[1, 2], [0, 2]])
    assert accuracy(recs, truth) == 0.5
    assert accuracy(recs.subset(np.array([True, False, True, False])), truth) == 1.0
    assert math.isnan(accuracy(recs.subset(np.zeros(4, bool)), truth))


def test_accuracy_missing_user():
    truth = GroundTruth.from_holdout([{1}], n_items=3)
    with pytest.raises(InputError):
        accuracy(make_recs([[1], [0]]), truth)


def test_holdout_overlap_rejected():
    with pytest.raises(InputError):
        GroundTruth.from_holdout([{1}], n_items=3, train_clicked=np.array([[0, 1, 0]], bool))


# --- coverage ----------------------------------------------------------------


def test_coverage_examples():
    assert coverage(make_recs([[0, 1], [2, 3]]), 4) == 1.0
    assert coverage(make_recs([[0, 1], [0, 1], [1, 0]]), 10) == 2 / 10
    with pytest.raises(ParameterError):
        coverage(make_recs([[0]]), 0)


def test_correct_coverage_examples():
    truth = GroundTruth.from_holdout([{3}, {3}], n_items=4)
    assert correct_coverage(make_recs([[0, 1], [2, 1]]), truth, 4) == 0
    truth = GroundTruth.from_holdout([{0, 1}, {2, 3}], n_items=4)
    assert correct_coverage(make_recs([[0, 1], [2, 3]]), truth, 4) == 1.0


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(2, 8), st.integers(0, 2**31 - 1))
def test_coverage_ordering(N, n, seed):
    rng = np.random.default_rng(seed)
    lists = [list(rng.choice(n, size=rng.integers(1, n + 1), replace=False)) for _ in range(N)]
    truth = GroundTruth.from_holdout(rng.random((N, n)) < 0.4)
    recs = make_recs(lists)
    cc, cv = correct_coverage(recs, truth, n), coverage(recs, n)
    assert 0 <= cc <= cv <= 1
    # relabeling items consistently and reordering users leaves accuracy unchanged
    perm = rng.permutation(n)
    uperm = rng.permutation(N)
    lists2 = [[perm[i] for i in lists[u]] for u in uperm]
    rel2 = np.zeros_like(truth.relevant)
    rel2[:, perm] = truth.relevant[uperm]
    assert accuracy(make_recs(lists2), GroundTruth.from_holdout(rel2)) == pytest.approx(accuracy(recs, truth))


# --- intra-list similarity ---------------------------------------------------


def test_cosine_examples():
    W = np.array([[1, 1, 0], [0, 0, 1], [1, 1, 0]], bool)
    S = cosine_matrix(W)
    assert S[0, 1] == pytest.approx(1.0)
    assert S[0, 2] == 0.0
    assert cosine_matrix(np.array([[1, 0]], bool))[0, 1] == 0.0


def test_ils_identical_items_contribute_one():
    W = np.array([[1, 1, 0], [1, 1, 0], [0, 0, 1]], bool)
    assert intra_list_similarity(make_recs([[0, 1]]), W) == pytest.approx(1.0)
    assert intra_list_similarity(make_recs([[0, 2]]), W) == 0.0


def test_ils_three_user_hand_case():
    # clickers: item0 {0,1}, item1 {1,2}, item2 {0,1,2}
    W = np.array([[1, 0, 1], [1, 1, 1], [0, 1, 1]], bool)
    c01 = 1 / 2
    c02 = 2 / math.sqrt(6)
    c12 = 2 / math.sqrt(6)
    recs = make_recs([[0, 1, 2], [0, 1], [2]])
    expect = ((c01 + c02 + c12) + c01 + 0.0) / 3
    assert intra_list_similarity(recs, W) == pytest.approx(expect, abs=1e-15)


def test_ils_single_item_lists_zero():
    W = np.ones((3, 4), bool)
    assert intra_list_similarity(make_recs([[0], [1], [3]]), W) == 0.0


# --- novelty and rare items --------------------------------------------------


def test_novelty_examples():
    pop = PopularityProfile(np.array([5, 5]))
    assert novelty(make_recs([[0], [1]]), pop) == pytest.approx(1.0)
    n = 8
    pop = PopularityProfile(np.full(n, 3))
    lists = [list(range(n)), list(range(n))]
    assert novelty(make_recs(lists), pop) == pytest.approx(math.log2(n))


def test_novelty_zero_popularity_excluded():
    pop = PopularityProfile(np.array([2, 2, 0]))
    with pytest.warns(RuntimeWarning):
        val, excl = novelty(make_recs([[0, 2]], k=2), pop, return_excluded=True)
    assert excl == 1
    assert val == pytest.approx(1.0 / 2)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 50), min_size=3, max_size=10), st.integers(0, 2**31 - 1))
def test_novelty_decreases_when_rare_swapped_for_popular(counts, seed):
    counts = np.array(counts)
    rng = np.random.default_rng(seed)
    order = np.argsort(counts, kind="stable")
    rare, popular = int(order[0]), int(order[-1])
    if counts[rare] == counts[popular]:
        return
    others = [i for i in range(counts.size) if i not in (rare, popular)]
    base = list(rng.choice(others, size=min(2, len(others)), replace=False))
    pop = PopularityProfile(counts)
    before = novelty(make_recs([base + [rare]]), pop)
    after = novelty(make_recs([base + [popular]]), pop)
    assert after < before


def test_popularity_profile():
    pop = PopularityProfile.from_clicks(np.array([[1, 0, 1], [1, 1, 0]], bool))
    assert list(pop.counts) == [2, 1, 1]
    assert pop.pop.sum() == pytest.approx(1.0)
    assert list(pop.order) == [0, 1, 2]


def test_rare_item_stats_examples():
    pop = PopularityProfile(np.array([9, 3, 7, 1, 5]))
    assert rare_item_stats(make_recs([[3], [0, 3], [2]]), pop, 4) == (2, 2)
    assert rare_item_stats(make_recs([[0, 2]]), pop, 2) == (0, 0)
    # tie at the cutoff: items 1 and 2 both have 4 clicks, the smaller index is popular
    pop = PopularityProfile(np.array([6, 4, 4, 1]))
    assert list(pop.popular_mask(2)) == [True, True, False, False]
    assert rare_item_stats(make_recs([[1], [2]]), pop, 2) == (1, 1)
    with pytest.raises(ParameterError):
        pop.popular_mask(4)


def test_evaluate_record_and_empty():
    W = np.array([[1, 0, 0, 1], [0, 1, 0, 1]], bool)
    truth = GroundTruth.from_holdout([{2}, {0}], n_items=4)
    with pytest.warns(RuntimeWarning, match="no training clicks"):
        rec = evaluate(make_recs([[2, 1], [0, 2]]), truth, W, popular_cutoff=1)
    assert rec["novelty_excluded"] == 2
    assert rec["n_recommendations"] == 4
    assert rec["accuracy"] == 0.5
    assert rec["coverage"] == 0.75
    assert rec["correct_coverage"] == 0.5
    empty = evaluate(make_recs([[], []]), truth, W, popular_cutoff=1)
    assert empty["n_recommendations"] == 0
    assert empty["accuracy"] is None and empty["coverage"] is None and empty["novelty"] is None
