"""Accuracy and diversity of recommendation lists."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import InputError, ParameterError


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Per-user relevant items: true next top-k (simulation) or held-out clicks."""

    relevant: np.ndarray
    mode: str = "simulation"

    @classmethod
    def from_rankings(cls, rankings, n_clicks, k):
        R = np.asarray(rankings, dtype=np.int64)
        c = np.asarray(n_clicks, dtype=np.int64)[:, None]
        if R.ndim != 2 or R.shape[0] != c.shape[0]:
            raise InputError("need one ranking and one click count per user")
        if not np.all(np.sort(R, axis=1) == np.arange(1, R.shape[1] + 1)):
            raise InputError("true rankings must be permutations")
        return cls((R > c) & (R <= c + k), "simulation")

    @classmethod
    def from_holdout(cls, heldout, n_items=None, train_clicked=None):
        if isinstance(heldout, np.ndarray) and heldout.ndim == 2:
            rel = heldout.astype(bool)
        else:
            heldout = list(heldout)
            rel = np.zeros((len(heldout), n_items), bool)
            for j, items in enumerate(heldout):
                rel[j, list(items)] = True
        if train_clicked is not None and np.any(rel & np.asarray(train_clicked, bool)):
            raise InputError("held-out items overlap training clicks")
        return cls(rel, "holdout")

    @property
    def n_users(self):
        return self.relevant.shape[0]

    def hits(self, recs):
        if recs.n_users > self.n_users or (len(recs) and recs.user.max() >= self.n_users):
            raise InputError("recommendations for users missing from the ground truth")
        return self.relevant[recs.user, recs.item]


@dataclass(frozen=True, eq=False)
class PopularityProfile:
    counts: np.ndarray

    @classmethod
    def from_clicks(cls, clicked):
        return cls(np.asarray(clicked, bool).sum(axis=0).astype(np.int64))

    @property
    def n_items(self):
        return self.counts.size

    @property
    def pop(self):
        total = self.counts.sum()
        return self.counts / total if total else np.zeros(self.n_items)

    @property
    def order(self):
        """Items from most to least clicked, ties by item index."""
        return np.lexsort((np.arange(self.n_items), -self.counts))

    def popular_mask(self, popular_cutoff):
        if not 0 <= popular_cutoff < self.n_items:
            raise ParameterError(f"popular_cutoff must lie in [0, {self.n_items - 1}]")
        mask = np.zeros(self.n_items, bool)
        mask[self.order[:popular_cutoff]] = True
        return mask


def accuracy(recs, truth, k=None):
    """Share of recommendations that are hits; NaN when there are none."""
    if len(recs) == 0:
        return math.nan
    return float(np.mean(truth.hits(recs)))


def coverage(recs, n_eligible):
    if n_eligible < 1:
        raise ParameterError("n_eligible must be >= 1")
    return np.unique(recs.item).size / n_eligible


def correct_coverage(recs, truth, n_eligible):
    if n_eligible < 1:
        raise ParameterError("n_eligible must be >= 1")
    h = truth.hits(recs)
    return np.unique(recs.item[h]).size / n_eligible


def cosine_matrix(clicked):
    """Binary cosine similarity between items; 0 whenever an item has no clicks."""
    W = np.asarray(clicked, dtype=np.float64)
    co = W.T @ W
    norm = np.sqrt(np.diag(co))
    denom = np.outer(norm, norm)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, co / np.where(denom > 0, denom, 1.0), 0.0)


def intra_list_similarity(recs, clicked):
    """(1/N) sum over users of pairwise cosine similarity within each list."""
    S = cosine_matrix(clicked)
    if recs.n_users == 0:
        return math.nan
    total = 0.0
    for j, items in _lists(recs):
        sub = S[np.ix_(items, items)]
        total += np.triu(sub, 1).sum()
    return total / recs.n_users


def _lists(recs):
    if len(recs) == 0:
        return
    order = np.lexsort((recs.position, recs.user))
    users = recs.user[order]
    items = recs.item[order]
    cuts = np.flatnonzero(np.diff(users)) + 1
    for u, it in zip(np.split(users, cuts), np.split(items, cuts)):
        yield int(u[0]), it


def novelty(recs, pop, k=None, return_excluded=False):
    """(1/N) sum_j sum_{i in list} |log2 pop_i| / k; zero-popularity items are skipped."""
    k = recs.k if k is None else k
    p = pop.pop[recs.item]
    zero = p <= 0
    n_excl = int(zero.sum())
    if n_excl:
        warnings.warn(f"{n_excl} recommended items have no training clicks; left out of novelty",
                      RuntimeWarning)
    val = float(np.abs(np.log2(p[~zero])).sum() / k / recs.n_users) if recs.n_users else math.nan
    return (val, n_excl) if return_excluded else val


def rare_item_stats(recs, pop, popular_cutoff):
    """(# recommendations of rare items, # users with at least one)."""
    rare = ~pop.popular_mask(popular_cutoff)[recs.item]
    return int(rare.sum()), int(np.unique(recs.user[rare]).size)


METRIC_FIELDS = ("n_recommendations", "accuracy", "coverage", "correct_coverage", "ils", "novelty",
                 "novelty_excluded", "rare_recommendations", "users_with_rare")


def evaluate(recs, truth, clicked, popular_cutoff, n_eligible=None):
    """Every metric as a flat record; ratios are None when no recommendation was made."""
    n_eligible = truth.relevant.shape[1] if n_eligible is None else n_eligible
    pop = PopularityProfile.from_clicks(clicked)
    rare, users_rare = rare_item_stats(recs, pop, popular_cutoff)
    rec = dict(n_recommendations=len(recs), rare_recommendations=rare, users_with_rare=users_rare)
    if len(recs) == 0:
        rec.update(accuracy=None, coverage=None, correct_coverage=None, ils=None, novelty=None,
                   novelty_excluded=0)
    else:
        nov, excl = novelty(recs, pop, return_excluded=True)
        rec.update(accuracy=accuracy(recs, truth), coverage=coverage(recs, n_eligible),
                   correct_coverage=correct_coverage(recs, truth, n_eligible),
                   ils=float(intra_list_similarity(recs, clicked)), novelty=nov, novelty_excluded=excl)
    return {f: rec[f] for f in METRIC_FIELDS}
