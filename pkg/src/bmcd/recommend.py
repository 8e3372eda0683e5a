"""Top-k recommendations from posterior rank probabilities, cutoffs and calibration."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import InputError, ParameterError
from .sampler import click_matrix

DEFAULT_BIN_WIDTH = 0.01


@dataclass(frozen=True, eq=False)
class TppMatrix:
    """Posterior probability that each item lands in a user's next top-k.

    Stored as integer counts over ``n_samples`` draws; ``values`` divides once.
    Rows sum to ``n_samples * (c_j + k)`` in counts.
    """

    counts: np.ndarray
    n_samples: int
    k: int
    n_clicks: np.ndarray
    clicked: np.ndarray

    @property
    def values(self):
        return self.counts / self.n_samples

    @property
    def shape(self):
        return self.counts.shape


def compute_tpp(samples, data, k):
    """TPP_ij = fraction of stored draws with latent rank of item i <= c_j + k."""
    if samples.n_samples == 0:
        raise InputError("no posterior samples")
    if k < 1:
        raise ParameterError("k must be >= 1")
    W = click_matrix(data)
    N, n = W.shape
    if samples.rank_counts.shape != (N, n, n):
        raise InputError("posterior samples do not match the click data")
    c = W.sum(axis=1)
    if not np.array_equal(c, samples.n_clicks):
        raise InputError("click counts differ from those the chain was run on")
    cutoff = np.minimum(c + k, n)
    cum = np.cumsum(samples.rank_counts, axis=2, dtype=np.int64)
    counts = cum[np.arange(N), :, cutoff - 1]
    return TppMatrix(counts, samples.n_samples, int(k), c, W)


@dataclass(frozen=True, eq=False)
class RecommendationList:
    """Flat table of recommendations; ``position`` is 1-based within a user's list."""

    user: np.ndarray
    position: np.ndarray
    item: np.ndarray
    score: np.ndarray
    n_users: int
    k: int

    def __len__(self):
        return int(self.item.size)

    def items_for(self, j):
        return self.item[self.user == j]

    def per_user_counts(self):
        return np.bincount(self.user, minlength=self.n_users)

    def subset(self, mask):
        return RecommendationList(self.user[mask], self.position[mask], self.item[mask],
                                  self.score[mask], self.n_users, self.k)

    def as_lists(self):
        return [list(self.items_for(j)) for j in range(self.n_users)]

    def equals(self, other):
        return (self.n_users == other.n_users and self.k == other.k
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f in ("user", "position", "item", "score")))


def top_k_from_scores(scores, clicked, k, sort_keys=None):
    """k best unclicked items per user, ties broken by smaller item index.

    ``sort_keys`` (defaults to ``scores``) decides the order; integer keys
    avoid float ties that the reported scores might hide.
    """
    scores = np.asarray(scores, dtype=np.float64)
    clicked = np.asarray(clicked, dtype=bool)
    if scores.shape != clicked.shape:
        raise InputError("scores and clicks must have the same shape")
    if k < 1:
        raise ParameterError("k must be >= 1")
    N, n = scores.shape
    keys = scores if sort_keys is None else np.asarray(sort_keys, dtype=np.float64)
    keys = np.where(clicked, np.inf, -keys)
    order = np.argsort(keys, axis=1, kind="stable")
    avail = n - clicked.sum(axis=1)
    take = np.minimum(avail, k)
    if np.any(take < k):
        warnings.warn(f"{int(np.sum(take < k))} users have fewer than {k} unclicked items; "
                      "their lists are short", RuntimeWarning)
    pos = np.arange(k)[None, :]
    valid = pos < take[:, None]
    kk = min(k, n)
    sel = order[:, :kk]
    valid = valid[:, :kk]
    users = np.broadcast_to(np.arange(N)[:, None], sel.shape)[valid]
    items = sel[valid]
    return RecommendationList(users.astype(np.int64), np.broadcast_to(pos[:, :kk] + 1, sel.shape)[valid].astype(np.int64),
                              items.astype(np.int64), scores[users, items], N, int(k))


def recommend_top_k(tpp, k=None):
    k = tpp.k if k is None else int(k)
    return top_k_from_scores(tpp.values, tpp.clicked, k, sort_keys=tpp.counts)


def recommend_by_score(scores, data, k):
    return top_k_from_scores(scores, click_matrix(data), k)


def recommend_popular(data, k):
    """Globally most-clicked unclicked items for everyone (the popularity baseline)."""
    W = click_matrix(data)
    pop = W.sum(axis=0).astype(np.float64)
    return top_k_from_scores(np.broadcast_to(pop, W.shape), W, k)


def apply_cutoff(recs, threshold):
    """Drop recommendations whose score is below ``threshold``.

    Returns the surviving list and the per-user surviving counts.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ParameterError("threshold must lie in [0, 1]")
    kept = recs.subset(recs.score >= threshold)
    return kept, kept.per_user_counts()


def cutoff_sweep(recs, hits, thresholds):
    """(threshold, surviving count, accuracy) rows; accuracy is NaN when nothing survives."""
    hits = np.asarray(hits, dtype=bool)
    rows = []
    for t in thresholds:
        mask = recs.score >= t
        m = int(mask.sum())
        rows.append((float(t), m, float(hits[mask].mean()) if m else math.nan))
    return rows


@dataclass(frozen=True, eq=False)
class CalibrationTable:
    bin_low: np.ndarray
    bin_high: np.ndarray
    mean_tpp: np.ndarray
    hit_rate: np.ndarray
    count: np.ndarray

    def __len__(self):
        return int(self.count.size)

    def restrict(self, min_count):
        m = self.count >= min_count
        return CalibrationTable(self.bin_low[m], self.bin_high[m], self.mean_tpp[m], self.hit_rate[m],
                                self.count[m])


def bin_index(values, bin_width):
    """Bins [m w, (m+1) w) anchored at 0, the last one closed at 1."""
    n_bins = int(math.ceil(round(1.0 / bin_width, 9)))
    m = np.floor(np.round(np.asarray(values, float) / bin_width, 9)).astype(np.int64)
    return np.clip(m, 0, n_bins - 1), n_bins


def calibration_bins(recs, hits, bin_width=DEFAULT_BIN_WIDTH):
    """Mean score and hit rate per score bin, for nonempty bins."""
    if not 0.0 < bin_width <= 1.0:
        raise ParameterError("bin_width must lie in (0, 1]")
    hits = np.asarray(hits, dtype=np.float64)
    if hits.shape != recs.score.shape:
        raise InputError("need one truth indicator per recommendation")
    idx, n_bins = bin_index(recs.score, bin_width)
    count = np.bincount(idx, minlength=n_bins)
    s_tpp = np.bincount(idx, weights=recs.score, minlength=n_bins)
    s_hit = np.bincount(idx, weights=hits, minlength=n_bins)
    nz = np.flatnonzero(count)
    low = np.round(nz * bin_width, 12)
    high = np.minimum(np.round((nz + 1) * bin_width, 12), 1.0)
    return CalibrationTable(low, high, s_tpp[nz] / count[nz], s_hit[nz] / count[nz], count[nz])
