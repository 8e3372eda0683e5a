"""Synthetic click data from a Mallows mixture, and train/held-out splits."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputError, ParameterError
from .mallows import MallowsParams, as_ranking, sample_mallows

# Third consensus of the 50-item benchmark design. The published list has 49
# entries; 17 is the one value missing from 1..50 and is appended here, so
# this ranking is a reconstruction and not the original.
BENCH_RHO3 = (39, 36, 11, 1, 13, 12, 8, 48, 20, 49, 29, 32, 22, 28, 19, 5, 42, 18, 15, 7, 6, 27,
              24, 16, 46, 4, 21, 26, 34, 44, 25, 43, 41, 38, 35, 37, 45, 2, 14, 50, 40, 47, 9,
              23, 30, 31, 3, 10, 33, 17)

# fixed draw used as the third consensus of the 20-item design
SCALED_RHO3 = (3, 17, 14, 2, 10, 5, 1, 15, 11, 8, 19, 20, 6, 13, 16, 9, 4, 7, 18, 12)


@dataclass
class SimulationSpec:
    n_users: int
    n_items: int
    alphas: tuple
    rhos: tuple
    sizes: tuple
    click_rate: float = 5.0
    seed: int = 0
    note: str = ""

    def __post_init__(self):
        self.rhos = tuple(tuple(int(v) for v in r) for r in self.rhos)
        self.alphas = tuple(float(a) for a in self.alphas)
        self.sizes = tuple(int(s) for s in self.sizes)

    @property
    def n_clusters(self):
        return len(self.rhos)

    def validate(self):
        C = self.n_clusters
        if C < 1:
            raise ParameterError("need at least one cluster")
        if len(self.alphas) != C or len(self.sizes) != C:
            raise ParameterError("alphas, rhos and sizes must have one entry per cluster")
        if sum(self.sizes) != self.n_users or min(self.sizes) < 0:
            raise ParameterError("cluster sizes must be non-negative and sum to n_users")
        for r in self.rhos:
            if len(r) != self.n_items:
                raise ParameterError(f"consensus of length {len(r)} for n_items={self.n_items}")
            as_ranking(r)
        if min(self.alphas) < 0:
            raise ParameterError("alphas must be >= 0")
        if not self.click_rate > 0:
            raise ParameterError("click_rate must be > 0")
        return self

    @classmethod
    def mixture(cls, n_users, n_items, rhos, alpha=3.0, click_rate=5.0, seed=0, note=""):
        """Equal-size clusters sharing one scale."""
        C = len(rhos)
        sizes = [n_users // C + (c < n_users % C) for c in range(C)]
        return cls(n_users, n_items, [alpha] * C, rhos, sizes, click_rate, seed, note)

    @classmethod
    def benchmark(cls, seed=0):
        """3000 users, 50 items, three clusters at alpha=3, click rate 5."""
        n = 50
        return cls.mixture(3000, n, [range(1, n + 1), range(n, 0, -1), BENCH_RHO3], 3.0, 5.0, seed,
                           note="third consensus reconstructed: value 17 appended to a 49-entry list")

    @classmethod
    def scaled(cls, seed=0):
        """300 users, 20 items, three clusters at alpha=3, click rate 3."""
        n = 20
        return cls.mixture(300, n, [range(1, n + 1), range(n, 0, -1), SCALED_RHO3], 3.0, 3.0, seed)


@dataclass(frozen=True)
class SplitSpec:
    k_removed: int = 10
    min_retained: int = 3
    seed: int = 0


def _streams(seed, count):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def simulate_rankings(spec, thinning=None):
    """True rankings (N x n) and 0-based cluster labels, clusters in contiguous blocks."""
    spec.validate()
    n = spec.n_items
    thinning = 100 * n if thinning is None else thinning
    rngs = np.random.SeedSequence(spec.seed).spawn(spec.n_clusters + 1)
    blocks, labels = [], []
    for c in range(spec.n_clusters):
        if spec.sizes[c] == 0:
            continue
        params = MallowsParams(spec.alphas[c], np.array(spec.rhos[c]))
        seed = int(rngs[c].generate_state(1)[0])
        blocks.append(sample_mallows(params, spec.sizes[c], seed=seed, thinning=thinning))
        labels.append(np.full(spec.sizes[c], c))
    return np.concatenate(blocks), np.concatenate(labels)


def truncated_poisson(rate, size, rng, n_max=None):
    """Poisson draws conditioned on >= 1 by redrawing zeros; optionally capped at n_max."""
    out = rng.poisson(rate, size)
    zero = out == 0
    while zero.any():
        out[zero] = rng.poisson(rate, int(zero.sum()))
        zero = out == 0
    if n_max is not None and np.any(out > n_max):
        warnings.warn(f"{int(np.sum(out > n_max))} click counts above {n_max} clamped", RuntimeWarning)
        out = np.minimum(out, n_max)
    return out


def binarize_top_clicks(rankings, spec=None, rate=None, rng=None):
    """Click the c_j top-ranked items of each user, c_j truncated Poisson.

    Returns the N x n boolean click matrix.
    """
    R = np.asarray(rankings, dtype=np.int64)
    if rate is None:
        rate = spec.click_rate
    if rng is None:
        seed = spec.seed if spec is not None else 0
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(
            (spec.n_clusters if spec is not None else 0) + 1)[-1])
    c = truncated_poisson(rate, R.shape[0], rng, n_max=R.shape[1])
    return R <= c[:, None]


def simulate(spec):
    """(true rankings, cluster labels, click matrix) for one replicate."""
    R, labels = simulate_rankings(spec)
    return R, labels, binarize_top_clicks(R, spec)


def replicate_seed(master, r):
    """Seed of replicate r derived from a master seed."""
    return int(np.random.SeedSequence([int(master), int(r)]).generate_state(1)[0])


def hide_clicks(W, n_hide, min_retained, rng):
    """Move ``n_hide`` random clicks of each eligible user into a held-out mask.

    Users with fewer than ``n_hide + min_retained`` clicks keep all clicks and
    are flagged ineligible. Returns (train, held, eligible).
    """
    W = np.asarray(W, bool)
    c = W.sum(axis=1)
    eligible = c >= n_hide + min_retained
    keys = np.where(W, rng.random(W.shape), np.inf)
    ranks = np.argsort(np.argsort(keys, axis=1, kind="stable"), axis=1, kind="stable")
    held = W & (ranks < n_hide) & eligible[:, None]
    return W & ~held, held, eligible


@dataclass
class Split:
    train: np.ndarray
    heldout: np.ndarray
    users: np.ndarray  # original indices of the retained users
    n_excluded: int = 0
    extra: dict = field(default_factory=dict)


def split_holdout(data, spec):
    """Hold out ``k_removed`` random clicks per user; ineligible users are dropped."""
    W = np.asarray(data, bool) if isinstance(data, np.ndarray) else _to_matrix(data)
    if spec.k_removed < 1 or spec.min_retained < 1:
        raise ParameterError("k_removed and min_retained must be >= 1")
    train, held, eligible = hide_clicks(W, spec.k_removed, spec.min_retained,
                                        np.random.default_rng(spec.seed))
    users = np.flatnonzero(eligible)
    n_out = int(W.shape[0] - users.size)
    if n_out:
        warnings.warn(f"{n_out} users with fewer than {spec.k_removed + spec.min_retained} clicks excluded",
                      RuntimeWarning)
    if users.size == 0:
        raise InputError("no user has enough clicks to split")
    return Split(train[users], held[users], users, n_out)


def _to_matrix(data):
    from .sampler import click_matrix
    return click_matrix(data)
