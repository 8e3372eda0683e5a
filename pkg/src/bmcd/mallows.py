"""Footrule Mallows model: distances, partition function, pmf and sampling."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from . import kernels
from ._backend import USE_NUMBA, py_func
from .exceptions import DimensionError, DomainError, ExtrapolationError, ParameterError

EXACT_MAX_N = 8
DP_MAX_N = 150
DEFAULT_MC_SAMPLES = 10_000_000


def default_alpha_grid():
    return np.round(np.arange(1, 401) * 0.05, 10)


def as_ranking(r, n=None):
    """Validate a 1-based rank vector and return it as an int64 array."""
    r = np.asarray(r, dtype=np.int64)
    if r.ndim != 1:
        raise DimensionError("a ranking must be one-dimensional")
    if n is not None and r.size != n:
        raise DimensionError(f"expected a ranking of length {n}, got {r.size}")
    if not np.array_equal(np.sort(r), np.arange(1, r.size + 1)):
        raise ParameterError("ranks must be a permutation of 1..n")
    return r


def order_from_ranks(r):
    """Inverse permutation: item at each rank (0-based items)."""
    r = np.asarray(r)
    order = np.empty_like(r)
    if r.ndim == 1:
        order[r - 1] = np.arange(r.size)
    else:
        np.put_along_axis(order, r - 1, np.arange(r.shape[-1])[None, :].repeat(r.shape[0], 0), axis=-1)
    return order


def footrule_distance(a, b):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape != b.shape:
        raise DimensionError(f"rankings of different lengths: {a.shape} vs {b.shape}")
    return int(np.abs(a - b).sum())


@dataclass(frozen=True, eq=False)
class MallowsParams:
    alpha: float
    rho: np.ndarray

    def __post_init__(self):
        if not self.alpha >= 0:
            raise DomainError(f"alpha must be non-negative, got {self.alpha}")
        object.__setattr__(self, "rho", as_ranking(self.rho))

    @property
    def n(self):
        return self.rho.size


def _all_permutations(n):
    return np.array(list(itertools.permutations(range(1, n + 1))), dtype=np.int64)


def exact_distance_histogram(n):
    """Counts of permutations of n items at each footrule distance from the identity."""
    if n > EXACT_MAX_N:
        raise ParameterError(f"exact enumeration is limited to n <= {EXACT_MAX_N}")
    d = np.abs(_all_permutations(n) - np.arange(1, n + 1)).sum(axis=1)
    counts = np.bincount(d)
    support = np.flatnonzero(counts)
    return support, counts[support]


def dp_distance_histogram(n):
    """Footrule distance histogram for any n by dynamic programming over positions.

    Scan positions and values 1..n together, tracking k = number of positions
    (equivalently values) seen but not yet matched. Every open position and
    open value adds 1 to the distance for each boundary it crosses, so a step
    ending with k open pairs adds 2k. From k open pairs, the new position P and
    value V can be: matched to each other (1 way, k), both matched to old open
    items (k^2 ways, k-1), one matched to an old item and the other left open
    (2k ways, k), or both left open (1 way, k+1). Counts are float64, exact
    up to n = 18 and accurate to rounding beyond.
    """
    if not 1 <= n <= DP_MAX_N:
        raise ParameterError(f"distance histogram by recursion is limited to 1 <= n <= {DP_MAX_N}")
    D = n * n // 2 + 1
    H = np.zeros((n // 2 + 2, D))
    H[0, 0] = 1.0
    for i in range(n):
        G = np.zeros_like(H)
        kmax = min(i, n - i) + 1
        for k in range(kmax):
            row = H[k]
            if not row.any():
                continue
            stay = (1.0 + 2.0 * k) * row
            sh = 2 * k
            G[k, sh:] += stay[:D - sh]
            if k > 0:
                sh = 2 * (k - 1)
                G[k - 1, sh:] += (k * k) * row[:D - sh]
            if k + 1 < H.shape[0] and 2 * (k + 1) < D:
                sh = 2 * (k + 1)
                G[k + 1, sh:] += row[:D - sh]
        H = G
    support = np.flatnonzero(H[0])
    return support, H[0, support]


def distance_histogram(n):
    return exact_distance_histogram(n) if n <= EXACT_MAX_N else dp_distance_histogram(n)


def mc_distance_histogram(n, samples, rng, chunk=1 << 16):
    """Histogram of footrule distances of uniform random permutations to the identity."""
    ident = np.arange(1, n + 1)
    counts = np.zeros(n * n // 2 + 1, dtype=np.int64)
    left = samples
    while left > 0:
        m = min(chunk, left)
        perms = np.argsort(rng.random((m, n)), axis=1) + 1
        counts += np.bincount(np.abs(perms - ident).sum(axis=1), minlength=counts.size)
        left -= m
    support = np.flatnonzero(counts)
    return support, counts[support]


@dataclass(frozen=True, eq=False)
class PartitionTable:
    """log Z_n(alpha) for the footrule Mallows model.

    Exact tables evaluate the full distance histogram at any alpha >= 0; the
    histogram comes from enumeration for n <= 8 and from the position
    recursion above that. Monte-Carlo tables interpolate ``log_z`` linearly between grid points and
    refuse to extrapolate.
    """

    n: int
    alpha_grid: np.ndarray
    log_z: np.ndarray
    method: str = "exact"
    mc_samples: int = 0
    distances: np.ndarray | None = field(default=None, repr=False)
    log_counts: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.method not in ("exact", "monte-carlo"):
            raise ParameterError(f"unknown partition method {self.method!r}")
        grid = np.asarray(self.alpha_grid, dtype=np.float64)
        log_z = np.asarray(self.log_z, dtype=np.float64)
        if grid.shape != log_z.shape or grid.ndim != 1 or grid.size < 2:
            raise DimensionError("alpha_grid and log_z must be equal-length vectors")
        if np.any(np.diff(grid) <= 0) or grid[0] < 0:
            raise ParameterError("alpha_grid must be strictly increasing and non-negative")
        if self.method == "exact" and self.distances is None:
            d, cnt = distance_histogram(self.n)
            object.__setattr__(self, "distances", d.astype(np.float64))
            object.__setattr__(self, "log_counts", np.log(cnt.astype(np.float64)))
        for name, arr in (("alpha_grid", grid), ("log_z", log_z)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def exact(cls, n, alpha_grid=None):
        d, cnt = distance_histogram(n)
        grid = default_alpha_grid() if alpha_grid is None else np.asarray(alpha_grid, float)
        dv = d.astype(np.float64)
        lc = np.log(cnt.astype(np.float64))
        log_z = logsumexp(lc[None, :] - grid[:, None] * dv[None, :] / n, axis=1)
        return cls(n, grid, log_z, "exact", 0, dv, lc)

    @classmethod
    def monte_carlo(cls, n, mc_samples=DEFAULT_MC_SAMPLES, alpha_grid=None, seed=0):
        rng = np.random.default_rng(seed)
        d, cnt = mc_distance_histogram(n, int(mc_samples), rng)
        grid = default_alpha_grid() if alpha_grid is None else np.asarray(alpha_grid, float)
        dv = d.astype(np.float64)
        lc = gammaln(n + 1) + np.log(cnt.astype(np.float64)) - math.log(mc_samples)
        log_z = logsumexp(lc[None, :] - grid[:, None] * dv[None, :] / n, axis=1)
        return cls(n, grid, log_z, "monte-carlo", int(mc_samples), dv, lc)

    @classmethod
    def build(cls, n, method="exact", mc_samples=DEFAULT_MC_SAMPLES, alpha_grid=None, seed=0):
        if method == "exact" and n <= DP_MAX_N:
            return cls.exact(n, alpha_grid)
        if method not in ("exact", "monte-carlo"):
            raise ParameterError(f"unknown partition method {method!r}")
        return cls.monte_carlo(n, mc_samples, alpha_grid, seed)

    @property
    def is_exact(self):
        return self.method == "exact"

    def kernel_args(self):
        """Arguments expected by :func:`bmcd.kernels.log_z_eval` after ``(alpha, n)``."""
        if self.is_exact:
            return True, self.distances, self.log_counts, self.alpha_grid, self.log_z
        empty = np.zeros(1)
        return False, empty, empty, self.alpha_grid, self.log_z

    def __call__(self, alpha):
        return log_partition(self.n, alpha, self)


def log_partition(n, alpha, table):
    if alpha < 0:
        raise DomainError(f"alpha must be non-negative, got {alpha}")
    if table.n != n:
        raise DimensionError(f"table is for n={table.n}, asked for n={n}")
    f = kernels.log_z_eval if USE_NUMBA else py_func(kernels.log_z_eval)
    value = f(float(alpha), n, *table.kernel_args())
    if math.isnan(value):
        raise ExtrapolationError(
            f"alpha={alpha} outside the Monte-Carlo grid [{table.alpha_grid[0]}, {table.alpha_grid[-1]}]"
        )
    return float(value)


def mallows_log_pmf(r, params, table):
    r = np.asarray(r, dtype=np.int64)
    if r.size != params.n:
        raise DimensionError(f"ranking has {r.size} items, model has {params.n}")
    d = footrule_distance(r, params.rho)
    return -params.alpha / params.n * d - log_partition(params.n, params.alpha, table)


def default_leap_size(n):
    return max(1, n // 20)


def _check_leap(leap_size, n):
    if n < 2:
        raise ParameterError("leap-and-shift needs at least two items")
    if not 1 <= leap_size <= n - 1:
        raise ParameterError(f"leap_size must lie in [1, {n - 1}], got {leap_size}")


def leap_and_shift(r, leap_size, rng):
    """One leap-and-shift proposal from ranking ``r``.

    Returns ``(proposal, log_forward, log_backward)`` where the log
    probabilities are those of the proposal kernel in each direction.
    """
    r = as_ranking(r)
    n = r.size
    _check_leap(leap_size, n)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    u = rng.random(2)
    item = min(int(u[0] * n), n - 1)
    ra = int(r[item])
    rb = int(py_func(kernels.leap_target)(ra, n, leap_size, u[1]))
    prop = r.copy()
    order = order_from_ranks(prop)
    py_func(kernels.move_item)(prop, order, item, rb)
    log_q = py_func(kernels.leap_log_q)
    return prop, float(log_q(ra, rb, n, leap_size)), float(log_q(rb, ra, n, leap_size))


def sample_mallows(params, count, burn_in=None, seed=None, thinning=None, leap_size=None,
                   start=None, chunk_steps=1 << 18):
    """Approximately independent draws from a Mallows distribution.

    Runs a single leap-and-shift Metropolis-Hastings chain started at the
    consensus (or ``start``), discards ``burn_in`` steps and keeps every
    ``thinning``-th state. Defaults: burn-in ``1000 n`` steps, thinning ``10 n``.
    Returns a ``(count, n)`` array of rank vectors.
    """
    if count < 1:
        raise ParameterError("count must be at least 1")
    n = params.n
    if n == 1:
        return np.ones((count, 1), dtype=np.int64)
    leap = default_leap_size(n) if leap_size is None else int(leap_size)
    _check_leap(leap, n)
    burn_in = 10 * n * 100 if burn_in is None else int(burn_in)
    thin = 10 * n if thinning is None else int(thinning)
    if thin < 1:
        raise ParameterError("thinning must be positive")
    rng = np.random.default_rng(seed)
    if params.alpha == 0:
        # uniform target; with leap 1 every move is an accepted transposition and the chain has period 2
        return np.argsort(rng.random((count, n)), axis=1) + 1
    rho = params.rho.copy()
    r = rho.copy() if start is None else as_ranking(start, n).copy()
    order = order_from_ranks(r)
    alpha = float(params.alpha)
    empty = np.empty((0, n), np.int64)
    left = burn_in
    while left > 0:
        m = min(chunk_steps, left)
        kernels.mallows_steps(r, order, rho, alpha, leap, rng.random((m, 3)), 0, empty)
        left -= m
    out = np.empty((count, n), np.int64)
    per_chunk = max(1, chunk_steps // thin)
    done = 0
    while done < count:
        m = min(per_chunk, count - done)
        kernels.mallows_steps(r, order, rho, alpha, leap, rng.random((m * thin, 3)), thin,
                              out[done:done + m])
        done += m
    return out
