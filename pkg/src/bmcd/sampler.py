"""MCMC for the clustered Mallows model on click data.

Each user's unobserved full ranking is a latent variable restricted to the
rankings that put every clicked item ahead of every unclicked item. One
iteration updates the cluster weights (Gibbs), every cluster's consensus and,
every ``alpha_update`` iterations, its scale (Metropolis-Hastings), then each
user's cluster label (Gibbs) and latent ranking (Metropolis-Hastings).
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import kernels
from ._backend import USE_NUMBA, set_threads
from .exceptions import InputError, ParameterError
from .mallows import PartitionTable, default_leap_size, order_from_ranks

logger = logging.getLogger(__name__)

_RHO_STEP = kernels.rho_step_nb if USE_NUMBA else kernels.rho_step_np
_ALPHA_STEP = kernels.alpha_step_nb if USE_NUMBA else kernels.alpha_step_np


@dataclass(frozen=True)
class ClickSet:
    """Items (0-based) one user clicked, out of ``n_items``."""

    items: tuple
    n_items: int

    def __post_init__(self):
        items = tuple(sorted(int(i) for i in self.items))
        if len(set(items)) != len(items):
            raise InputError("duplicate items in click set")
        if not items:
            raise InputError("a click set needs at least one click")
        if items[0] < 0 or items[-1] >= self.n_items:
            raise InputError(f"item index out of range [0, {self.n_items})")
        object.__setattr__(self, "items", items)

    @property
    def c(self):
        return len(self.items)


def click_matrix(data, n_items=None):
    """Boolean users x items matrix from a list of ClickSets or an array."""
    if isinstance(data, np.ndarray):
        W = np.asarray(data) != 0
        if W.ndim != 2:
            raise InputError("click matrix must be two-dimensional")
    else:
        data = list(data)
        if not data:
            raise InputError("no users in click data")
        n = n_items or data[0].n_items
        W = np.zeros((len(data), n), dtype=bool)
        for j, cs in enumerate(data):
            if cs.n_items != n:
                raise InputError("click sets disagree on the number of items")
            W[j, list(cs.items)] = True
    if W.shape[0] == 0:
        raise InputError("no users in click data")
    if not W.any(axis=1).all():
        raise InputError("every user needs at least one click")
    return W


def clicksets_from_matrix(W):
    W = np.asarray(W, dtype=bool)
    return [ClickSet(tuple(np.flatnonzero(row)), W.shape[1]) for row in W]


@dataclass
class ChainConfig:
    n_clusters: int = 1
    lam: float = 0.1
    psi: float = 10.0
    iter_max: int = 1_000_000
    burn_in: int = 500_000
    thinning: int = 100
    alpha_update: int = 10
    leap_size: int | None = None
    alpha_proposal_sd: float = 0.1
    augmentation_proposal: str = "swap"
    init: str = "random"
    alpha_init: float = 3.0
    seed: int = 0
    store_r_tilde: bool = False
    threads: int = 1

    def validate(self, n_items=None):
        if self.n_clusters < 1:
            raise ParameterError("n_clusters must be >= 1")
        if not self.lam > 0:
            raise ParameterError("lam must be > 0")
        if not self.psi > 0:
            raise ParameterError("psi must be > 0")
        if self.iter_max < 0 or self.burn_in < 0 or self.burn_in > self.iter_max:
            raise ParameterError("need 0 <= burn_in <= iter_max")
        if self.thinning < 1:
            raise ParameterError("thinning must be >= 1")
        if self.alpha_update < 1:
            raise ParameterError("alpha_update must be >= 1")
        if self.alpha_proposal_sd < 0:
            raise ParameterError("alpha_proposal_sd must be >= 0")
        if self.augmentation_proposal not in kernels.AUGMENTATION_MODES:
            raise ParameterError(f"augmentation_proposal must be one of {sorted(kernels.AUGMENTATION_MODES)}")
        if self.init not in ("random", "popularity"):
            raise ParameterError("init must be 'random' or 'popularity'")
        if not self.alpha_init > 0:
            raise ParameterError("alpha_init must be > 0")
        if n_items is not None and self.leap_size is not None:
            if not 0 <= self.leap_size <= max(1, n_items - 1):
                raise ParameterError(f"leap_size must lie in [0, {n_items - 1}]")
        return self

    def resolved_leap(self, n_items):
        if n_items < 2:
            return 0
        return default_leap_size(n_items) if self.leap_size is None else int(self.leap_size)


@dataclass
class ChainState:
    """All latent variables of one iteration. Cluster labels are 0-based."""

    alphas: np.ndarray
    rhos: np.ndarray
    tau: np.ndarray
    z: np.ndarray
    r_tilde: np.ndarray
    n_clicks: np.ndarray

    def copy(self):
        return ChainState(*(np.array(getattr(self, f)) for f in
                            ("alphas", "rhos", "tau", "z", "r_tilde", "n_clicks")))

    @property
    def n_clusters(self):
        return self.alphas.size

    def compatible(self, W=None):
        """True when every latent ranking puts the clicked items first."""
        if self.r_tilde.shape[0] == 0:
            return True
        if W is None:
            return True
        top = self.r_tilde <= self.n_clicks[:, None]
        return bool(np.array_equal(top, np.asarray(W, bool)))

    def check(self, W=None):
        n = self.rhos.shape[1]
        if not np.isclose(self.tau.sum(), 1.0, atol=1e-12, rtol=0) or np.any(self.tau <= 0):
            raise AssertionError("tau left the simplex")
        if self.z.size and (self.z.min() < 0 or self.z.max() >= self.n_clusters):
            raise AssertionError("cluster label out of range")
        ident = np.arange(1, n + 1)
        for mat in (self.rhos, self.r_tilde):
            if mat.size and not np.all(np.sort(mat, axis=1) == ident):
                raise AssertionError("rank vector is not a permutation")
        if not self.compatible(W):
            raise AssertionError("latent ranking incompatible with clicks")


def _dirichlet(rng, conc):
    if conc.size == 1:
        return np.ones(1)
    return rng.dirichlet(conc)


def _rows_ranks(order):
    N, n = order.shape
    R = np.empty_like(order)
    np.put_along_axis(R, order, np.arange(1, n + 1)[None, :].repeat(N, 0), axis=1)
    return R


def popularity_consensus(freq, rng):
    """Rank items by descending frequency, breaking ties at random."""
    freq = np.asarray(freq)
    order = np.lexsort((rng.random(freq.size), -freq))
    rho = np.empty(freq.size, np.int64)
    rho[order] = np.arange(1, freq.size + 1)
    return rho


def augmented_from_consensus(W, rho):
    """Latent rankings that rank clicked items first, each block in consensus order."""
    W = np.asarray(W, bool)
    n = W.shape[1]
    keys = (~W) * n + rho[None, :]
    return _rows_ranks(np.argsort(keys, axis=1, kind="stable"))


def init_random(data, config, rng=None):
    W = click_matrix(data)
    N, n = W.shape
    C = config.n_clusters
    rng = np.random.default_rng(config.seed) if rng is None else rng
    tau = _dirichlet(rng, np.full(C, config.psi))
    z = rng.integers(C, size=N)
    alphas = rng.exponential(1.0 / config.lam, size=C)
    rhos = np.stack([rng.permutation(n) + 1 for _ in range(C)])
    keys = rng.random((N, n)) + (~W)
    R = _rows_ranks(np.argsort(keys, axis=1, kind="stable"))
    return ChainState(alphas, rhos.astype(np.int64), tau, z.astype(np.int64), R.astype(np.int64),
                      W.sum(axis=1).astype(np.int64))


def init_popularity(data, config, rng=None):
    W = click_matrix(data)
    N, n = W.shape
    C = config.n_clusters
    rng = np.random.default_rng(config.seed) if rng is None else rng
    tau = _dirichlet(rng, np.full(C, config.psi))
    rho0 = popularity_consensus(W.sum(axis=0), rng)
    R = augmented_from_consensus(W, rho0)
    z = rng.integers(C, size=N)
    rhos = np.stack([popularity_consensus(W[z == c].sum(axis=0), rng) for c in range(C)])
    alphas = np.full(C, float(config.alpha_init))
    return ChainState(alphas, rhos.astype(np.int64), tau, z.astype(np.int64), R.astype(np.int64),
                      W.sum(axis=1).astype(np.int64))


def initial_state(data, config, rng=None):
    f = init_popularity if config.init == "popularity" else init_random
    return f(data, config, rng)


def state_from_rankings(rankings, config, rng=None):
    """Chain state whose latent rankings are fixed, fully observed rankings."""
    R = np.asarray(rankings, dtype=np.int64)
    W = np.ones_like(R, dtype=bool)
    st = init_random(W, config, rng)
    st.r_tilde = R.copy()
    return st


# ---------------------------------------------------------------------------
# single-site updates
# ---------------------------------------------------------------------------


def _log_z_all(alphas, table):
    return np.array([table(a) for a in alphas])


def update_tau(state, config, rng):
    counts = np.bincount(state.z, minlength=state.n_clusters)
    state.tau = _dirichlet(rng, config.psi + counts)
    return state.tau


def update_rho(state, c, config, rng, table=None):
    n = state.rhos.shape[1]
    leap = config.resolved_leap(n)
    if leap == 0:
        return state.rhos[c].copy(), False
    u = rng.random(3)
    rho = state.rhos[c]
    acc = _RHO_STEP(state.r_tilde, state.z, c, rho, order_from_ranks(rho), float(state.alphas[c]),
                    leap, u[0], u[1], u[2])
    return rho.copy(), bool(acc)


def update_alpha(state, c, config, rng, table):
    xi = rng.standard_normal()
    u = rng.random()
    logz = _log_z_all(state.alphas, table)
    res = _ALPHA_STEP(state.r_tilde, state.z, c, state.rhos[c], state.alphas, logz,
                      float(config.lam), float(config.alpha_proposal_sd), xi, u, *table.kernel_args())
    if res == -1:
        warnings.warn("alpha proposal outside the partition table grid was rejected", RuntimeWarning)
    return float(state.alphas[c]), res == 1


def _sweep_users(state, users, U, config, table, update_z, mode):
    C = state.n_clusters
    n = state.rhos.shape[1]
    # the normalising constants only enter the cluster draw
    logz = _log_z_all(state.alphas, table) if update_z else np.zeros(C)
    with np.errstate(divide="ignore"):
        log_tau = np.log(state.tau)
    order = order_from_ranks(state.r_tilde) if state.r_tilde.size else state.r_tilde.copy()
    flags = np.zeros(users.size, np.int64)
    kernels.user_sweep(state.r_tilde, order, state.n_clicks, state.z, state.rhos, state.alphas,
                       logz, log_tau, users, U, mode, config.resolved_leap(n), update_z,
                       np.zeros((users.size, C), np.int64), np.zeros((users.size, C)), flags)
    return flags


def update_z(state, j, config, rng, table):
    U = rng.random((1, 6))
    _sweep_users(state, np.array([j]), U, config, table, True, kernels.FIXED)
    return int(state.z[j])


def update_r_tilde(state, j, config, rng, table=None):
    U = rng.random((1, 6))
    mode = kernels.AUGMENTATION_MODES[config.augmentation_proposal]
    flags = _sweep_users(state, np.array([j]), U, config, table, False, mode)
    return state.r_tilde[j].copy(), bool(flags[0] == 2)


# ---------------------------------------------------------------------------
# posterior samples
# ---------------------------------------------------------------------------


@dataclass
class PosteriorSamples:
    """Thinned post-burn-in draws plus running diagnostics.

    ``rank_counts[j, i, r]`` counts the stored draws in which user j's latent
    ranking put item i at rank r + 1; it is all that top-k posterior
    probabilities need. Full latent rankings are kept only on request.
    """

    iterations: np.ndarray
    alphas: np.ndarray
    rhos: np.ndarray
    tau: np.ndarray
    z: np.ndarray
    wcd: np.ndarray
    cluster_sizes: np.ndarray
    log_post: np.ndarray
    acceptance: np.ndarray
    rank_counts: np.ndarray
    n_clicks: np.ndarray
    r_tilde: np.ndarray | None = None
    stats: dict = field(default_factory=dict)
    final_state: ChainState | None = None

    @property
    def n_samples(self):
        return int(self.iterations.size)

    @property
    def n_clusters(self):
        return int(self.alphas.shape[1]) if self.alphas.ndim == 2 else 0

    @classmethod
    def from_states(cls, states, iterations=None, table=None, config=None):
        """Build samples from explicit chain states (for hand-built checks)."""
        states = list(states)
        if not states:
            raise InputError("no states given")
        N, n = states[0].r_tilde.shape
        C = states[0].n_clusters
        counts = np.zeros((N, n, n), np.int32)
        wcd, sizes, lp = [], [], []
        for st in states:
            kernels.accumulate_rank_counts(st.r_tilde, counts)
            wcd.append(kernels.within_cluster_distance(st.r_tilde, st.z, st.rhos))
            sizes.append(np.bincount(st.z, minlength=C))
            lp.append(log_posterior(st, table, config) if table is not None else np.nan)
        S = len(states)
        return cls(
            iterations=np.arange(1, S + 1) if iterations is None else np.asarray(iterations),
            alphas=np.stack([s.alphas for s in states]),
            rhos=np.stack([s.rhos for s in states]),
            tau=np.stack([s.tau for s in states]),
            z=np.stack([s.z for s in states]).astype(np.int16),
            wcd=np.asarray(wcd, np.int64),
            cluster_sizes=np.stack(sizes),
            log_post=np.asarray(lp, float),
            acceptance=np.full((S, 3), np.nan),
            rank_counts=counts,
            n_clicks=states[0].n_clicks.copy(),
            r_tilde=np.stack([s.r_tilde for s in states]).astype(np.int16),
            final_state=states[-1].copy(),
        )

    def save(self, path):
        from .io import save_npz

        arrays = {k: v for k, v in asdict_shallow(self).items() if isinstance(v, np.ndarray)}
        for k, v in self.stats.items():
            arrays[f"stat_{k}"] = np.asarray(v)
        if self.final_state is not None:
            for k, v in asdict_shallow(self.final_state).items():
                arrays[f"final_{k}"] = v
        save_npz(path, arrays)

    @classmethod
    def load(cls, path):
        from .io import load_npz

        data = load_npz(path)
        stats = {k[5:]: data.pop(k).item() for k in list(data) if k.startswith("stat_")}
        final = {k[6:]: data.pop(k) for k in list(data) if k.startswith("final_")}
        return cls(stats=stats, final_state=ChainState(**final) if final else None, **data)


def asdict_shallow(obj):
    return {f: getattr(obj, f) for f in obj.__dataclass_fields__}


def log_posterior(state, table, config):
    """Unnormalised log joint density of a chain state given the latent rankings."""
    n = state.rhos.shape[1]
    logz = _log_z_all(state.alphas, table)
    d = np.abs(state.r_tilde - state.rhos[state.z]).sum(axis=1)
    a = state.alphas[state.z]
    with np.errstate(divide="ignore"):
        log_tau = np.log(state.tau)
    lp = float(np.sum(log_tau[state.z] - a / n * d - logz[state.z]))
    lp += float(-config.lam * state.alphas.sum() + (config.psi - 1.0) * log_tau.sum())
    return lp


def mwcd(samples):
    """Posterior mean of the summed within-cluster footrule distances."""
    if samples.n_samples == 0:
        raise InputError("no posterior samples")
    return float(np.mean(samples.wcd))


def relabel(samples):
    """Align cluster labels of every draw to the highest-posterior draw.

    Labels are permuted per draw to minimise the total footrule distance
    between its consensus rankings and those of the reference draw.
    """
    if samples.n_samples == 0:
        return samples
    ref = samples.rhos[int(np.nanargmax(samples.log_post)) if np.isfinite(samples.log_post).any() else -1]
    C = samples.n_clusters
    perms = np.empty((samples.n_samples, C), np.int64)
    for s in range(samples.n_samples):
        cost = np.abs(samples.rhos[s][:, None, :] - ref[None, :, :]).sum(axis=2)
        rows, cols = linear_sum_assignment(cost)
        perm = np.empty(C, np.int64)
        perm[cols] = rows  # new label `cols` takes old cluster `rows`
        perms[s] = perm
    inverse = np.argsort(perms, axis=1)
    idx = np.arange(samples.n_samples)[:, None]
    return replace(
        samples,
        alphas=samples.alphas[idx, perms],
        rhos=samples.rhos[idx, perms],
        tau=samples.tau[idx, perms],
        cluster_sizes=samples.cluster_sizes[idx, perms],
        z=inverse[idx, samples.z.astype(np.int64)].astype(samples.z.dtype),
    )


# ---------------------------------------------------------------------------
# the chain
# ---------------------------------------------------------------------------


def _block_len(N, C):
    return max(1, min(4096, 2_000_000 // max(1, 6 * N + 5 * C)))


def run_chain(data, config, table=None, init=None, callback=None):
    """Run the full sampler and return thinned post-burn-in samples.

    ``init`` overrides the initial state built from ``config.init``.
    ``callback(t, state)``, if given, is called after every iteration.
    Results depend only on (data, config, table, init): the random streams
    for cluster weights, cluster parameters and users are spawned from
    ``config.seed`` and the per-user kernel is independent of thread count.
    """
    W = click_matrix(data)
    N, n = W.shape
    config.validate(n)
    C = config.n_clusters
    if table is None:
        table = PartitionTable.build(n)
    if table.n != n:
        raise ParameterError(f"partition table is for n={table.n}, data has n={n}")
    ss = np.random.SeedSequence(config.seed)
    g_init, g_tau, g_clu, g_usr = (np.random.default_rng(s) for s in ss.spawn(4))
    state = (initial_state(W, config, g_init) if init is None else init.copy())
    if state.r_tilde.shape != (N, n) or state.n_clusters != C:
        raise ParameterError("initial state does not match data and n_clusters")
    state.check(W if config.augmentation_proposal != "none" else None)

    leap = config.resolved_leap(n)
    mode = kernels.AUGMENTATION_MODES[config.augmentation_proposal]
    exact, dvals, log_counts, grid, grid_logz = table.kernel_args()
    logz = _log_z_all(state.alphas, table)
    rho_orders = order_from_ranks(state.rhos)
    r_order = order_from_ranks(state.r_tilde)
    users = np.arange(N)
    dist_scratch = np.zeros((N, C), np.int64)
    logit_scratch = np.zeros((N, C))
    flags = np.zeros(N, np.int64)
    cstats = np.zeros(5, np.int64)
    ustats = np.zeros(2, np.int64)
    sweep = kernels.user_sweep
    if config.threads > 1 and USE_NUMBA:
        set_threads(config.threads)
        sweep = kernels.user_sweep_par

    n_store = (config.iter_max - config.burn_in) // config.thinning
    if n_store == 0:
        warnings.warn("iter_max - burn_in leaves no stored samples", RuntimeWarning)
    S = n_store
    out = dict(
        iterations=np.zeros(S, np.int64), alphas=np.zeros((S, C)), rhos=np.zeros((S, C, n), np.int16 if n < 32000 else np.int64),
        tau=np.zeros((S, C)), z=np.zeros((S, N), np.int16), wcd=np.zeros(S, np.int64),
        cluster_sizes=np.zeros((S, C), np.int64), log_post=np.zeros(S), acceptance=np.zeros((S, 3)),
    )
    rank_counts = np.zeros((N, n, n), np.int32)
    r_store = np.zeros((S, N, n), np.int16) if config.store_r_tilde else None

    B = _block_len(N, C)
    lam, sigma = float(config.lam), float(config.alpha_proposal_sd)
    s_idx = 0
    for start in range(1, config.iter_max + 1, B):
        b = min(B, config.iter_max - start + 1)
        UU = g_usr.random((b, N, 6))
        UC = g_clu.random((b, C, 3))
        XI = g_clu.standard_normal((b, C))
        UA = g_clu.random((b, C))
        for off in range(b):
            t = start + off
            counts = np.bincount(state.z, minlength=C)
            state.tau = _dirichlet(g_tau, config.psi + counts)
            kernels.cluster_sweep(state.r_tilde, state.z, state.rhos, rho_orders, state.alphas, logz,
                                  UC[off], XI[off], UA[off], t % config.alpha_update == 0, leap, sigma, lam,
                                  exact, dvals, log_counts, grid, grid_logz, cstats)
            with np.errstate(divide="ignore"):
                log_tau = np.log(state.tau)
            sweep(state.r_tilde, r_order, state.n_clicks, state.z, state.rhos, state.alphas, logz,
                  log_tau, users, UU[off], mode, leap, True, dist_scratch, logit_scratch, flags)
            ustats[0] += np.count_nonzero(flags)
            ustats[1] += np.count_nonzero(flags == 2)
            if callback is not None:
                callback(t, state)
            if t > config.burn_in and (t - config.burn_in) % config.thinning == 0:
                _store(out, s_idx, t, state, table, config, cstats, ustats, logz)
                kernels.accumulate_rank_counts(state.r_tilde, rank_counts)
                if r_store is not None:
                    r_store[s_idx] = state.r_tilde
                s_idx += 1

    if cstats[4]:
        warnings.warn(f"{cstats[4]} alpha proposals fell outside the partition table grid and were rejected",
                      RuntimeWarning)
    stats = dict(rho_proposed=int(cstats[0]), rho_accepted=int(cstats[1]), alpha_proposed=int(cstats[2]),
                 alpha_accepted=int(cstats[3]), alpha_off_grid=int(cstats[4]),
                 r_tilde_proposed=int(ustats[0]), r_tilde_accepted=int(ustats[1]))
    return PosteriorSamples(rank_counts=rank_counts, n_clicks=state.n_clicks.copy(), r_tilde=r_store,
                            stats=stats, final_state=state, **out)


def _rate(acc, prop):
    return acc / prop if prop else np.nan


def _store(out, s, t, state, table, config, cstats, ustats, logz):
    n = state.rhos.shape[1]
    C = state.n_clusters
    out["iterations"][s] = t
    out["alphas"][s] = state.alphas
    out["rhos"][s] = state.rhos
    out["tau"][s] = state.tau
    out["z"][s] = state.z
    d = np.abs(state.r_tilde - state.rhos[state.z]).sum(axis=1)
    out["wcd"][s] = d.sum()
    out["cluster_sizes"][s] = np.bincount(state.z, minlength=C)
    a = state.alphas[state.z]
    with np.errstate(divide="ignore"):
        log_tau = np.log(state.tau)
    out["log_post"][s] = (np.sum(log_tau[state.z] - a / n * d - logz[state.z])
                          - config.lam * state.alphas.sum() + (config.psi - 1.0) * log_tau.sum())
    out["acceptance"][s] = (_rate(cstats[1], cstats[0]), _rate(cstats[3], cstats[2]),
                            _rate(ustats[1], ustats[0]))


# ---------------------------------------------------------------------------
# choosing the number of clusters
# ---------------------------------------------------------------------------


def mwcd_curve(data, c_values, config, table=None):
    """MWCD for each candidate number of clusters (one chain per value)."""
    W = click_matrix(data)
    table = PartitionTable.build(W.shape[1]) if table is None else table
    curve = {}
    for C in c_values:
        samples = run_chain(W, replace(config, n_clusters=int(C)), table)
        curve[int(C)] = mwcd(samples)
    return curve


def kmeans_select(data, c_candidates, n_init=10, seed=0):
    """Within-cluster sum of squares of K-means on binary click vectors, per C."""
    from sklearn.cluster import KMeans

    W = click_matrix(data).astype(np.float64)
    out = {}
    for C in c_candidates:
        C = int(C)
        if C < 1 or C > W.shape[0]:
            raise ParameterError(f"number of clusters {C} must lie in [1, {W.shape[0]}]")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            km = KMeans(n_clusters=C, init="k-means++", n_init=n_init, algorithm="lloyd",
                        random_state=seed).fit(W)
        out[C] = float(max(km.inertia_, 0.0))
    return out
