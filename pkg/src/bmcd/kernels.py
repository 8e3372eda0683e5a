"""Hot loops of the Mallows sampler.

Every stochastic kernel consumes uniforms and normals drawn beforehand by
the caller from a ``numpy.random.Generator``. The numba and numpy versions
therefore walk the same Markov chain for a given seed, and the public names
at the bottom of this module pick one of them according to
:data:`bmcd._backend.USE_NUMBA`.

Conventions: ranks are 1-based, ``order[p]`` is the item at rank ``p + 1``,
cluster labels are 0-based.

Layout of the per-user uniforms ``U`` (one row per user, 6 columns):
column 0 drives the cluster draw, columns 1-4 the latent-ranking proposal,
column 5 its accept/reject test. Per-cluster uniforms ``UC`` hold
(item, target rank, accept) for the consensus move.
"""
import math

import numpy as np

from ._backend import USE_NUMBA, njit, prange, py_func

SWAP = 0
LEAP_SHIFT = 1
FIXED = 2

AUGMENTATION_MODES = {"swap": SWAP, "two-part-leap-shift": LEAP_SHIFT, "none": FIXED}


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------


@njit(cache=True)
def footrule_rows_nb(R, rho):
    m, n = R.shape
    out = np.empty(m, np.int64)
    for j in range(m):
        s = 0
        for i in range(n):
            s += abs(R[j, i] - rho[i])
        out[j] = s
    return out


def footrule_rows_np(R, rho):
    return np.abs(R - rho[None, :]).sum(axis=1).astype(np.int64)


@njit(cache=True)
def within_cluster_distance_nb(R, z, rhos):
    N, n = R.shape
    total = 0
    for j in range(N):
        c = z[j]
        for i in range(n):
            total += abs(R[j, i] - rhos[c, i])
    return total


def within_cluster_distance_np(R, z, rhos):
    return int(np.abs(R - rhos[z]).sum())


@njit(cache=True)
def accumulate_rank_counts_nb(R, counts):
    N, n = R.shape
    for j in range(N):
        for i in range(n):
            counts[j, i, R[j, i] - 1] += 1


def accumulate_rank_counts_np(R, counts):
    N, n = R.shape
    flat = (np.arange(N)[:, None] * n + np.arange(n)[None, :]) * n + (R - 1)
    counts += np.bincount(flat.ravel(), minlength=N * n * n).reshape(N, n, n)


# ---------------------------------------------------------------------------
# partition function lookup
# ---------------------------------------------------------------------------


@njit(cache=True)
def log_z_eval(alpha, n, exact, dvals, log_counts, grid, grid_logz):
    """log Z_n(alpha); NaN when a Monte-Carlo table would have to extrapolate."""
    if exact:
        top = -np.inf
        for k in range(dvals.size):
            t = log_counts[k] - alpha * dvals[k] / n
            if t > top:
                top = t
        s = 0.0
        for k in range(dvals.size):
            s += math.exp(log_counts[k] - alpha * dvals[k] / n - top)
        return top + math.log(s)
    if alpha < grid[0] or alpha > grid[grid.size - 1]:
        return np.nan
    return np.interp(alpha, grid, grid_logz)


# ---------------------------------------------------------------------------
# leap-and-shift primitives (block-local, 1-based ranks)
# ---------------------------------------------------------------------------


@njit(cache=True)
def window_size(r, m, leap):
    """Number of admissible target ranks for an item currently at rank r."""
    return min(m, r + leap) - max(1, r - leap)


@njit(cache=True)
def leap_target(r, m, leap, u):
    lo = max(1, r - leap)
    size = min(m, r + leap) - lo
    k = int(u * size)
    if k >= size:
        k = size - 1
    t = lo + k
    if t >= r:
        t += 1
    return t


@njit(cache=True)
def leap_log_q(ra, rb, m, leap):
    """log probability that one leap-and-shift step moves rank ra to rb.

    An adjacent move can also be produced by picking the neighbour and
    leaping it the other way, hence the two-term case.
    """
    if abs(ra - rb) == 1:
        return math.log(1.0 / window_size(ra, m, leap) + 1.0 / window_size(rb, m, leap)) - math.log(m)
    return -math.log(m) - math.log(window_size(ra, m, leap))


@njit(cache=True)
def move_item(rank, order, item, new_rank):
    """Move ``item`` to ``new_rank`` and shift the items in between by one."""
    a = rank[item] - 1
    b = new_rank - 1
    if b > a:
        for p in range(a + 1, b + 1):
            it = order[p]
            order[p - 1] = it
            rank[it] = p
    elif b < a:
        for p in range(a - 1, b - 1, -1):
            it = order[p]
            order[p + 1] = it
            rank[it] = p + 2
    order[b] = item
    rank[item] = b + 1


def window_size_np(r, m, leap):
    return np.minimum(m, r + leap) - np.maximum(1, r - leap)


def leap_target_np(r, m, leap, u):
    lo = np.maximum(1, r - leap)
    size = np.minimum(m, r + leap) - lo
    k = np.minimum((u * size).astype(np.int64), size - 1)
    t = lo + k
    return t + (t >= r)


def leap_log_q_np(ra, rb, m, leap):
    sa = window_size_np(ra, m, leap).astype(np.float64)
    sb = window_size_np(rb, m, leap).astype(np.float64)
    adjacent = np.abs(ra - rb) == 1
    with np.errstate(divide="ignore"):
        return np.where(
            adjacent,
            np.log(1.0 / sa + 1.0 / np.where(adjacent, sb, 1.0)) - np.log(m),
            -np.log(m) - np.log(sa),
        )


# ---------------------------------------------------------------------------
# direct Mallows chain
# ---------------------------------------------------------------------------


@njit(cache=True)
def mallows_steps_nb(r, order, rho, alpha, leap, U, thin, out):
    """Leap-and-shift M-H steps targeting exp(-alpha/n d(r, rho)).

    Runs ``len(U)`` steps; when ``thin > 0`` the state after every
    ``thin``-th step is copied into consecutive rows of ``out``.
    Returns the number of accepted proposals.
    """
    n = r.size
    accepted = 0
    for s in range(U.shape[0]):
        item = min(int(U[s, 0] * n), n - 1)
        ra = r[item]
        rb = leap_target(ra, n, leap, U[s, 1])
        lo = min(ra, rb)
        hi = max(ra, rb)
        old = 0
        for p in range(lo - 1, hi):
            it = order[p]
            old += abs(r[it] - rho[it])
        move_item(r, order, item, rb)
        new = 0
        for p in range(lo - 1, hi):
            it = order[p]
            new += abs(r[it] - rho[it])
        log_acc = leap_log_q(rb, ra, n, leap) - leap_log_q(ra, rb, n, leap) - alpha / n * (new - old)
        if log_acc >= 0.0 or U[s, 2] < math.exp(log_acc):
            accepted += 1
        else:
            move_item(r, order, item, ra)
        if thin > 0 and (s + 1) % thin == 0:
            out[(s + 1) // thin - 1, :] = r
    return accepted


# the chain is inherently sequential; the fallback runs the same loop interpreted
mallows_steps_np = py_func(mallows_steps_nb)


# ---------------------------------------------------------------------------
# consensus and scale updates
# ---------------------------------------------------------------------------


@njit(cache=True)
def rho_step_nb(R, z, c, rho, rho_order, alpha, leap, u_item, u_target, u_acc):
    """One leap-and-shift M-H update of the consensus of cluster c. Returns 1 if accepted."""
    N, n = R.shape
    item = min(int(u_item * n), n - 1)
    ra = rho[item]
    rb = leap_target(ra, n, leap, u_target)
    lo = min(ra, rb)
    hi = max(ra, rb)
    width = hi - lo + 1
    aff = np.empty(width, np.int64)
    old_rank = np.empty(width, np.int64)
    for p in range(width):
        it = rho_order[lo - 1 + p]
        aff[p] = it
        old_rank[p] = rho[it]
    move_item(rho, rho_order, item, rb)
    delta = 0
    for j in range(N):
        if z[j] != c:
            continue
        for p in range(width):
            it = aff[p]
            delta += abs(R[j, it] - rho[it]) - abs(R[j, it] - old_rank[p])
    log_acc = leap_log_q(rb, ra, n, leap) - leap_log_q(ra, rb, n, leap) - alpha / n * delta
    if log_acc >= 0.0 or u_acc < math.exp(log_acc):
        return 1
    move_item(rho, rho_order, item, ra)
    return 0


def rho_step_np(R, z, c, rho, rho_order, alpha, leap, u_item, u_target, u_acc):
    N, n = R.shape
    item = min(int(u_item * n), n - 1)
    ra = int(rho[item])
    rb = int(leap_target_np(np.int64(ra), n, leap, u_target))
    lo, hi = min(ra, rb), max(ra, rb)
    aff = rho_order[lo - 1:hi].copy()
    new_rho = rho.copy()
    if rb > ra:
        new_rho[aff[1:]] -= 1
    else:
        new_rho[aff[:-1]] += 1
    new_rho[item] = rb
    members = R[z == c][:, aff]
    delta = int(np.abs(members - new_rho[aff]).sum() - np.abs(members - rho[aff]).sum())
    log_acc = float(leap_log_q_np(rb, ra, n, leap) - leap_log_q_np(ra, rb, n, leap)) - alpha / n * delta
    if log_acc >= 0.0 or u_acc < np.exp(log_acc):
        rho[:] = new_rho
        rho_order[new_rho[aff] - 1] = aff
        return 1
    return 0


@njit(cache=True)
def alpha_step_nb(R, z, c, rho, alphas, logz, lam, sigma, xi, u_acc,
                  exact, dvals, log_counts, grid, grid_logz):
    """Log-normal random-walk M-H update of alpha_c.

    Returns 1 if accepted, 0 if rejected, -1 if the proposal fell outside the
    partition table (rejected and counted by the caller).
    """
    N, n = R.shape
    alpha = alphas[c]
    proposal = alpha * math.exp(sigma * xi)
    lz = log_z_eval(proposal, n, exact, dvals, log_counts, grid, grid_logz)
    if math.isnan(lz):
        return -1
    dist = 0
    size = 0
    for j in range(N):
        if z[j] != c:
            continue
        size += 1
        for i in range(n):
            dist += abs(R[j, i] - rho[i])
    log_acc = (-(proposal - alpha) / n * dist - size * (lz - logz[c])
               - lam * (proposal - alpha) + math.log(proposal / alpha))
    if log_acc >= 0.0 or u_acc < math.exp(log_acc):
        alphas[c] = proposal
        logz[c] = lz
        return 1
    return 0


def alpha_step_np(R, z, c, rho, alphas, logz, lam, sigma, xi, u_acc,
                  exact, dvals, log_counts, grid, grid_logz):
    n = R.shape[1]
    alpha = alphas[c]
    proposal = alpha * np.exp(sigma * xi)
    lz = py_func(log_z_eval)(proposal, n, exact, dvals, log_counts, grid, grid_logz)
    if np.isnan(lz):
        return -1
    members = z == c
    size = int(members.sum())
    dist = int(np.abs(R[members] - rho).sum())
    log_acc = (-(proposal - alpha) / n * dist - size * (lz - logz[c])
               - lam * (proposal - alpha) + np.log(proposal / alpha))
    if log_acc >= 0.0 or u_acc < np.exp(log_acc):
        alphas[c] = proposal
        logz[c] = lz
        return 1
    return 0


@njit(cache=True)
def cluster_sweep_nb(R, z, rhos, rho_orders, alphas, logz, UC, XI, UA, do_alpha, leap,
                     sigma, lam, exact, dvals, log_counts, grid, grid_logz, stats):
    """rho_c then (optionally) alpha_c for every cluster.

    stats: [rho proposed, rho accepted, alpha proposed, alpha accepted, alpha off-table]
    """
    C = rhos.shape[0]
    for c in range(C):
        if leap > 0:
            stats[0] += 1
            stats[1] += rho_step_nb(R, z, c, rhos[c], rho_orders[c], alphas[c], leap,
                                    UC[c, 0], UC[c, 1], UC[c, 2])
        if do_alpha:
            stats[2] += 1
            res = alpha_step_nb(R, z, c, rhos[c], alphas, logz, lam, sigma, XI[c], UA[c],
                                exact, dvals, log_counts, grid, grid_logz)
            if res == 1:
                stats[3] += 1
            elif res == -1:
                stats[4] += 1


def cluster_sweep_np(R, z, rhos, rho_orders, alphas, logz, UC, XI, UA, do_alpha, leap,
                     sigma, lam, exact, dvals, log_counts, grid, grid_logz, stats):
    C = rhos.shape[0]
    for c in range(C):
        if leap > 0:
            stats[0] += 1
            stats[1] += rho_step_np(R, z, c, rhos[c], rho_orders[c], alphas[c], leap,
                                    UC[c, 0], UC[c, 1], UC[c, 2])
        if do_alpha:
            stats[2] += 1
            res = alpha_step_np(R, z, c, rhos[c], alphas, logz, lam, sigma, XI[c], UA[c],
                                exact, dvals, log_counts, grid, grid_logz)
            if res == 1:
                stats[3] += 1
            elif res == -1:
                stats[4] += 1


# ---------------------------------------------------------------------------
# per-user updates: cluster assignment and latent ranking
# ---------------------------------------------------------------------------


@njit(cache=True)
def swap_step_nb(R, O, j, nc, rho, alpha, u1, u2, u3, u_acc):
    """Swap two ranks inside the clicked or the unclicked block.

    Returns 0 (no pair available), 1 (rejected) or 2 (accepted).
    """
    n = R.shape[1]
    m1 = nc
    m2 = n - nc
    p1 = m1 * (m1 - 1) // 2
    p2 = m2 * (m2 - 1) // 2
    if p1 + p2 == 0:
        return 0
    if u1 * (p1 + p2) < p1:
        m = m1
        off = 0
    else:
        m = m2
        off = nc
    a = min(int(u2 * m), m - 1)
    b = min(int(u3 * (m - 1)), m - 2)
    if b >= a:
        b += 1
    pa = off + a
    pb = off + b
    i = O[j, pa]
    k = O[j, pb]
    ra = pa + 1
    rb = pb + 1
    delta = abs(rb - rho[i]) + abs(ra - rho[k]) - abs(ra - rho[i]) - abs(rb - rho[k])
    log_acc = -alpha / n * delta
    if log_acc >= 0.0 or u_acc < math.exp(log_acc):
        R[j, i] = rb
        R[j, k] = ra
        O[j, pa] = k
        O[j, pb] = i
        return 2
    return 1


@njit(cache=True)
def leap_block_step_nb(R, O, j, nc, rho, alpha, leap, u1, u2, u3, u4, u_acc, d_cur):
    """Leap-and-shift inside the clicked or the unclicked block.

    The moved item is uniform over the items of blocks holding at least two
    items, so each block is chosen with probability proportional to its size.
    Moving one block per proposal keeps the chain irreducible for leap 1,
    where moving both would fix the parity of the permutation.
    """
    n = R.shape[1]
    rank = R[j]
    order = O[j]
    w0 = nc if nc >= 2 else 0
    w1 = n - nc if n - nc >= 2 else 0
    if w0 + w1 == 0:
        return 0
    k = min(int(u1 * (w0 + w1)), w0 + w1 - 1)
    if k < w0:
        m = nc
        off = 0
        pos = k
    else:
        m = n - nc
        off = nc
        pos = k - w0
    lp = min(leap, m - 1)
    item = order[off + pos]
    ra = pos + 1
    rb = leap_target(ra, m, lp, u2)
    log_ratio = leap_log_q(rb, ra, m, lp) - leap_log_q(ra, rb, m, lp)
    move_item(rank, order, item, off + rb)
    d_new = 0
    for i in range(n):
        d_new += abs(rank[i] - rho[i])
    log_acc = log_ratio - alpha / n * (d_new - d_cur)
    if log_acc >= 0.0 or u_acc < math.exp(log_acc):
        return 2
    move_item(rank, order, item, off + ra)
    return 1


def _user_sweep(R, O, nclicks, z, rhos, alphas, logz, log_tau, users, U, mode, leap,
                update_z, dist, logits, flags):
    """Gibbs update of z_j followed by an M-H update of the latent ranking, per user.

    ``dist``/``logits`` are (len(users), C) scratch rows, ``flags`` receives
    0/1/2 per user (no proposal / rejected / accepted). Users are independent
    given the cluster parameters, so the loop may run in parallel.
    """
    C, n = rhos.shape
    for t in prange(users.size):
        j = users[t]
        if update_z:
            top = -np.inf
            for c in range(C):
                s = 0
                for i in range(n):
                    s += abs(R[j, i] - rhos[c, i])
                dist[t, c] = s
                lg = log_tau[c] - alphas[c] / n * s - logz[c]
                logits[t, c] = lg
                if lg > top:
                    top = lg
            total = 0.0
            for c in range(C):
                total += math.exp(logits[t, c] - top)
                logits[t, c] = total
            target = U[t, 0] * total
            zc = C - 1
            for c in range(C - 1):
                if target < logits[t, c]:
                    zc = c
                    break
            z[j] = zc
            d = dist[t, zc]
        else:
            zc = z[j]
            d = 0
            for i in range(n):
                d += abs(R[j, i] - rhos[zc, i])
        if mode == SWAP:
            flags[t] = swap_step_nb(R, O, j, nclicks[j], rhos[zc], alphas[zc],
                                    U[t, 1], U[t, 2], U[t, 3], U[t, 5])
        elif mode == LEAP_SHIFT and leap > 0:
            flags[t] = leap_block_step_nb(R, O, j, nclicks[j], rhos[zc], alphas[zc], leap,
                                          U[t, 1], U[t, 2], U[t, 3], U[t, 4], U[t, 5], d)
        else:
            flags[t] = 0


user_sweep_nb = njit(cache=True)(_user_sweep)
user_sweep_par = njit(cache=True, parallel=True)(_user_sweep)


def z_step_np(R, rhos, alphas, logz, log_tau, z, users, uz):
    n = R.shape[1]
    D = np.abs(R[users][:, None, :] - rhos[None, :, :]).sum(axis=2)
    logits = log_tau[None, :] - (alphas / n)[None, :] * D - logz[None, :]
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    cum = np.cumsum(p, axis=1)
    target = uz * cum[:, -1]
    cum[:, -1] = np.inf
    zc = np.argmax(target[:, None] < cum, axis=1)
    z[users] = zc
    return D[np.arange(users.size), zc]


def swap_step_np(R, O, nclicks, z, rhos, alphas, users, U):
    n = R.shape[1]
    m1 = nclicks[users]
    m2 = n - m1
    p1 = m1 * (m1 - 1) // 2
    p2 = m2 * (m2 - 1) // 2
    flags = np.zeros(users.size, np.int64)
    ok = (p1 + p2) > 0
    users, m1, m2, p1, p2, U = users[ok], m1[ok], m2[ok], p1[ok], p2[ok], U[ok]
    first = U[:, 1] * (p1 + p2) < p1
    m = np.where(first, m1, m2)
    off = np.where(first, 0, m1)
    a = np.minimum((U[:, 2] * m).astype(np.int64), m - 1)
    b = np.minimum((U[:, 3] * (m - 1)).astype(np.int64), m - 2)
    b = b + (b >= a)
    pa, pb = off + a, off + b
    i, k = O[users, pa], O[users, pb]
    ra, rb = pa + 1, pb + 1
    rho = rhos[z[users]]
    rho_i, rho_k = rho[np.arange(users.size), i], rho[np.arange(users.size), k]
    delta = np.abs(rb - rho_i) + np.abs(ra - rho_k) - np.abs(ra - rho_i) - np.abs(rb - rho_k)
    log_acc = -(alphas[z[users]] / n) * delta
    acc = (log_acc >= 0.0) | (U[:, 5] < np.exp(np.minimum(log_acc, 0.0)))
    ju, ia, ka, pa, pb = users[acc], i[acc], k[acc], pa[acc], pb[acc]
    R[ju, ia] = pb + 1
    R[ju, ka] = pa + 1
    O[ju, pa] = ka
    O[ju, pb] = ia
    flags[ok] = np.where(acc, 2, 1)
    return flags


def leap_block_step_np(R, O, nclicks, z, rhos, alphas, users, U, leap, d_cur):
    N, n = R.shape
    rows = R[users].copy()
    c = nclicks[users]
    idx = np.arange(users.size)
    w0 = np.where(c >= 2, c, 0)
    w1 = np.where(n - c >= 2, n - c, 0)
    tot = w0 + w1
    moved = tot > 0
    k = np.minimum((U[:, 1] * tot).astype(np.int64), np.maximum(tot - 1, 0))
    first = k < w0
    m = np.where(first, c, n - c)
    m = np.where(moved, m, 2)
    off = np.where(first, 0, c)
    pos = np.where(first, k, k - w0)
    pos = np.where(moved, pos, 0)
    lp = np.minimum(leap, m - 1)
    ra = pos + 1
    rb = leap_target_np(ra, m, lp, U[:, 2])
    log_ratio = leap_log_q_np(rb, ra, m, lp) - leap_log_q_np(ra, rb, m, lp)
    item = O[users][idx, np.where(moved, off + pos, 0)]
    A = (off + ra)[:, None]
    B = (off + rb)[:, None]
    down = (rows > A) & (rows <= B)
    up = (rows >= B) & (rows < A)
    shifted = rows - down + up
    shifted[idx, item] = off + rb
    rows = np.where(moved[:, None], shifted, rows)
    rho = rhos[z[users]]
    d_new = np.abs(rows - rho).sum(axis=1)
    log_acc = log_ratio - (alphas[z[users]] / n) * (d_new - d_cur)
    acc = moved & ((log_acc >= 0.0) | (U[:, 5] < np.exp(np.minimum(log_acc, 0.0))))
    ju = users[acc]
    R[ju] = rows[acc]
    O[ju] = np.argsort(rows[acc], axis=1, kind="stable")
    return np.where(moved, np.where(acc, 2, 1), 0)


def user_sweep_np(R, O, nclicks, z, rhos, alphas, logz, log_tau, users, U, mode, leap,
                  update_z, dist, logits, flags):
    n = R.shape[1]
    if update_z:
        d = z_step_np(R, rhos, alphas, logz, log_tau, z, users, U[:, 0])
    else:
        d = np.abs(R[users] - rhos[z[users]]).sum(axis=1)
    if mode == SWAP:
        flags[:] = swap_step_np(R, O, nclicks, z, rhos, alphas, users, U)
    elif mode == LEAP_SHIFT and leap > 0:
        flags[:] = leap_block_step_np(R, O, nclicks, z, rhos, alphas, users, U, leap, d)
    else:
        flags[:] = 0


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if USE_NUMBA:
    footrule_rows = footrule_rows_nb
    within_cluster_distance = within_cluster_distance_nb
    accumulate_rank_counts = accumulate_rank_counts_nb
    mallows_steps = mallows_steps_nb
    cluster_sweep = cluster_sweep_nb
    user_sweep = user_sweep_nb
else:
    footrule_rows = footrule_rows_np
    within_cluster_distance = within_cluster_distance_np
    accumulate_rank_counts = accumulate_rank_counts_np
    mallows_steps = mallows_steps_np
    cluster_sweep = cluster_sweep_np
    user_sweep = user_sweep_np
