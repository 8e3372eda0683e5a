"""Confidence-weighted matrix factorisation for implicit feedback, fitted by ALS.

Loss: sum_ij c_ij (w_ij - u_j . v_i)^2 + theta (sum ||u_j||^2 + sum ||v_i||^2)
with confidence c_ij = 1 + beta x_ij and w_ij = [x_ij > 0]. Matrices are
stored users x items.
"""
from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import InputError, NumericError, ParameterError
from .datagen import hide_clicks
from .recommend import top_k_from_scores

logger = logging.getLogger(__name__)

DEFAULT_GRID = dict(beta=(1.0, 10.0, 40.0), theta=(0.01, 0.1, 1.0), L=(5, 10, 20))


@dataclass(frozen=True)
class CFConfig:
    beta: float = 10.0
    theta: float = 0.1
    L: int = 10
    sweeps: int = 15
    init_scale: float = 0.01
    seed: int = 0

    def validate(self):
        if self.beta < 0:
            raise ParameterError("beta must be >= 0")
        if self.theta < 0:
            raise ParameterError("theta must be >= 0")
        if self.L < 1:
            raise ParameterError("L must be >= 1")
        if self.sweeps < 1:
            raise ParameterError("sweeps must be >= 1")
        if not self.init_scale > 0:
            raise ParameterError("init_scale must be > 0")
        return self


@dataclass(frozen=True, eq=False)
class FactorModel:
    U: np.ndarray  # users x L
    V: np.ndarray  # items x L
    beta: float = 0.0
    theta: float = 0.0

    @property
    def L(self):
        return self.U.shape[1]


def interaction_matrix(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InputError("interaction matrix must be two-dimensional")
    if np.any(X < 0) or not np.all(np.isfinite(X)):
        raise InputError("interaction counts must be finite and non-negative")
    return X


def als_loss(X, U, V, beta, theta):
    X = interaction_matrix(X)
    W = (X > 0).astype(np.float64)
    Cw = 1.0 + beta * X
    resid = W - U @ V.T
    return float(np.sum(Cw * resid ** 2) + theta * (np.sum(U ** 2) + np.sum(V ** 2)))


def _ridge_rows(X, F, beta, theta):
    """Minimise over every row factor with the other side ``F`` fixed.

    For row j: (F' C_j F + theta I) u_j = F' C_j w_j, with C_j = diag(1 + beta x_j).
    """
    L = F.shape[1]
    W = (X > 0).astype(np.float64)
    extra = beta * X
    A = F.T @ F + theta * np.eye(L)
    A = A[None, :, :] + np.einsum("ji,il,im->jlm", extra, F, F, optimize=True)
    b = ((1.0 + extra) * W) @ F
    if theta == 0:
        cond = np.linalg.cond(A)
        if not np.all(np.isfinite(cond)) or np.any(cond > 1e12):
            raise NumericError("normal equations are singular; set theta > 0")
    try:
        return np.linalg.solve(A, b[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError as exc:
        raise NumericError("normal equations are singular; set theta > 0") from exc


def solve_user(X, V, j, beta, theta):
    """Closed-form factor of user j given item factors (single-row version)."""
    X = interaction_matrix(X)
    return _ridge_rows(X[j:j + 1], V, beta, theta)[0]


def fit_als(X, config=None):
    """Alternate user and item ridge solves. Returns (model, loss after each half-sweep)."""
    config = (config or CFConfig()).validate()
    X = interaction_matrix(X)
    N, n = X.shape
    rng = np.random.default_rng(config.seed)
    U = rng.uniform(0.0, config.init_scale, size=(N, config.L))
    V = rng.uniform(0.0, config.init_scale, size=(n, config.L))
    losses = []
    for _ in range(config.sweeps):
        U = _ridge_rows(X, V, config.beta, config.theta)
        losses.append(als_loss(X, U, V, config.beta, config.theta))
        V = _ridge_rows(X.T, U, config.beta, config.theta)
        losses.append(als_loss(X, U, V, config.beta, config.theta))
    if not (np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
        raise NumericError("ALS produced non-finite factors")
    return FactorModel(U, V, config.beta, config.theta), np.array(losses)


def predict_scores(model):
    return model.U @ model.V.T


def recommend_top_k_cf(model, X, k):
    X = interaction_matrix(X)
    return top_k_from_scores(predict_scores(model), X > 0, k)


@dataclass
class CVResult:
    best: CFConfig
    cells: list  # dicts: beta, theta, L, mean_accuracy, fold_accuracy

    def table(self):
        return [(c["beta"], c["theta"], c["L"], c["mean_accuracy"]) for c in self.cells]


def cross_validate(X, grid=None, folds=10, k=5, n_hide=1, min_retained=1, base=None, seed=0):
    """Grid search over (beta, theta, L) by repeated random click hiding.

    Each fold hides ``n_hide`` clicks of every user holding at least
    ``n_hide + min_retained`` clicks, fits on the rest and scores the hit rate of
    the top-k lists of those users against their hidden clicks. Folds use the
    same splits for every grid cell; ties keep the earliest cell.
    """
    if folds < 2:
        raise ParameterError("folds must be >= 2")
    X = interaction_matrix(X)
    grid = DEFAULT_GRID if grid is None else grid
    base = base or CFConfig()
    cells = list(itertools.product(grid["beta"], grid["theta"], grid["L"]))
    if not cells:
        raise ParameterError("empty grid")
    ss = np.random.SeedSequence(seed)
    splits = []
    for child in ss.spawn(folds):
        train, held, eligible = hide_clicks(X > 0, n_hide, min_retained, np.random.default_rng(child))
        n_out = int((~eligible).sum())
        if n_out:
            warnings.warn(f"{n_out} users have too few clicks to hide {n_hide}; excluded from the fold",
                          RuntimeWarning)
        splits.append((np.where(train, X, 0.0), held, eligible))
    results = []
    for beta, theta, L in cells:
        cfg = replace(base, beta=float(beta), theta=float(theta), L=int(L))
        accs = []
        for Xtr, held, eligible in splits:
            model, _ = fit_als(Xtr, cfg)
            recs = recommend_top_k_cf(model, Xtr, k)
            keep = eligible[recs.user]
            hits = held[recs.user[keep], recs.item[keep]]
            accs.append(float(hits.mean()) if hits.size else np.nan)
        results.append(dict(beta=float(beta), theta=float(theta), L=int(L),
                            mean_accuracy=float(np.nanmean(accs)) if np.isfinite(accs).any() else np.nan,
                            fold_accuracy=accs))
        logger.debug("cv beta=%s theta=%s L=%s acc=%.4f", beta, theta, L, results[-1]["mean_accuracy"])
    scores = np.array([r["mean_accuracy"] for r in results])
    best = int(np.argmax(np.where(np.isnan(scores), -np.inf, scores)))
    r = results[best]
    return CVResult(replace(base, beta=r["beta"], theta=r["theta"], L=r["L"]), results)
