"""Exact Hessian machinery: quadratic forms, NS/IJ predictions, exact LOOCV.

Throughout, ``H = (1/N) sum_n D2_n x_n x_n^T + lam I`` and
``Q_n = x_n^T H^{-1} x_n``.  With this normalization the leave-one-out
Hessian is ``H - (D2_n / N) x_n x_n^T`` and Sherman-Morrison gives::

    NS_n = x_n^T theta_hat + (D1_n / N) * Q_n / (1 - D2_n Q_n / N)
    IJ_n = x_n^T theta_hat + (D1_n / N) * Q_n
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .data import Dataset, gram_weighted, make_rng
from .exceptions import FactorizationError
from .families import eval_err, get_family
from .solver import LOO_TOL, FitState, fit, loo_fit

POLE_GUARD = 1e-8
QN_SOURCES = ("exact", "sketch", "neumann")


def qn_cap(sq_norms, d2, lam, N):
    """Upper bound ``||x||^2 / (lam + D2 ||x||^2 / N)`` on ``Q_n``."""
    sq_norms = np.asarray(sq_norms, dtype=float)
    return sq_norms / (lam + np.asarray(d2) * sq_norms / N)


@dataclass(frozen=True, eq=False)
class QnSet:
    """Quadratic-form estimates with certified absolute error bounds.

    ``q`` is clipped to the leverage cap at construction, which can only
    move an estimate closer to the true ``Q_n``.
    """

    q: np.ndarray
    eta: np.ndarray
    source: str
    cap: np.ndarray
    diverged: bool = False

    @classmethod
    def build(cls, q, eta, source, fit_state: FitState, dataset: Dataset, diverged=False):
        if source not in QN_SOURCES:
            raise ValueError(f"unknown Q_n source {source!r}")
        cap = qn_cap(dataset.sq_row_norms, fit_state.d2, fit_state.lam, fit_state.N)
        q = np.asarray(q, dtype=float)
        with np.errstate(invalid="ignore"):
            q = np.where(np.isfinite(q), np.clip(q, 0.0, cap), q)
        eta = np.broadcast_to(np.asarray(eta, dtype=float), q.shape).copy()
        return cls(q=q, eta=eta, source=source, cap=cap, diverged=diverged)


class HessianFactor:
    """Lower Cholesky factor of ``H``; never forms ``H^{-1}``."""

    def __init__(self, fit_state: FitState, dataset: Dataset):
        if not fit_state.lam > 0:
            raise ValueError("lambda must be positive")
        H = gram_weighted(dataset.X, fit_state.d2, 1.0 / dataset.N)
        H[np.diag_indices_from(H)] += fit_state.lam
        L, info = lapack.dpotrf(H, lower=1, clean=1)
        if info != 0:
            pivot = float(np.min(np.diag(L)[: max(info - 1, 0)], initial=np.nan))
            raise FactorizationError(
                f"Cholesky of H failed at pivot {info} (smallest completed pivot {pivot:.3e})",
                smallest_pivot=pivot,
            )
        self.L = L
        self.D = H.shape[0]

    def solve(self, v):
        return sla.cho_solve((self.L, True), v, check_finite=False)

    def half_solve(self, v):
        """``L^{-1} v`` so that ``||L^{-1} x||^2 = x^T H^{-1} x``."""
        return sla.solve_triangular(self.L, v, lower=True, check_finite=False)


def exact_qn(fit_state: FitState, dataset: Dataset, chunk=2048) -> QnSet:
    """Exact ``Q_n`` from one ``D x D`` Cholesky factorization."""
    factor = HessianFactor(fit_state, dataset)
    q = np.empty(dataset.N)
    for lo in range(0, dataset.N, chunk):
        rows = dataset.X[lo : lo + chunk]
        Xt = rows.T.toarray() if dataset.is_sparse else rows.T
        W = factor.half_solve(Xt)
        q[lo : lo + chunk] = np.einsum("ij,ij->j", W, W)
    return QnSet.build(q, 0.0, "exact", fit_state, dataset)


def ns_denominator(fit_state: FitState, qn: QnSet):
    return 1.0 - fit_state.d2 * qn.q / fit_state.N


def ns_poles(fit_state: FitState, qn: QnSet, pole_guard=POLE_GUARD):
    """Indices whose NS denominator is within ``pole_guard`` of zero."""
    return np.flatnonzero(np.abs(ns_denominator(fit_state, qn)) < pole_guard)


def ns_predict(fit_state: FitState, qn: QnSet, pole_guard=POLE_GUARD):
    """Newton-step LOO predictions ``x_n^T theta_NS``.

    Points at the pole of the Sherman-Morrison denominator come back as NaN;
    :func:`ns_poles` lists them for rerouting to exact refits.
    """
    denom = ns_denominator(fit_state, qn)
    out = np.full(fit_state.N, np.nan)
    ok = np.abs(denom) >= pole_guard
    out[ok] = fit_state.z[ok] + fit_state.d1[ok] / fit_state.N * qn.q[ok] / denom[ok]
    return out


def ij_predict(fit_state: FitState, qn: QnSet):
    """Infinitesimal-jackknife LOO predictions ``x_n^T theta_IJ``."""
    return fit_state.z + fit_state.d1 / fit_state.N * qn.q


@dataclass(frozen=True, eq=False)
class LoocvResult:
    indices: np.ndarray
    predictions: np.ndarray
    err: np.ndarray | None
    seconds: float
    tol: float

    @property
    def mean_err(self):
        return None if self.err is None else float(np.mean(self.err))

    @property
    def seconds_per_fold(self):
        return self.seconds / max(len(self.indices), 1)


def exact_loocv(dataset: Dataset, family, lam, subset=None, metric=None, fit_state=None, tol=LOO_TOL):
    """Refit without each requested datapoint and evaluate the predictions.

    ``subset`` is a list of indices (all ``N`` when omitted).  Folds are
    warm-started from the full fit and processed in index order, so the
    mean is reduced deterministically.
    """
    family = get_family(family)
    if fit_state is None:
        fit_state = fit(dataset, family, lam, tol=tol)
    indices = np.arange(dataset.N) if subset is None else np.asarray(subset, dtype=int)
    t0 = time.perf_counter()
    preds = np.empty(indices.size)
    for i, n in enumerate(indices):
        theta = loo_fit(dataset, family, lam, int(n), warm_start=fit_state, tol=tol)
        preds[i] = dataset.row(int(n)) @ theta
    seconds = time.perf_counter() - t0
    err = None if metric is None else eval_err(metric, preds, dataset.y[indices])
    return LoocvResult(indices=indices, predictions=preds, err=err, seconds=seconds, tol=tol)


def random_subset(N, size, seed):
    """Sorted indices of ``min(size, N)`` distinct points drawn with ``seed``."""
    return np.sort(make_rng(seed).choice(N, size=min(size, N), replace=False))


def percent_error(approx, exact):
    """Mean of ``100 * |approx - exact| / |exact|`` over the given points."""
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    return float(100.0 * np.mean(np.abs(approx - exact) / np.abs(exact)))


def restrict_to_rank(dataset: Dataset, R: int):
    """Project covariates onto the top ``R`` right singular vectors.

    Returns the restricted dataset (covariates ``V_R^T x_n``) and ``V_R``.
    """
    if not 1 <= R <= min(dataset.N, dataset.D):
        raise ValueError(f"R={R} must lie in [1, min(N, D)]")
    X = dataset.dense()
    _, _, Vt = np.linalg.svd(X, full_matrices=False)
    V = Vt[:R].T.copy()
    return Dataset(X @ V, dataset.y), V
