"""Randomized rank-K Nystrom sketch of the Hessian and certified Q_n estimates.

The data term of the Hessian is ``B = (1/N) X^T diag(D2) X``.  A test matrix
``Omega`` is obtained from one subspace-iteration pass on ``X^T X`` followed
by a diagonal preconditioner ``diag(1 / (B_dd + lam))``.  The sketch
``H_tilde = U diag(s) U^T + lam I`` agrees with ``H`` on ``range(Omega)``, so
``H_tilde^{-1}`` agrees with ``H^{-1}`` on ``A = H range(Omega)``; the mass of
``x_n`` outside ``A`` bounds the error of the estimated quadratic form.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .data import Dataset, make_rng
from .exact import QnSet, ij_predict
from .exceptions import SketchError
from .solver import FitState

_EPS = np.finfo(float).eps
_RANK_RTOL = 1e-10


def hessian_data_operator(dataset: Dataset, fit_state: FitState):
    """Return ``V -> B V`` for ``B = (1/N) X^T diag(D2) X`` without forming ``B``."""
    X, w, N = dataset.X, fit_state.d2, dataset.N

    def apply(V):
        XV = X @ V
        XV = w[:, None] * XV if XV.ndim == 2 else w * XV
        return np.asarray(X.T @ XV) / N

    return apply


def hessian_diagonal(dataset: Dataset, fit_state: FitState):
    """``B_dd = (1/N) sum_n D2_n x_nd^2``."""
    X = dataset.X
    sq = X.multiply(X) if sp.issparse(X) else X * X
    return np.asarray(sq.T @ fit_state.d2).ravel() / dataset.N


def _orthonormalize(Y):
    Q, R = np.linalg.qr(Y)
    diag = np.abs(np.diag(R))
    if diag.size and diag.min() <= _RANK_RTOL * max(diag.max(), np.finfo(float).tiny):
        return None
    return Q


def build_omega(dataset: Dataset, fit_state: FitState, K: int, seed=0, power=1):
    """Orthonormal ``D x K`` test matrix ``orth(diag(1/(B_dd+lam)) (X^T X)^power E)``.

    A rank-deficient draw is retried once with ``seed + 1``.
    """
    if not 1 <= K <= dataset.D:
        raise ValueError(f"K={K} must lie in [1, D={dataset.D}]")
    if power < 1:
        raise ValueError("power must be at least 1")
    scale = 1.0 / (hessian_diagonal(dataset, fit_state) + fit_state.lam)
    X = dataset.X
    for s in (seed, seed + 1):
        Y = make_rng(s).standard_normal((dataset.D, K))
        for p in range(power):
            Y = np.asarray(X.T @ (X @ Y))
            if p < power - 1:
                Y = _orthonormalize(Y)
                if Y is None:
                    break
        if Y is None:
            continue
        Omega = _orthonormalize(scale[:, None] * Y)
        if Omega is not None:
            return Omega
    raise SketchError(
        f"test matrix lost rank for K={K} (seeds {seed}, {seed + 1}); "
        "the data may have rank below K"
    )


def stable_nystrom(B_apply, Omega, nu, max_retries=3, BOmega=None):
    """Shifted Nystrom approximation of a PSD operator.

    Returns ``(U, eigvals, nu_used)``: approximate eigenvectors, eigenvalues
    of ``B`` clamped at zero, and the shift that made the core matrix
    Cholesky-factorizable (``nu`` grows by 10x per failed attempt).
    """
    if not nu > 0:
        raise ValueError("nu must be positive")
    BO = B_apply(Omega) if BOmega is None else BOmega
    for _ in range(max_retries + 1):
        G = BO + nu * Omega
        C = Omega.T @ G
        C = 0.5 * (C + C.T)
        try:
            R = sla.cholesky(C, lower=False, check_finite=False)
        except np.linalg.LinAlgError:
            nu *= 10.0
            continue
        # E = G R^{-1}
        E = sla.solve_triangular(R, G.T, trans="T", lower=False, check_finite=False).T
        U, sigma, _ = np.linalg.svd(E, full_matrices=False)
        return U, np.maximum(sigma**2 - nu, 0.0), nu
    raise SketchError(f"Cholesky of the Nystrom core failed after {max_retries} shift increases (nu={nu:.3e})")


def agreement_basis(B_apply, Omega, lam, BOmega=None):
    """Orthonormal basis of ``H range(Omega) = range(B Omega + lam Omega)``."""
    BO = B_apply(Omega) if BOmega is None else BOmega
    A = _orthonormalize(BO + lam * Omega)
    if A is None:
        raise SketchError("agreement subspace H*range(Omega) is rank deficient")
    return A


def default_nu(dataset: Dataset, fit_state: FitState):
    trace_B = float(fit_state.d2 @ dataset.sq_row_norms) / dataset.N
    return max(np.sqrt(dataset.D) * _EPS * trace_B / dataset.D, _EPS)


@dataclass(frozen=True, eq=False)
class HessianSketch:
    eigvecs: np.ndarray
    eigvals: np.ndarray
    lam: float
    agree_basis: np.ndarray
    K: int
    seed: int
    nu: float
    power: int = 1
    seconds: float = 0.0

    def apply(self, v):
        """``H_tilde v``."""
        U = self.eigvecs
        Utv = U.T @ v
        scaled = self.eigvals[:, None] * Utv if Utv.ndim == 2 else self.eigvals * Utv
        return U @ scaled + self.lam * v

    def inverse_quad_forms(self, X, sq_norms):
        """``x_n^T H_tilde^{-1} x_n`` for every row, in ``O(DK)`` each."""
        XU = np.asarray(X @ self.eigvecs)
        proj = XU**2
        outside = np.maximum(sq_norms - proj.sum(axis=1), 0.0)
        return outside / self.lam + proj @ (1.0 / (self.eigvals + self.lam))

    def perp_sq_norms(self, X, sq_norms):
        """``||P_perp_A x_n||^2`` for every row, clamped at zero."""
        XA = np.asarray(X @ self.agree_basis)
        return np.maximum(sq_norms - np.einsum("ij,ij->i", XA, XA), 0.0)

    def save(self, path):
        meta = dict(lam=self.lam, K=self.K, seed=self.seed, nu=self.nu, power=self.power, format="alracv-sketch-1")
        np.savez(path, eigvecs=self.eigvecs, eigvals=self.eigvals, agree_basis=self.agree_basis, meta=json.dumps(meta))

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as f:
            meta = json.loads(str(f["meta"]))
            return cls(
                eigvecs=f["eigvecs"],
                eigvals=f["eigvals"],
                agree_basis=f["agree_basis"],
                lam=meta["lam"],
                K=meta["K"],
                seed=meta["seed"],
                nu=meta["nu"],
                power=meta.get("power", 1),
            )


def build_sketch(dataset: Dataset, fit_state: FitState, K: int, seed=0, nu=None, power=1) -> HessianSketch:
    t0 = time.perf_counter()
    B_apply = hessian_data_operator(dataset, fit_state)
    Omega = build_omega(dataset, fit_state, K, seed=seed, power=power)
    BO = B_apply(Omega)
    nu = default_nu(dataset, fit_state) if nu is None else float(nu)
    U, s, nu_used = stable_nystrom(B_apply, Omega, nu, BOmega=BO)
    A = agreement_basis(B_apply, Omega, fit_state.lam, BOmega=BO)
    return HessianSketch(
        eigvecs=U,
        eigvals=s,
        lam=fit_state.lam,
        agree_basis=A,
        K=K,
        seed=seed,
        nu=nu_used,
        power=power,
        seconds=time.perf_counter() - t0,
    )


def qn_from_sketch(sketch: HessianSketch, dataset: Dataset, fit_state: FitState) -> QnSet:
    """Clipped sketch estimates ``Q~_n`` with certified bounds ``eta_n``."""
    sq = dataset.sq_row_norms
    q_raw = sketch.inverse_quad_forms(dataset.X, sq)
    qn = QnSet.build(q_raw, 0.0, "sketch", fit_state, dataset)
    eta = np.minimum(sketch.perp_sq_norms(dataset.X, sq) / sketch.lam, qn.cap)
    return QnSet(q=qn.q, eta=eta, source="sketch", cap=qn.cap)


def auto_k(dataset: Dataset, fit_state: FitState, seed=0, probe=10, rel=0.01, power=1, nu=None):
    """Smallest ``K`` on a doubling grid whose probe error certificate is small.

    The certificate for point ``n`` is ``|D1_n| eta_n / N`` (the IJ error
    due to the sketch); ``K`` is accepted once its mean over ``probe``
    random points falls below ``rel`` times the mean ``|prediction|``.
    """
    cap = max(1, dataset.D // 4)
    rows = np.sort(make_rng(seed).choice(dataset.N, size=min(probe, dataset.N), replace=False))
    sub = dataset.take(rows)
    sub_fit = _subset_fit(fit_state, rows)
    K = min(8, cap)
    while True:
        sk = build_sketch(dataset, fit_state, K, seed=seed, nu=nu, power=power)
        qn = qn_from_sketch(sk, sub, sub_fit)
        cert = np.abs(sub_fit.d1) * qn.eta / dataset.N
        pred = ij_predict(sub_fit, qn)
        if np.mean(cert) <= rel * np.mean(np.abs(pred)) or K >= cap:
            return K
        K = min(2 * K, cap)


def _subset_fit(fit_state: FitState, rows):
    """FitState restricted to ``rows``; ``N`` stays the full-data count."""
    return replace(fit_state, z=fit_state.z[rows], d1=fit_state.d1[rows], d2=fit_state.d2[rows])
