"""Damped Newton solver for the l2-regularized GLM objective.

The objective is ``F(theta) = (1/N) sum_n w_n f(x_n^T theta, y_n) + lam/2 ||theta||^2``
with unit weights for the full fit and ``w_n = 0`` for the held-out point in a
leave-one-out refit (the ``1/N`` normalization is kept in both cases).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from .data import Dataset, gram_weighted
from .exceptions import ConvergenceError
from .families import GlmFamily, get_family

DEFAULT_TOL = 1e-10
LOO_TOL = 1e-12
DENSE_HESSIAN_MAX_D = 4000
_EPS = np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class FitState:
    theta_hat: np.ndarray
    lam: float
    z: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    grad_norm: float
    tol: float
    family: GlmFamily
    N: int = 0
    n_iter: int = 0
    seconds: float = 0.0
    objective_trace: list = field(default_factory=list, repr=False)


def _check_lambda(lam):
    lam = float(lam)
    if not lam > 0 or not np.isfinite(lam):
        raise ValueError(f"lambda must be a positive finite number, got {lam}")
    return lam


class _Objective:
    def __init__(self, dataset, family, lam, weights):
        self.X = dataset.X
        self.y = dataset.y
        self.N = dataset.N
        self.family = family
        self.lam = lam
        self.w = weights
        self.absX = abs(self.X) if sp.issparse(self.X) else np.abs(self.X)

    def value(self, theta, z=None):
        z = self.X @ theta if z is None else z
        with np.errstate(over="ignore", invalid="ignore"):
            val = np.dot(self.w, self.family.loss(z, self.y)) / self.N + 0.5 * self.lam * theta @ theta
        return float(val) if np.isfinite(val) else np.inf

    def gradient(self, theta, z):
        r = self.w * self.family.d1(z, self.y)
        g = self.X.T @ r / self.N + self.lam * theta
        # rounding scale of the gradient: cancellation inside D1 plus error in z
        zerr = self.absX @ np.abs(theta)
        mag = self.w * (self.family.d1_scale(z, self.y) + self.family.d2(z, self.y) * zerr)
        scale = np.linalg.norm(self.absX.T @ mag) / self.N + self.lam * np.linalg.norm(theta)
        return np.asarray(g).ravel(), float(scale)

    def newton_direction(self, theta, z, g, gnorm):
        h = self.w * self.family.d2(z, self.y)
        D = theta.size
        if D <= DENSE_HESSIAN_MAX_D:
            H = gram_weighted(self.X, h, 1.0 / self.N)
            H[np.diag_indices_from(H)] += self.lam
            c = sla.cho_factor(H, lower=True, check_finite=False)
            return -sla.cho_solve(c, g, check_finite=False)
        X, N, lam = self.X, self.N, self.lam
        op = LinearOperator((D, D), matvec=lambda v: X.T @ (h * (X @ v)) / N + lam * v, dtype=float)
        p, _ = cg(op, -g, rtol=max(min(0.1, gnorm), 1e-14), maxiter=10 * D)
        return p


def _newton(obj, theta0, tol, max_iter):
    theta = np.array(theta0, dtype=float, copy=True)
    z = np.asarray(obj.X @ theta).ravel()
    F = obj.value(theta, z)
    g, scale = obj.gradient(theta, z)
    gnorm = float(np.linalg.norm(g))
    trace = [F]
    flat_steps = 0
    it = 0
    for it in range(1, max_iter + 1):
        if gnorm <= tol:
            return theta, z, gnorm, tol, it - 1, trace
        # below the worst-case rounding floor the iteration continues only
        # while it keeps making real progress
        polishing = gnorm <= 10 * _EPS * scale
        p = obj.newton_direction(theta, z, g, gnorm)
        slope = float(g @ p)
        if not slope < 0:
            p, slope = -g, -gnorm**2
        t = 1.0
        accepted = flat = False
        for _ in range(60):
            theta_new = theta + t * p
            z_new = np.asarray(obj.X @ theta_new).ravel()
            F_new = obj.value(theta_new, z_new)
            if F_new <= F + 1e-4 * t * slope:
                accepted = True
            elif np.isfinite(F_new) and abs(F_new - F) <= 10 * _EPS * max(abs(F), 1.0):
                # objective flat to rounding: accept if the gradient shrinks
                g_try, _ = obj.gradient(theta_new, z_new)
                accepted = flat = np.linalg.norm(g_try) < gnorm
            if accepted:
                break
            t *= 0.5
        if not accepted:
            break
        g_new, scale_new = obj.gradient(theta_new, z_new)
        gnorm_new = float(np.linalg.norm(g_new))
        if polishing and gnorm_new > 0.5 * gnorm:
            if gnorm_new < gnorm:
                theta, z, F, g, scale, gnorm = theta_new, z_new, F_new, g_new, scale_new, gnorm_new
                trace.append(F)
            break
        theta, z, F, g, scale, gnorm = theta_new, z_new, F_new, g_new, scale_new, gnorm_new
        trace.append(F)
        # repeated rounding-level steps: no further progress is possible
        flat_steps = flat_steps + 1 if flat else 0
        if flat_steps >= 5:
            break
    eff_tol = max(tol, 10 * _EPS * scale)
    if gnorm <= eff_tol:
        return theta, z, gnorm, eff_tol, it, trace
    raise ConvergenceError(
        f"Newton solver stopped after {it} iterations with gradient norm {gnorm:.3e} > {eff_tol:.3e}",
        grad_norm=gnorm,
    )


def fit(dataset: Dataset, family, lam, tol=DEFAULT_TOL, max_iter=100, theta0=None) -> FitState:
    """Minimize the regularized GLM objective with damped Newton.

    The returned gradient norm is at most ``tol``, or at most the
    floating-point noise floor of the gradient when that is larger (large
    Poisson counts make an absolute ``1e-10`` unreachable).
    """
    family = get_family(family)
    lam = _check_lambda(lam)
    family.check_response(dataset.y)
    t0 = time.perf_counter()
    obj = _Objective(dataset, family, lam, np.ones(dataset.N))
    theta0 = np.zeros(dataset.D) if theta0 is None else theta0
    theta, z, gnorm, eff_tol, it, trace = _newton(obj, theta0, tol, max_iter)
    return FitState(
        theta_hat=theta,
        lam=lam,
        z=z,
        d1=family.d1(z, dataset.y),
        d2=family.d2(z, dataset.y),
        grad_norm=gnorm,
        tol=eff_tol,
        family=family,
        N=dataset.N,
        n_iter=it,
        seconds=time.perf_counter() - t0,
        objective_trace=trace,
    )


def loo_fit(dataset: Dataset, family, lam, n, warm_start: FitState | None = None, tol=LOO_TOL, max_iter=100):
    """Exact leave-one-out refit with datapoint ``n`` removed from the sum."""
    family = get_family(family)
    lam = _check_lambda(lam)
    if not 0 <= n < dataset.N:
        raise IndexError(f"fold index {n} out of range for N={dataset.N}")
    w = np.ones(dataset.N)
    w[n] = 0.0
    obj = _Objective(dataset, family, lam, w)
    theta0 = warm_start.theta_hat if warm_start is not None else np.zeros(dataset.D)
    try:
        theta, *_ = _newton(obj, theta0, tol, max_iter)
    except ConvergenceError as exc:
        raise ConvergenceError(f"fold {n}: {exc}", grad_norm=exc.grad_norm, fold=n) from None
    return theta
