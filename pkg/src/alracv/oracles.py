"""Brute-force verification oracles and the stochastic Neumann-series baseline.

The dense oracles are quadratic (or worse) in ``D`` and refuse problems with
``D > 2000``.  They are used by the test suite and the benchmark harness,
never by the bound pipeline.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .data import Dataset, gram_weighted, make_rng
from .exact import QnSet
from .families import get_family
from .solver import FitState

DENSE_ORACLE_MAX_D = 2000


def _guard(dataset):
    if dataset.D > DENSE_ORACLE_MAX_D:
        raise ValueError(f"dense oracle refused: D={dataset.D} > {DENSE_ORACLE_MAX_D}")


def dense_hessian(fit_state: FitState, dataset: Dataset, d2=None):
    d2 = fit_state.d2 if d2 is None else d2
    H = gram_weighted(dataset.X, d2, 1.0 / fit_state.N)
    H[np.diag_indices_from(H)] += fit_state.lam
    return H


def dense_qn_oracle(fit_state: FitState, dataset: Dataset):
    """``x_n^T H^{-1} x_n`` through an explicit inverse."""
    _guard(dataset)
    Hinv = np.linalg.inv(dense_hessian(fit_state, dataset))
    X = dataset.dense()
    return np.einsum("ij,jk,ik->i", X, Hinv, X)


def newton_step_oracle(fit_state: FitState, dataset: Dataset, family, n):
    """One explicit Newton step from ``theta_hat`` on the LOO objective, dotted with ``x_n``."""
    _guard(dataset)
    family = get_family(family)
    X = dataset.dense()
    theta = fit_state.theta_hat
    z = X @ theta
    w = np.ones(dataset.N)
    w[n] = 0.0
    d1 = family.d1(z, dataset.y) * w
    d2 = family.d2(z, dataset.y) * w
    H = X.T @ (d2[:, None] * X) / fit_state.N + fit_state.lam * np.eye(dataset.D)
    g = X.T @ d1 / fit_state.N + fit_state.lam * theta
    step = np.linalg.solve(H, g)
    return float(X[n] @ (theta - step))


def ln_oracle(fit_state: FitState, dataset: Dataset, family, n, theta_loo, grid=1001):
    """Segment Lipschitz constant ``max_s |D3(z(s))| * (1/N) sum_{m != n} ||x_m||^2``."""
    family = get_family(family)
    x = dataset.row(n)
    z0, z1 = float(x @ fit_state.theta_hat), float(x @ theta_loo)
    s = np.linspace(0.0, 1.0, grid)
    zs = np.concatenate([(1 - s) * z0 + s * z1, [z0, z1]])
    c = float(np.max(np.abs(family.d3(zs))))
    sq = dataset.sq_row_norms
    return c * (sq.sum() - sq[n]) / fit_state.N


# ----------------------------------------------------------------------
# stochastic Neumann series (LiSSA)
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class NeumannConfig:
    """Recursion depth ``S``, repetitions ``M`` and RNG seed.

    ``scale`` multiplies every sample Hessian before the recursion (the
    estimate is rescaled afterwards).  The default ``1.0`` is the plain
    recursion, which converges only when every ``I - A_s`` is a
    contraction.  ``"auto"`` picks ``1 / max_n (D2_n ||x_n||^2 + lam)`` so
    each scaled sample is a contraction.
    """

    S: int
    M: int
    seed: int = 0
    scale: float | str = 1.0

    def __post_init__(self):
        if self.S < 1 or self.M < 1:
            raise ValueError("S and M must be at least 1")
        if isinstance(self.scale, str) and self.scale != "auto":
            raise ValueError(f"scale must be a positive number or 'auto', got {self.scale!r}")
        if not isinstance(self.scale, str) and not self.scale > 0:
            raise ValueError("scale must be positive")


def neumann_recursion(V0, X, d2, lam, samples, scale, checkpoints=()):
    """Apply ``Hbar_S^{-1}`` to the columns of ``V0``.

    ``Hbar_s^{-1} = I + (I - A_s) Hbar_{s-1}^{-1}`` with ``Hbar_0^{-1} = I`` and
    ``A_s = scale * (D2_s x_s x_s^T + lam I)``.  Returns ``(V, diverged,
    snapshots)`` where ``snapshots`` maps every step count in
    ``checkpoints`` to ``(V after that many steps, elapsed seconds)``.
    """
    t0 = time.perf_counter()
    V = V0.copy()
    snapshots = {}
    wanted = set(int(c) for c in checkpoints)
    diverged = False
    for step, s in enumerate(samples, start=1):
        if not diverged:
            xs = X[s].toarray().ravel() if hasattr(X, "toarray") else X[s]
            with np.errstate(over="ignore", invalid="ignore"):
                V = V0 + V - scale * (d2[s] * np.outer(xs, xs @ V) + lam * V)
            diverged = not np.all(np.isfinite(V))
        if step in wanted:
            t_snap = time.perf_counter()
            snapshots[step] = (V.copy(), t_snap - t0)
            t0 += time.perf_counter() - t_snap  # copying is not part of the method
    return V, diverged, snapshots


def _neumann_setup(fit_state, dataset, scale):
    if scale == "auto":
        scale = 1.0 / float(np.max(fit_state.d2 * dataset.sq_row_norms + fit_state.lam))
    Xt = dataset.X.T.toarray() if dataset.is_sparse else np.ascontiguousarray(dataset.X.T)
    return float(scale), Xt


def _quad(Xt, V, scale):
    with np.errstate(invalid="ignore", over="ignore"):
        return scale * np.einsum("ij,ij->j", Xt, V)


def neumann_qn(fit_state: FitState, dataset: Dataset, cfg: NeumannConfig) -> QnSet:
    """Uncertified ``Q_n`` estimates from ``M`` averaged LiSSA recursions.

    ``eta`` is ``inf`` for every point; divergence sets ``QnSet.diverged``
    and the estimates are returned as they are (clipped to the cap).
    """
    scale, Xt = _neumann_setup(fit_state, dataset, cfg.scale)
    total = np.zeros(dataset.N)
    diverged = False
    for m in range(cfg.M):
        samples = make_rng(cfg.seed + m).integers(0, dataset.N, size=cfg.S)
        V, bad, _ = neumann_recursion(Xt, dataset.X, fit_state.d2, fit_state.lam, samples, scale)
        diverged |= bad
        total += _quad(Xt, V, scale)
    return QnSet.build(total / cfg.M, np.inf, "neumann", fit_state, dataset, diverged=diverged)


def neumann_path(fit_state: FitState, dataset: Dataset, S_values, M_values, seed=0, scale=1.0):
    """Estimates for every ``(S, M)`` pair from one recursion per repetition.

    Repetition ``m`` uses seed ``seed + m`` exactly as :func:`neumann_qn`
    does, so the entry for ``(S, M)`` equals ``neumann_qn`` with that
    configuration.  The reported seconds for ``(S, M)`` are the summed
    times of the first ``M`` repetitions up to step ``S``.

    Returns ``{(S, M): (QnSet, seconds)}``.
    """
    S_values = sorted({int(v) for v in S_values})
    M_values = sorted({int(v) for v in M_values})
    if not S_values or not M_values or S_values[0] < 1 or M_values[0] < 1:
        raise ValueError("S and M values must be at least 1")
    t_setup = time.perf_counter()
    scale, Xt = _neumann_setup(fit_state, dataset, scale)
    t_setup = time.perf_counter() - t_setup
    reps = []
    for m in range(M_values[-1]):
        samples = make_rng(seed + m).integers(0, dataset.N, size=S_values[-1])
        _, _, snaps = neumann_recursion(Xt, dataset.X, fit_state.d2, fit_state.lam, samples, scale, S_values)
        reps.append({S: (_quad(Xt, V, scale), sec, not np.all(np.isfinite(V))) for S, (V, sec) in snaps.items()})
    out = {}
    for M in M_values:
        for S in S_values:
            parts = [reps[m][S] for m in range(M)]
            q = sum(p[0] for p in parts) / M
            seconds = t_setup + sum(p[1] for p in parts)
            qn = QnSet.build(q, np.inf, "neumann", fit_state, dataset, diverged=any(p[2] for p in parts))
            out[S, M] = (qn, seconds)
    return out
