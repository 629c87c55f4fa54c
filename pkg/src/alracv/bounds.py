"""Certified per-datapoint error bounds for the NS and IJ approximations.

All quantities are vectorized over datapoints.  Conventions follow
:mod:`alracv.exact`: ``H`` carries the ``1/N`` factor, so the sketch error on
a prediction is ``|D1_n| / N`` times the error on ``Q_n``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .exact import POLE_GUARD, QnSet
from .families import get_family, get_metric
from .solver import FitState


@dataclass(frozen=True, eq=False)
class PerPointBounds:
    m_n: np.ndarray
    e_n: np.ndarray
    eta_n: np.ndarray
    ns_bound: np.ndarray
    ij_bound: np.ndarray
    z_lo: np.ndarray
    z_hi: np.ndarray

    def for_method(self, method):
        return self.ns_bound if method == "ns" else self.ij_bound


def zn_radius(fit_state: FitState, dataset: Dataset):
    """Half-width of the symmetric interval containing every ``x_n^T theta`` on the LOO segment."""
    return np.abs(fit_state.z) + np.abs(fit_state.d1) * dataset.sq_row_norms / (fit_state.N * fit_state.lam)


def zn_interval(fit_state: FitState, dataset: Dataset, n=None):
    r = zn_radius(fit_state, dataset)
    if n is not None:
        return float(-r[n]), float(r[n])
    return -r, r


def mn_bound(fit_state: FitState, dataset: Dataset, family=None, n=None):
    """``M_n = max_{|z| <= r_n} |D3(z)| * (1/N) sum_{m != n} ||x_m||^2``.

    The leave-one-out norm sum is the precomputed total minus ``||x_n||^2``.
    """
    family = get_family(family or fit_state.family)
    sq = dataset.sq_row_norms
    rest = (sq.sum() - sq) / fit_state.N
    r = zn_radius(fit_state, dataset)
    if family.kind == "poisson":
        env = np.exp(r)
    elif family.kind == "gaussian":
        env = np.zeros_like(r)
    elif family.sharp:
        env = np.array([family.d3_envelope(-ri, ri) for ri in r])
    else:
        env = np.full_like(r, 0.25)
    out = np.maximum(env * rest, 0.0)
    return float(out[n]) if n is not None else out


def en_bound(q_tilde, eta, d2, N=1, pole_guard=POLE_GUARD):
    """Worst change of ``q / (1 - D2 q / N)`` when ``q`` moves by ``eta``.

    Returns ``inf`` where the denominator comes within ``pole_guard`` of zero
    anywhere on ``[q_tilde - eta, q_tilde + eta]``.  With ``N=1`` this is
    the map ``q / (1 - D2 q)``.
    """
    q = np.asarray(q_tilde, dtype=float)
    eta = np.asarray(eta, dtype=float)
    c = np.asarray(d2, dtype=float) / N
    q, eta, c = np.broadcast_arrays(q, eta, c)
    lo, hi = q - eta, q + eta
    den_q, den_lo, den_hi = 1.0 - c * q, 1.0 - c * lo, 1.0 - c * hi
    # denominator is affine in q, so its extremes on the interval sit at the ends
    bad = (np.minimum(den_lo, den_hi) < pole_guard) | (den_q < pole_guard)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = q / den_q
        e = np.maximum(np.abs(hi / den_hi - g), np.abs(lo / den_lo - g))
    e = np.where(bad, np.inf, e)
    e = np.where(eta == 0, 0.0, e)
    return e if e.ndim else float(e)


def pointwise_bounds(fit_state: FitState, dataset: Dataset, family=None, qn: QnSet = None) -> PerPointBounds:
    """Per-point bounds on ``|approx - x_n^T theta_{-n}|`` for NS and IJ.

    ``ns = M_n D1^2 ||x||^3 / (N^2 lam^3) + |D1| E_n / N``
    ``ij = M_n D1^2 ||x||^3 / (N^2 lam^3) + |D1| D2 ||x||^4 / (N^2 lam^2) + |D1| eta_n / N``
    """
    family = get_family(family or fit_state.family)
    N, lam = fit_state.N, fit_state.lam
    a1 = np.abs(fit_state.d1)
    norms = dataset.row_norms
    m = mn_bound(fit_state, dataset, family)
    e = en_bound(qn.q, qn.eta, fit_state.d2, N)
    curvature = m / (N**2 * lam**3) * a1**2 * norms**3
    with np.errstate(invalid="ignore"):
        sketch_ns = np.where(a1 == 0, 0.0, a1 * e / N)
    ns = curvature + sketch_ns
    ij = curvature + a1 * fit_state.d2 * norms**4 / (N**2 * lam**2) + a1 * qn.eta / N
    lo, hi = zn_interval(fit_state, dataset)
    return PerPointBounds(m_n=m, e_n=e, eta_n=qn.eta, ns_bound=ns, ij_bound=ij, z_lo=lo, z_hi=hi)


def err_interval(prediction, bound, metric, y):
    """Exact range of ``Err(z, y)`` for ``z`` within ``bound`` of ``prediction``.

    Returns ``(err_lo, err_hi)``; an infinite bound gives ``(0, inf)``.
    """
    metric = get_metric(metric)
    if not bound >= 0:
        raise ValueError("bound must be nonnegative")
    if not np.isfinite(bound):
        return 0.0, np.inf
    lo_z, hi_z = prediction - bound, prediction + bound
    with np.errstate(over="ignore"):
        vals = [float(metric(lo_z, y)), float(metric(hi_z, y))]
    crit = metric.critical_point(y)
    if crit is not None and lo_z <= crit <= hi_z:
        vals.append(float(metric(crit, y)))
    return min(vals), max(vals)


def err_intervals(predictions, bounds, metric, y):
    out = np.array([err_interval(p, b, metric, yy) for p, b, yy in zip(predictions, bounds, y)])
    return out[:, 0], out[:, 1]


def parse_policy(policy):
    """``"top:J"`` / ``"tau:X"`` / ``("top", J)`` -> ``(kind, value)``."""
    if policy is None:
        return None
    if isinstance(policy, str):
        kind, _, val = policy.partition(":")
        policy = (kind, val)
    kind, val = policy
    if kind == "top":
        return "top", int(val)
    if kind == "tau":
        return "tau", float(val)
    raise ValueError(f"unknown fallback policy {policy!r}; use top:J or tau:X")


def fallback_select(bounds, policy=None):
    """Indices to reroute to exact refits.

    Infinite or NaN bounds are always selected.  ``top:J`` adds the ``J``
    largest finite bounds; ``tau:X`` adds every bound above ``X``.
    """
    b = np.asarray(bounds, dtype=float)
    chosen = set(np.flatnonzero(~np.isfinite(b)).tolist())
    policy = parse_policy(policy)
    finite = np.flatnonzero(np.isfinite(b))
    if policy is not None and finite.size:
        kind, val = policy
        if kind == "top":
            order = finite[np.argsort(-b[finite], kind="stable")]
            chosen.update(order[: max(val, 0)].tolist())
        else:
            chosen.update(finite[b[finite] > val].tolist())
    return np.array(sorted(chosen), dtype=int)


def interval_summary(err_lo, err_hi, excluded=()):
    """Mean lower/upper bars over points with finite bounds."""
    keep = np.ones(len(err_lo), dtype=bool)
    keep[np.asarray(list(excluded), dtype=int)] = False
    keep &= np.isfinite(err_hi)
    return float(np.mean(np.asarray(err_lo)[keep])), float(np.mean(np.asarray(err_hi)[keep]))

