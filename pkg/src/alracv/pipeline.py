"""End-to-end approximate LOOCV runs and benchmark sweeps.

:func:`run_acv` chains fit -> Q_n estimates -> NS/IJ predictions -> bounds
-> fallback selection -> exact refits on the fallback set, recording the
wall time of every stage.  :func:`run_bench` times competing ways of
computing the LOO predictions against an exact-CV reference subset.
"""

from __future__ import annotations

import csv
import json
import os
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bounds as bnd
from .data import Dataset, load_dataset
from .exact import QnSet, exact_loocv, exact_qn, ij_predict, ns_poles, ns_predict, percent_error, random_subset
from .exceptions import AcvError, ConfigError
from .families import FAMILY_KINDS, eval_err, get_family
from .oracles import NeumannConfig, neumann_path, neumann_qn
from .sketch import HessianSketch, auto_k, build_sketch, qn_from_sketch
from .solver import DEFAULT_TOL, LOO_TOL, FitState, fit

SCHEMA_VERSION = "1.0"
METHODS = ("ns", "ij")


@dataclass
class RunConfig:
    command: str = "acv"
    family: str = "logistic"
    lam: float = 1.0
    method: str = "both"
    qn_source: str = "sketch"
    K: int | str | None = None
    seed: int = 0
    nu: float | None = None
    power: int = 1
    tol: float = DEFAULT_TOL
    loo_tol: float = LOO_TOL
    policy: str | None = None
    metric: str | None = None
    exact_subset: int | None = None
    subset_seed: int = 0
    neumann_S: int = 50
    neumann_M: int = 2
    neumann_scale: float | str = 1.0
    k_grid: tuple = ()
    S_grid: tuple = ()
    M_grid: tuple = ()
    input: str | None = None
    output: str | None = None
    sketch_in: str | None = None
    sketch_out: str | None = None
    label_column: int | str = 0

    def validate(self):
        if self.family not in FAMILY_KINDS:
            raise ConfigError(f"unknown family {self.family!r}")
        if not (isinstance(self.lam, (int, float)) and self.lam > 0):
            raise ConfigError("lambda must be positive")
        if self.method not in ("ns", "ij", "both"):
            raise ConfigError("method must be ns, ij or both")
        if self.qn_source not in ("exact", "sketch", "neumann"):
            raise ConfigError("qn source must be exact, sketch or neumann")
        if self.command in ("acv", "bounds") and self.qn_source == "sketch" and self.K is None and self.sketch_in is None:
            raise ConfigError("a sketch Q_n source requires --k (an integer or 'auto')")
        if isinstance(self.K, str) and self.K != "auto":
            raise ConfigError(f"invalid K {self.K!r}")
        if isinstance(self.K, int) and self.K < 1:
            raise ConfigError("K must be positive")
        if self.exact_subset is not None and self.exact_subset < 1:
            raise ConfigError("exact subset size must be positive")
        if self.neumann_S < 1 or self.neumann_M < 1:
            raise ConfigError("Neumann S and M must be positive")
        if self.neumann_scale != "auto" and not (isinstance(self.neumann_scale, (int, float)) and self.neumann_scale > 0):
            raise ConfigError("Neumann scale must be positive or 'auto'")
        if self.policy is not None:
            try:
                bnd.parse_policy(self.policy)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        return self

    @property
    def methods(self):
        return METHODS if self.method == "both" else (self.method,)


class StageError(AcvError):
    """A pipeline stage failed; ``partial`` holds the completed report fields."""

    def __init__(self, stage, cause, partial=None):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.partial = partial


@dataclass
class AcvReport:
    config: dict
    N: int
    D: int
    methods: tuple
    qn: QnSet | None = None
    fit: FitState | None = None
    predictions: dict = field(default_factory=dict)
    approx: dict = field(default_factory=dict)
    bounds: bnd.PerPointBounds | None = None
    fallback: dict = field(default_factory=dict)
    exact_loo: dict = field(default_factory=dict)
    err: dict = field(default_factory=dict)
    err_lo: dict = field(default_factory=dict)
    err_hi: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    sketch_K: int | None = None
    error: dict | None = None

    def to_dict(self):
        return report_to_dict(self)

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def _col(a):
    if a is None:
        return None
    return [float(v) if np.isfinite(v) else None for v in np.asarray(a, dtype=float)]


def report_to_dict(report: AcvReport):
    """JSON-ready dict; non-finite numbers become ``null``."""
    N = report.N
    points = {"index": list(range(N))}
    if report.fit is not None:
        points.update(z=_col(report.fit.z), d1=_col(report.fit.d1), d2=_col(report.fit.d2))
    if report.qn is not None:
        points.update(q=_col(report.qn.q), eta=_col(report.qn.eta))
    if report.bounds is not None:
        b = report.bounds
        points.update(mn=_col(b.m_n), en=_col(b.e_n), ns_bound=_col(b.ns_bound), ij_bound=_col(b.ij_bound))
    for m in report.methods:
        if m in report.predictions:
            points[f"prediction_{m}"] = _col(report.predictions[m])
            points[f"approx_{m}"] = _col(report.approx[m])
            reasons = [None] * N
            for i, why in report.fallback.get(m, {}).items():
                reasons[int(i)] = why
            points[f"fallback_reason_{m}"] = reasons
        for name, store in (("err", report.err), ("err_lo", report.err_lo), ("err_hi", report.err_hi)):
            if m in store:
                points[f"{name}_{m}"] = _col(store[m])
    if report.exact_loo:
        col = [None] * N
        for i, v in report.exact_loo.items():
            col[int(i)] = float(v)
        points["exact_loo"] = col
    return {
        "schema_version": SCHEMA_VERSION,
        "command": report.config.get("command", "acv"),
        "family": report.config.get("family"),
        "lambda": report.config.get("lam"),
        "N": N,
        "D": report.D,
        "methods": list(report.methods),
        "qn_source": report.qn.source if report.qn is not None else report.config.get("qn_source"),
        "K": report.sketch_K,
        "seed": report.config.get("seed"),
        "config": _jsonable(report.config),
        "timings": {k: float(v) for k, v in report.timings.items()},
        "summary": _jsonable(report.summary),
        "points": points,
        "error": report.error,
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "command", "family", "lambda", "N", "D", "methods", "timings", "points"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "command": {"type": "string"},
        "family": {"enum": list(FAMILY_KINDS)},
        "lambda": {"type": "number", "exclusiveMinimum": 0},
        "N": {"type": "integer", "minimum": 1},
        "D": {"type": "integer", "minimum": 1},
        "methods": {"type": "array", "items": {"enum": list(METHODS)}},
        "qn_source": {"enum": ["exact", "sketch", "neumann", None]},
        "K": {"type": ["integer", "null"]},
        "timings": {"type": "object", "additionalProperties": {"type": "number"}},
        "summary": {"type": "object"},
        "points": {
            "type": "object",
            "required": ["index"],
            "additionalProperties": {"type": "array", "items": {"type": ["number", "string", "null"]}},
        },
        "error": {"type": ["object", "null"]},
    },
}


@contextmanager
def _stage(report, name):
    t0 = time.perf_counter()
    try:
        yield
    except AcvError as exc:
        report.error = {"stage": name, "message": str(exc)}
        raise StageError(name, exc, report) from exc
    except (ValueError, np.linalg.LinAlgError) as exc:
        report.error = {"stage": name, "message": str(exc)}
        raise StageError(name, exc, report) from exc
    finally:
        report.timings[name] = time.perf_counter() - t0


def compute_qn(config: RunConfig, dataset: Dataset, fit_state: FitState):
    """Q_n estimates for the configured source; returns ``(QnSet, K or None)``."""
    if config.qn_source == "exact":
        return exact_qn(fit_state, dataset), None
    if config.qn_source == "neumann":
        cfg = NeumannConfig(S=config.neumann_S, M=config.neumann_M, seed=config.seed, scale=config.neumann_scale)
        return neumann_qn(fit_state, dataset, cfg), None
    if config.sketch_in:
        sketch = HessianSketch.load(config.sketch_in)
        if not np.isclose(sketch.lam, fit_state.lam):
            raise ConfigError("stored sketch was built with a different lambda")
    else:
        K = config.K
        if K == "auto":
            K = auto_k(dataset, fit_state, seed=config.seed, power=config.power, nu=config.nu)
        K = min(int(K), dataset.D)
        sketch = build_sketch(dataset, fit_state, K, seed=config.seed, nu=config.nu, power=config.power)
    if config.sketch_out:
        sketch.save(config.sketch_out)
    return qn_from_sketch(sketch, dataset, fit_state), sketch.K


def run_acv(config: RunConfig, dataset: Dataset | None = None) -> AcvReport:
    """Approximate LOOCV with certified bounds; writes JSON when ``config.output`` is set."""
    config.validate()
    family = get_family(config.family)
    if dataset is None:
        dataset = load_dataset(config.input, family=family, label_column=config.label_column)
    report = AcvReport(config=asdict(config), N=dataset.N, D=dataset.D, methods=config.methods)
    try:
        _run_stages(config, dataset, family, report)
    except StageError:
        if config.output:
            report.write(config.output)
        raise
    if config.output:
        report.write(config.output)
    return report


def _run_stages(config, dataset, family, report):
    with _stage(report, "fit"):
        f = fit(dataset, family, config.lam, tol=config.tol)
        report.fit = f
    with _stage(report, "qn"):
        qn, K = compute_qn(config, dataset, f)
        report.qn, report.sketch_K = qn, K
    with _stage(report, "predict"):
        for m in config.methods:
            report.approx[m] = ns_predict(f, qn) if m == "ns" else ij_predict(f, qn)
    certified = qn.source in ("exact", "sketch")
    if certified:
        with _stage(report, "bounds"):
            report.bounds = bnd.pointwise_bounds(f, dataset, family, qn)
    with _stage(report, "fallback"):
        for m in config.methods:
            reasons = {}
            if m == "ns":
                for i in ns_poles(f, qn):
                    reasons[int(i)] = "denominator"
            if report.bounds is not None:
                b = report.bounds.for_method(m)
                ranked = b
                if config.metric:
                    # a finite bound can still give an unbounded Err range (exp overflow)
                    pred_b = np.where(np.isfinite(report.approx[m]), b, np.inf)
                    lo, hi = bnd.err_intervals(report.approx[m], pred_b, config.metric, dataset.y)
                    report.err_lo[m], report.err_hi[m] = lo, hi
                    b = np.where(np.isfinite(hi), b, np.inf)
                    # the policy ranks points by their Err upper bound
                    ranked = hi
                for i in np.flatnonzero(~np.isfinite(b)):
                    reasons.setdefault(int(i), "infinite_bound")
                if config.policy:
                    for i in bnd.fallback_select(ranked, config.policy):
                        reasons.setdefault(int(i), "policy")
            report.fallback[m] = reasons
    if config.command == "bounds":
        # flags only: fallback points are reported, not refit
        with _stage(report, "report"):
            _merge_and_summarize(config, dataset, report, np.array([], dtype=int))
        return
    refit = sorted({i for r in report.fallback.values() for i in r})
    if config.exact_subset:
        subset = random_subset(dataset.N, config.exact_subset, config.subset_seed)
        report.summary["exact_subset"] = subset.tolist()
    else:
        subset = np.array([], dtype=int)
    todo = sorted(set(refit) | set(subset.tolist()))
    with _stage(report, "exact_refit"):
        if todo:
            res = exact_loocv(dataset, family, config.lam, subset=todo, fit_state=f, tol=config.loo_tol)
            report.exact_loo = {int(i): float(p) for i, p in zip(res.indices, res.predictions)}
            report.summary["exact_seconds_per_fold"] = res.seconds_per_fold
            report.summary["exact_cv_seconds_extrapolated"] = res.seconds_per_fold * dataset.N
    with _stage(report, "report"):
        _merge_and_summarize(config, dataset, report, subset)


def _merge_and_summarize(config, dataset, report, subset):
    y = dataset.y
    for m in config.methods:
        merged = report.approx[m].copy()
        refit = [i for i in report.fallback[m] if i in report.exact_loo]
        for i in refit:
            merged[i] = report.exact_loo[i]
        report.predictions[m] = merged
        s = {"n_fallback": len(report.fallback[m])}
        if len(subset):
            approx = report.approx[m][subset]
            exact = np.array([report.exact_loo[int(i)] for i in subset])
            ok = np.isfinite(approx)
            s["percent_error"] = percent_error(approx[ok], exact[ok]) if ok.any() else None
        if config.metric:
            with np.errstate(over="ignore", invalid="ignore"):
                err = eval_err(config.metric, merged, y)
            report.err[m] = err
            s["mean_err"] = float(np.mean(err))
            if m in report.err_hi:
                lo, hi = report.err_lo[m], report.err_hi[m]
                inf_pts = np.flatnonzero(~np.isfinite(hi))
                s["n_infinite_bound"] = int(inf_pts.size)
                raw = bnd.interval_summary(lo, hi)
                s["raw_bar_lo"], s["raw_bar_hi"] = raw
                if refit or not report.fallback[m]:
                    # fallback points carry their exact Err as a zero-width interval
                    rlo, rhi = lo.copy(), hi.copy()
                    rlo[refit] = rhi[refit] = err[refit]
                    s["bar_lo"], s["bar_hi"] = float(np.mean(rlo)), float(np.mean(rhi))
                else:
                    s["bar_lo"], s["bar_hi"] = bnd.interval_summary(lo, hi, excluded=list(report.fallback[m]))
        report.summary[m] = s


def fit_summary(f: FitState):
    return {
        "family": f.family.kind,
        "lambda": f.lam,
        "theta": f.theta_hat.tolist(),
        "grad_norm": f.grad_norm,
        "tol": f.tol,
        "n_iter": f.n_iter,
        "seconds": f.seconds,
    }


# ----------------------------------------------------------------------
# benchmarks
# ----------------------------------------------------------------------

BENCH_FIELDS = ("method", "K", "S", "M", "wall_seconds", "mean_percent_error", "extrapolated")


def run_bench(config: RunConfig, dataset: Dataset | None = None, baseline_qn=True):
    """Time every approximation against an exact-CV reference subset.

    Returns a list of row dicts with ``BENCH_FIELDS``; the exact-CV row
    extrapolates the per-fold time to all ``N`` folds.  Percent errors are
    measured on the reference subset only.  Writes CSV to ``config.output``.
    """
    config.validate()
    family = get_family(config.family)
    if dataset is None:
        dataset = load_dataset(config.input, family=family, label_column=config.label_column)
    f = fit(dataset, family, config.lam, tol=config.tol)
    subset = random_subset(dataset.N, config.exact_subset or 20, config.subset_seed)
    ref = exact_loocv(dataset, family, config.lam, subset=subset, fit_state=f, tol=config.loo_tol)
    rows = [
        dict(method="exact_cv", K=None, S=None, M=None, wall_seconds=ref.seconds_per_fold * dataset.N,
             mean_percent_error=0.0, extrapolated=len(subset) < dataset.N)
    ]

    def add(name, qn, qn_seconds, **extra):
        t0 = time.perf_counter()
        preds = {m: (ns_predict(f, qn) if m == "ns" else ij_predict(f, qn)) for m in config.methods}
        wall = qn_seconds + time.perf_counter() - t0
        for m, p in preds.items():
            # a non-finite prediction (pole or divergence) counts as an infinite error
            with np.errstate(invalid="ignore"):
                pe = percent_error(p[subset], ref.predictions)
            pe = pe if np.isfinite(pe) else float("inf")
            rows.append(dict(method=f"{m}_{name}", wall_seconds=wall, mean_percent_error=pe,
                             extrapolated=False, **{"K": None, "S": None, "M": None, **extra}))

    def timed(fn):
        t0 = time.perf_counter()
        out = fn()
        return out, time.perf_counter() - t0

    if baseline_qn:
        add("exact", *timed(lambda: exact_qn(f, dataset)))
    for K in config.k_grid:
        K = min(int(K), dataset.D)
        qn, sec = timed(lambda: qn_from_sketch(
            build_sketch(dataset, f, K, seed=config.seed, nu=config.nu, power=config.power), dataset, f))
        add("sketch", qn, sec, K=K)
    if config.S_grid and config.M_grid:
        path = neumann_path(f, dataset, config.S_grid, config.M_grid, seed=config.seed, scale=config.neumann_scale)
        for (S, M), (qn, sec) in sorted(path.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            add("neumann", qn, sec, S=S, M=M)
    if config.output:
        write_bench_csv(rows, config.output)
    return rows


def write_bench_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCH_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in BENCH_FIELDS})


def parse_grid(spec):
    """``"1:200:5"`` -> ``[1, 5, 10, ..., 200]``; ``"2,5"`` -> ``[2, 5]``.

    A ``start:stop:step`` range holds ``start`` followed by every multiple
    of ``step`` in ``(start, stop]``.
    """
    if spec is None or spec == "":
        return []
    if ":" in str(spec):
        start, stop, step = (int(v) for v in str(spec).split(":"))
        vals = {start} | {v for v in range(step, stop + 1, step) if v > start}
        return sorted(vals)
    return [int(v) for v in str(spec).split(",") if v.strip()]


def default_threads():
    env = os.environ.get("ALRACV_THREADS")
    return int(env) if env else os.cpu_count() or 1
