"""Approximate leave-one-out cross-validation for l2-regularized GLMs.

Predictions from a single fit (Newton-step and infinitesimal-jackknife
approximations) use a randomized low-rank sketch of the Hessian and come
with computable per-datapoint error bounds.  The dense brute-force oracles
and the stochastic Neumann baseline live in :mod:`alracv.oracles` and are
not re-exported here.
"""

from .bounds import (
    PerPointBounds,
    en_bound,
    err_interval,
    err_intervals,
    fallback_select,
    mn_bound,
    pointwise_bounds,
    zn_interval,
)
from .data import (
    Dataset,
    SyntheticSpec,
    gen_synthetic,
    load_csv,
    load_dataset,
    load_libsvm,
    make_rng,
    pairwise_expand,
    save_libsvm,
    select_dense_features,
    subsample_rows,
)
from .exact import (
    LoocvResult,
    QnSet,
    exact_loocv,
    exact_qn,
    ij_predict,
    ns_predict,
    percent_error,
    restrict_to_rank,
)
from .exceptions import AcvError, ConfigError, ConvergenceError, DomainError, FactorizationError, SketchError
from .families import ErrMetric, GlmFamily, eval_err, get_family, get_metric
from .pipeline import AcvReport, RunConfig, run_acv, run_bench
from .sketch import HessianSketch, agreement_basis, auto_k, build_omega, build_sketch, qn_from_sketch, stable_nystrom
from .solver import FitState, fit, loo_fit

__version__ = "0.1.0"

__all__ = [
    "AcvError",
    "AcvReport",
    "ConfigError",
    "ConvergenceError",
    "Dataset",
    "DomainError",
    "ErrMetric",
    "FactorizationError",
    "FitState",
    "GlmFamily",
    "HessianSketch",
    "LoocvResult",
    "PerPointBounds",
    "QnSet",
    "RunConfig",
    "SketchError",
    "SyntheticSpec",
    "agreement_basis",
    "auto_k",
    "build_omega",
    "build_sketch",
    "en_bound",
    "err_interval",
    "err_intervals",
    "eval_err",
    "exact_loocv",
    "exact_qn",
    "fallback_select",
    "fit",
    "gen_synthetic",
    "get_family",
    "get_metric",
    "ij_predict",
    "load_csv",
    "load_dataset",
    "load_libsvm",
    "loo_fit",
    "make_rng",
    "mn_bound",
    "ns_predict",
    "pairwise_expand",
    "percent_error",
    "qn_from_sketch",
    "restrict_to_rank",
    "run_acv",
    "run_bench",
    "save_libsvm",
    "select_dense_features",
    "stable_nystrom",
    "subsample_rows",
    "pointwise_bounds",
    "zn_interval",
]
