"""Command-line entry point: ``alracv {gen,fit,acv,exact-cv,bounds,bench}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O
(unreadable, missing or malformed files).
"""

from __future__ import annotations

import argparse
import json
import sys
from contextlib import nullcontext

import numpy as np
from threadpoolctl import threadpool_limits

from .data import SyntheticSpec, gen_synthetic, load_dataset, save_libsvm
from .exact import exact_loocv, random_subset
from .exceptions import AcvError, ConfigError
from .families import FAMILY_KINDS, METRIC_KINDS, get_family
from .pipeline import BENCH_FIELDS, RunConfig, StageError, default_threads, fit_summary, parse_grid, run_acv, run_bench
from .solver import DEFAULT_TOL, LOO_TOL, fit

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class _InputError(Exception):
    """Wraps failures while reading the input dataset."""


def _k_value(text):
    if text == "auto":
        return "auto"
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"K must be an integer or 'auto', got {text!r}") from None


def _scale_value(text):
    if text == "auto":
        return "auto"
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"scale must be a number or 'auto', got {text!r}") from None


def _add_common(p, need_input=True):
    p.add_argument("--family", choices=FAMILY_KINDS, required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0, help="ridge parameter (default 1.0)")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL, help="gradient-norm tolerance of the full fit")
    if need_input:
        p.add_argument("--input", required=True, help="libsvm file, or CSV when the name ends in .csv")
        p.add_argument("--label-column", default="0", help="CSV label column (index or header name)")
    p.add_argument("--output", help="where to write the result")
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS threads (env ALRACV_THREADS)")
    p.add_argument("--serial", action="store_true", help="single thread, bitwise reproducible")


def _add_qn(p):
    p.add_argument("--qn", dest="qn_source", choices=("exact", "sketch", "neumann"), default="sketch")
    p.add_argument("--k", dest="K", type=_k_value, default=None, help="sketch rank, or 'auto'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nu", type=float, default=None, help="Nystrom stabilizing shift")
    p.add_argument("--power", type=int, default=1, help="subspace-iteration passes")
    p.add_argument("--S", dest="neumann_S", type=int, default=50, help="Neumann recursion depth")
    p.add_argument("--M", dest="neumann_M", type=int, default=2, help="Neumann repetitions")
    p.add_argument("--neumann-scale", type=_scale_value, default=1.0)
    p.add_argument("--sketch-in", help="reuse a sketch saved with --sketch-out")
    p.add_argument("--sketch-out", help="save the sketch (.npz)")


def build_parser():
    parser = argparse.ArgumentParser(prog="alracv", description="Approximate LOOCV with certified error bounds")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="draw a synthetic approximately-low-rank dataset")
    g.add_argument("--family", choices=FAMILY_KINDS, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--rank", type=int, required=True)
    g.add_argument("--tail-std", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=1, help="data seed")
    g.add_argument("--theta-seed", type=int, default=0)
    g.add_argument("--rotate", action="store_true")
    g.add_argument("--out", required=True, help="libsvm output path")
    g.add_argument("--theta-out", help="optional .npy path for theta_star")

    f = sub.add_parser("fit", help="fit the regularized GLM and write theta as JSON")
    _add_common(f)

    a = sub.add_parser("acv", help="approximate LOOCV with bounds and exact fallback")
    _add_common(a)
    _add_qn(a)
    a.add_argument("--method", choices=("ns", "ij", "both"), default="both")
    a.add_argument("--policy", help="fallback policy top:J or tau:X")
    a.add_argument("--err", dest="metric", choices=METRIC_KINDS, help="discrepancy metric")
    a.add_argument("--exact-subset", type=int, help="also refit this many random points exactly")
    a.add_argument("--subset-seed", type=int, default=0)
    a.add_argument("--loo-tol", type=float, default=LOO_TOL)

    b = sub.add_parser("bounds", help="per-point certified bounds without exact refits")
    _add_common(b)
    _add_qn(b)
    b.add_argument("--method", choices=("ns", "ij", "both"), default="both")
    b.add_argument("--policy", help="flag points by policy top:J or tau:X")
    b.add_argument("--err", dest="metric", choices=METRIC_KINDS)

    e = sub.add_parser("exact-cv", help="exact leave-one-out refits")
    _add_common(e)
    e.add_argument("--exact-subset", type=int, help="refit this many random points (default all)")
    e.add_argument("--subset-seed", type=int, default=0)
    e.add_argument("--err", dest="metric", choices=METRIC_KINDS)
    e.add_argument("--loo-tol", type=float, default=LOO_TOL)

    h = sub.add_parser("bench", help="error-versus-time table (CSV)")
    _add_common(h)
    h.add_argument("--method", choices=("ns", "ij", "both"), default="ij")
    h.add_argument("--k-grid", default="", help="sketch ranks, e.g. 1,100,200 or 1:1000:100")
    h.add_argument("--baseline", choices=("neumann", "none"), default="none")
    h.add_argument("--S-grid", default="1:200:5")
    h.add_argument("--M", dest="M_grid", default="2,5")
    h.add_argument("--neumann-scale", type=_scale_value, default=1.0)
    h.add_argument("--exact-subset", type=int, default=20)
    h.add_argument("--subset-seed", type=int, default=0)
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--nu", type=float, default=None)
    h.add_argument("--power", type=int, default=1)
    h.add_argument("--loo-tol", type=float, default=LOO_TOL)
    return parser


def _thread_limit(args):
    if getattr(args, "serial", False):
        return threadpool_limits(limits=1)
    threads = getattr(args, "threads", None) or default_threads()
    if threads < 1:
        raise ConfigError("--threads must be at least 1")
    return threadpool_limits(limits=threads)


def _load(args):
    label = args.label_column
    label = int(label) if str(label).lstrip("-").isdigit() else label
    try:
        return load_dataset(args.input, family=args.family, label_column=label)
    except (OSError, ValueError) as exc:
        raise _InputError(str(exc)) from exc


def _write_json(obj, path):
    text = json.dumps(obj, indent=1)
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        print(text)


def _run_config(args, command):
    fields = {k: v for k, v in vars(args).items() if k in RunConfig.__dataclass_fields__}
    fields["command"] = command
    try:
        _add_grids(fields, args, command)
    except ValueError as exc:
        raise ConfigError(f"bad grid specification: {exc}") from None
    return RunConfig(**fields).validate()


def _add_grids(fields, args, command):
    if command == "bench":
        fields["k_grid"] = tuple(parse_grid(args.k_grid))
        if args.baseline == "neumann":
            fields["S_grid"] = tuple(parse_grid(args.S_grid))
            fields["M_grid"] = tuple(parse_grid(args.M_grid))
        else:
            fields["S_grid"] = fields["M_grid"] = ()


def cmd_gen(args):
    try:
        spec = _gen_spec(args)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ds, theta = gen_synthetic(spec)
    save_libsvm(ds, args.out)
    if args.theta_out:
        np.save(args.theta_out, theta)
    print(json.dumps({"N": ds.N, "D": ds.D, "out": args.out}))


def _gen_spec(args):
    return SyntheticSpec(
        family_kind=args.family,
        N=args.n,
        D=args.d,
        rank=args.rank,
        tail_std=args.tail_std,
        theta_star_seed=args.theta_seed,
        data_seed=args.seed,
        rotate=args.rotate,
    )


def cmd_fit(args):
    ds = _load(args)
    f = fit(ds, args.family, args.lam, tol=args.tol)
    out = fit_summary(f)
    out.update(schema_version="1.0", command="fit", N=ds.N, D=ds.D)
    _write_json(out, args.output)


def cmd_exact_cv(args):
    ds = _load(args)
    family = get_family(args.family)
    subset = None if args.exact_subset is None else random_subset(ds.N, args.exact_subset, args.subset_seed)
    res = exact_loocv(ds, family, args.lam, subset=subset, metric=args.metric, tol=args.loo_tol)
    out = {
        "schema_version": "1.0",
        "command": "exact-cv",
        "family": family.kind,
        "lambda": args.lam,
        "N": ds.N,
        "D": ds.D,
        "indices": res.indices.tolist(),
        "predictions": res.predictions.tolist(),
        "err": None if res.err is None else res.err.tolist(),
        "mean_err": res.mean_err,
        "seconds": res.seconds,
        "seconds_per_fold": res.seconds_per_fold,
        "extrapolated_seconds": res.seconds_per_fold * ds.N,
    }
    _write_json(out, args.output)


def cmd_acv(args, command="acv"):
    config = _run_config(args, command)
    ds = _load(args)
    report = run_acv(config, ds)
    if not config.output:
        print(json.dumps(report.to_dict()["summary"], indent=1))


def cmd_bench(args):
    config = _run_config(args, "bench")
    ds = _load(args)
    rows = run_bench(config, ds)
    if not config.output:
        print(",".join(BENCH_FIELDS))
        for r in rows:
            print(",".join("" if r.get(k) is None else str(r.get(k)) for k in BENCH_FIELDS))


COMMANDS = {
    "gen": cmd_gen,
    "fit": cmd_fit,
    "acv": cmd_acv,
    "bounds": lambda a: cmd_acv(a, "bounds"),
    "exact-cv": cmd_exact_cv,
    "bench": cmd_bench,
}


def _exit_code(exc):
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, (_InputError, OSError)):
        return EXIT_IO
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    return EXIT_NUMERIC


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        limits = _thread_limit(args) if args.command != "gen" else nullcontext()
        with limits:
            COMMANDS[args.command](args)
    except (AcvError, _InputError, OSError, ValueError, np.linalg.LinAlgError) as exc:
        stage = f" [{exc.stage}]" if isinstance(exc, StageError) else ""
        print(f"alracv {args.command}{stage}: {exc}", file=sys.stderr)
        return _exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
