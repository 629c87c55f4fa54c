"""Error versus wall time: the Hessian sketch against a stochastic Neumann series.

Both methods estimate the quadratic forms x_n^T H^{-1} x_n that drive the
infinitesimal-jackknife approximation.  The sketch is swept over its rank
K and the Neumann series over its depth S and repetition count M.  Errors
are percent deviations from exact refits on 40 random points.
"""

from alracv import RunConfig, SyntheticSpec, gen_synthetic, run_bench

ds, _ = gen_synthetic(SyntheticSpec("poisson", N=600, D=300, rank=60, tail_std=0.01))

config = RunConfig(
    command="bench",
    family="poisson",
    method="ij",
    exact_subset=40,
    k_grid=(1, 20, 60, 120, 300),
    S_grid=(1, 10, 50, 100),
    M_grid=(2, 5),
)
rows = run_bench(config, ds)

print(f"{'method':12s} {'K':>5s} {'S':>5s} {'M':>3s} {'seconds':>9s} {'% error':>10s}")
for r in rows:
    fmt = lambda v: "" if v is None else str(v)
    print(f"{r['method']:12s} {fmt(r['K']):>5s} {fmt(r['S']):>5s} {fmt(r['M']):>3s} "
          f"{r['wall_seconds']:9.4f} {r['mean_percent_error']:10.4f}")

# The exact_cv row is extrapolated from the per-fold time of the refits.
# The same table is available from the command line as CSV:
#   alracv bench --family poisson --input data.svm --k-grid 1,20,60 --baseline neumann
