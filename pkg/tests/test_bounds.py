import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alracv.bounds import (
    en_bound,
    err_interval,
    err_intervals,
    fallback_select,
    interval_summary,
    mn_bound,
    parse_policy,
    pointwise_bounds,
    zn_interval,
)
from alracv.data import Dataset
from alracv.exact import exact_loocv, exact_qn, ij_predict, ns_predict
from alracv.oracles import ln_oracle
from alracv.sketch import build_sketch, qn_from_sketch
from alracv.solver import fit, loo_fit
from conftest import small_problem


def test_en_bound_examples():
    assert en_bound(0.5, 0.1, 1.0) == pytest.approx(0.5)
    assert en_bound(0.5, 0.0, 1.0) == 0.0
    assert en_bound(0.3, 0.2, 0.0) == pytest.approx(0.2)
    assert en_bound(0.9, 0.2, 1.0) == np.inf
    # the /N convention: d2 = N is the same as d2 = 1 with N = 1
    assert en_bound(0.5, 0.1, 10.0, N=10) == pytest.approx(0.5)


def test_en_bound_matches_endpoint_brute_force():
    q, eta, d2 = 0.31, 0.07, 1.4
    g = lambda t: t / (1 - d2 * t)
    ts = np.linspace(q - eta, q + eta, 10001)
    assert en_bound(q, eta, d2) == pytest.approx(np.max(np.abs(g(ts) - g(q))), rel=1e-9)


@given(q=st.floats(0, 2), e1=st.floats(0, 1), e2=st.floats(0, 1), d2=st.floats(0, 3))
def test_en_bound_monotone_in_eta(q, e1, e2, d2):
    lo, hi = sorted((e1, e2))
    assert en_bound(q, lo, d2) <= en_bound(q, hi, d2) * (1 + 1e-12) + 1e-300


def test_zn_interval_examples():
    X = np.array([[1.0, 2.0], [0.0, 0.0], [0.5, -1.0]])
    ds = Dataset(X, [1.0, 0.0, 2.0])
    f = fit(ds, "poisson", 0.5)
    from dataclasses import replace

    f0 = replace(f, d1=np.zeros(3))
    lo, hi = zn_interval(f0, ds, 0)
    assert (lo, hi) == (-abs(f.z[0]), abs(f.z[0]))
    assert zn_interval(f, ds, 1) == (0.0, 0.0)


def test_zn_interval_contains_loo_predictions(poisson_small):
    ds, f = poisson_small
    lo, hi = zn_interval(f, ds)
    for n in range(ds.N):
        z = ds.X[n] @ loo_fit(ds, "poisson", 0.5, n, f)
        assert lo[n] <= z <= hi[n]


def test_mn_bound_examples(logistic_small, gaussian_small, poisson_small):
    ds, f = gaussian_small
    np.testing.assert_array_equal(mn_bound(f, ds), 0.0)
    ds, f = logistic_small
    sq = ds.sq_row_norms
    np.testing.assert_allclose(mn_bound(f, ds), 0.25 * (sq.sum() - sq) / ds.N)
    # poisson: radius 2 and leave-one-out norm mass 3 give 3 e^2
    X = np.array([[1.0, 0.0], [0.0, np.sqrt(6.0)]])
    ds = Dataset(X, [0.0, 0.0])
    f = fit(ds, "poisson", 1.0)
    from dataclasses import replace

    f = replace(f, z=np.array([2.0, 0.0]), d1=np.zeros(2))
    assert mn_bound(f, ds, n=0) == pytest.approx(3 * np.e**2, abs=1e-3)


def test_err_interval_examples():
    assert err_interval(0.4, 0.0, "squared", 2.0) == (pytest.approx((np.exp(0.4) - 2) ** 2),) * 2
    lo, hi = err_interval(0.0, 1.0, "squared_of_mean", 1.0)
    assert lo == 0.0 and hi == pytest.approx((np.e - 1) ** 2)
    lo, hi = err_interval(2.0, 0.1, "squared_of_mean", 0.0)
    assert lo == pytest.approx(np.exp(3.8)) and hi == pytest.approx(np.exp(4.2))
    assert err_interval(1.0, np.inf, "squared", 1.0) == (0.0, np.inf)
    with pytest.raises(ValueError):
        err_interval(0.0, -1.0, "squared", 1.0)


@given(p=st.floats(-3, 3), b=st.floats(0, 2), y=st.floats(0, 10), kind=st.sampled_from(["squared", "absolute"]))
def test_err_interval_contains_grid(p, b, y, kind):
    lo, hi = err_interval(p, b, kind, y)
    from alracv.families import eval_err

    vals = eval_err(kind, np.linspace(p - b, p + b, 201), y)
    assert lo <= vals.min() * (1 + 1e-9) + 1e-12
    assert hi >= vals.max() * (1 - 1e-9) - 1e-12


def test_fallback_examples():
    assert fallback_select([0.1, 0.2], ("tau", 1.0)).size == 0
    np.testing.assert_array_equal(fallback_select([0.1, np.inf, 0.2]), [1])
    np.testing.assert_array_equal(fallback_select([0.1, np.inf, 0.2], "tau:100"), [1])
    np.testing.assert_array_equal(fallback_select([5, 1, 9, 3], "top:2"), [0, 2])
    np.testing.assert_array_equal(fallback_select([5, 1, 9, np.nan], "tau:4"), [0, 2, 3])
    assert parse_policy("top:2") == ("top", 2)
    with pytest.raises(ValueError):
        parse_policy("median:1")


def test_interval_summary_excludes():
    lo, hi = interval_summary([1, 2, 0], [3, 4, np.inf], excluded=[1])
    assert (lo, hi) == (1.0, 3.0)


def test_gaussian_exact_bounds_vanish(gaussian_small):
    ds, f = gaussian_small
    b = pointwise_bounds(f, ds, qn=exact_qn(f, ds))
    np.testing.assert_array_equal(b.ns_bound, 0.0)
    assert np.all(b.ij_bound >= 0)


@pytest.mark.parametrize("family", ["poisson", "logistic"])
@pytest.mark.parametrize("source", ["exact", "sketch"])
def test_bound_domination(family, source):
    ds = small_problem(family, N=40, D=10, seed=21)
    f = fit(ds, family, 0.3)
    qn = exact_qn(f, ds) if source == "exact" else qn_from_sketch(build_sketch(ds, f, 4, seed=2), ds, f)
    b = pointwise_bounds(f, ds, qn=qn)
    exact = exact_loocv(ds, family, 0.3, fit_state=f).predictions
    assert np.all(np.abs(ns_predict(f, qn) - exact) <= b.ns_bound + 1e-8)
    assert np.all(np.abs(ij_predict(f, qn) - exact) <= b.ij_bound + 1e-8)
    lo, hi = err_intervals(ij_predict(f, qn), b.ij_bound, "squared", ds.y)
    assert np.all(lo <= hi)


@given(
    family=st.sampled_from(["poisson", "logistic", "gaussian"]),
    seed=st.integers(0, 10_000),
    lam=st.floats(0.1, 3.0),
)
def test_ln_below_mn_and_newton_bound(family, seed, lam):
    ds = small_problem(family, N=12, D=3, seed=seed)
    f = fit(ds, family, lam)
    n = seed % ds.N
    theta = loo_fit(ds, family, lam, n, f)
    mn = mn_bound(f, ds, n=n)
    assert ln_oracle(f, ds, family, n, theta) <= mn * (1 + 1e-10) + 1e-300
    ns = ns_predict(f, exact_qn(f, ds))[n]
    bound = mn / (ds.N**2 * lam**3) * f.d1[n] ** 2 * ds.row_norms[n] ** 3
    assert abs(ns - ds.X[n] @ theta) <= bound + 1e-9


def test_segment_constant_alone_is_not_a_bound():
    # The oracle constant only tracks D3 along x_n's own path, so it can
    # undershoot the true Hessian variation; the product bound uses M_n.
    ds = small_problem("logistic", N=12, D=3, seed=455)
    f = fit(ds, "logistic", 2.0)
    n = 455 % ds.N
    theta = loo_fit(ds, "logistic", 2.0, n, f)
    scale = f.d1[n] ** 2 * ds.row_norms[n] ** 3 / (ds.N**2 * 2.0**3)
    err = abs(ns_predict(f, exact_qn(f, ds))[n] - ds.X[n] @ theta)
    assert err > ln_oracle(f, ds, "logistic", n, theta) * scale
    assert err <= mn_bound(f, ds, n=n) * scale
