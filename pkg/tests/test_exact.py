import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alracv.data import Dataset, SyntheticSpec, gen_synthetic
from alracv.exact import (
    QnSet,
    exact_loocv,
    exact_qn,
    ij_predict,
    ns_poles,
    ns_predict,
    percent_error,
    qn_cap,
    random_subset,
    restrict_to_rank,
)
from alracv.oracles import dense_hessian, dense_qn_oracle, newton_step_oracle
from alracv.solver import fit
from conftest import small_problem


def test_exact_qn_matches_dense_inverse():
    ds = small_problem("poisson", N=30, D=8, seed=2)
    f = fit(ds, "poisson", 0.4)
    qn = exact_qn(f, ds)
    np.testing.assert_allclose(qn.q, dense_qn_oracle(f, ds), rtol=1e-10)
    assert qn.source == "exact" and np.all(qn.eta == 0)


def test_exact_qn_zero_curvature_is_norm_over_lambda(poisson_small):
    ds, f = poisson_small
    from dataclasses import replace

    flat = replace(f, d2=np.zeros(ds.N))
    np.testing.assert_allclose(exact_qn(flat, ds).q, ds.sq_row_norms / f.lam, rtol=1e-12)


def test_exact_qn_scalar_case():
    ds = Dataset(np.array([[1.0]]), [0.0])
    f = fit(ds, "poisson", 1.0)
    from dataclasses import replace

    f = replace(f, d2=np.array([1.0]))
    assert exact_qn(f, ds).q[0] == pytest.approx(0.5)


def test_ns_matches_sherman_morrison_brute_force(poisson_small):
    ds, f = poisson_small
    ns = ns_predict(f, exact_qn(f, ds))
    X, N = ds.X, ds.N
    H = dense_hessian(f, ds)
    for n in range(N):
        Hn = H - f.d2[n] / N * np.outer(X[n], X[n])
        expect = f.z[n] + X[n] @ np.linalg.solve(Hn, f.d1[n] * X[n]) / N
        assert ns[n] == pytest.approx(expect, rel=1e-9)
        assert ns[n] == pytest.approx(newton_step_oracle(f, ds, "poisson", n), rel=1e-9)


def test_ij_matches_direct_formula(poisson_small):
    ds, f = poisson_small
    ij = ij_predict(f, exact_qn(f, ds))
    H = dense_hessian(f, ds)
    expect = [ds.X[n] @ (f.theta_hat + np.linalg.solve(H, f.d1[n] * ds.X[n]) / ds.N) for n in range(ds.N)]
    np.testing.assert_allclose(ij, expect, rtol=1e-10)


def test_zero_residual_and_zero_row():
    X = np.array([[1.0, 0.0], [0.0, 0.0], [0.5, 1.0]])
    ds = Dataset(X, [1.0, 0.0, -1.0])
    f = fit(ds, "gaussian", 1.0)
    qn = exact_qn(f, ds)
    assert qn.q[1] == 0.0
    assert ij_predict(f, qn)[1] == 0.0 and ns_predict(f, qn)[1] == 0.0
    from dataclasses import replace

    f0 = replace(f, d1=np.zeros(3))
    np.testing.assert_array_equal(ns_predict(f0, qn), f.z)
    np.testing.assert_array_equal(ij_predict(f0, qn), f.z)


def test_gaussian_ns_is_exact_loocv(gaussian_small):
    ds, f = gaussian_small
    ns = ns_predict(f, exact_qn(f, ds))
    res = exact_loocv(ds, "gaussian", 0.7, fit_state=f)
    np.testing.assert_allclose(ns, res.predictions, atol=1e-8)
    # hat-matrix form of the same identity
    X, y, N = ds.X, ds.y, ds.N
    A = X.T @ X / N + 0.7 * np.eye(ds.D)
    h = np.einsum("ij,jk,ik->i", X, np.linalg.inv(A), X) / N
    closed = (f.z - h * y) / (1 - h)
    np.testing.assert_allclose(res.predictions, closed, atol=1e-8)


def test_exact_loocv_single_point():
    ds = Dataset(np.array([[2.0, -1.0]]), [1.0])
    res = exact_loocv(ds, "logistic", 1.0, metric="logistic")
    assert res.predictions[0] == 0.0
    assert res.mean_err == pytest.approx(np.log(2))


def test_exact_loocv_subset_and_timing(poisson_small):
    ds, f = poisson_small
    res = exact_loocv(ds, "poisson", 0.5, subset=[3, 1], metric="squared", fit_state=f)
    np.testing.assert_array_equal(res.indices, [3, 1])
    assert res.err.shape == (2,) and res.seconds_per_fold == pytest.approx(res.seconds / 2)


def test_pole_is_reported():
    ds = Dataset(np.array([[1.0]]), [0.0])
    f = fit(ds, "gaussian", 1.0)
    from dataclasses import replace

    f = replace(f, d2=np.array([2.0]))
    qn = QnSet(q=np.array([0.5]), eta=np.zeros(1), source="exact", cap=np.array([1.0]))
    assert np.isnan(ns_predict(f, qn)[0])
    np.testing.assert_array_equal(ns_poles(f, qn), [0])


def test_percent_error_and_subset():
    assert percent_error([1.1, 2.0], [1.0, 2.0]) == pytest.approx(5.0)
    a, b = random_subset(100, 20, 5), random_subset(100, 20, 5)
    np.testing.assert_array_equal(a, b)
    assert len(set(a.tolist())) == 20 and np.all(np.diff(a) > 0)


def test_restrict_to_rank():
    ds, _ = gen_synthetic(SyntheticSpec("logistic", 60, 20, 5, data_seed=3))
    sub, V = restrict_to_rank(ds, 5)
    assert np.linalg.norm(ds.X - sub.X @ V.T) <= 1e-8 * np.linalg.norm(ds.X)
    full, V = restrict_to_rank(ds, 20)
    f1, f2 = fit(ds, "logistic", 0.3), fit(full, "logistic", 0.3)
    np.testing.assert_allclose(f1.z, f2.z, atol=1e-10)
    with pytest.raises(ValueError):
        restrict_to_rank(ds, 21)


@given(
    family=st.sampled_from(["poisson", "logistic", "gaussian"]),
    seed=st.integers(0, 10_000),
    lam=st.floats(0.01, 3.0),
)
def test_qn_positive_and_below_cap(family, seed, lam):
    ds = small_problem(family, N=12, D=4, seed=seed)
    f = fit(ds, family, lam)
    qn = exact_qn(f, ds)
    cap = qn_cap(ds.sq_row_norms, f.d2, lam, ds.N)
    assert np.all(qn.q > 0)
    assert np.all(qn.q <= cap * (1 + 1e-12))
