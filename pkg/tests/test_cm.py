import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import ortho_group

from oracles import normal_equations, svec_entrywise
from tvlds.cm import (
    build_cross_design,
    build_sym_design,
    estimate_cm,
    least_squares_solve,
    residual_autocorrelation,
    svec,
    svec_inv,
    unvec,
    vec,
)
from tvlds.errors import (
    DimensionError,
    DomainError,
    InsufficientDataError,
    NearSingularSigmaError,
    SingularDesignError,
    ValidationError,
)
from tvlds.model import SystemParams, lyapunov_solve
from tvlds.simulate import Trajectory, simulate_trajectory

SQ2 = math.sqrt(2.0)


def _sym(rng, d):
    B = rng.standard_normal((d, d))
    return B + B.T


# -- svec -------------------------------------------------------------------

def test_svec_small_example():
    v = svec([[1.0, 2.0], [2.0, 3.0]])
    np.testing.assert_allclose(v, [1.0, 2 * SQ2, 3.0], rtol=1e-15)
    assert v @ v == pytest.approx(18.0, rel=1e-15)


def test_svec_identity():
    assert np.array_equal(svec(np.eye(3)), [1.0, 0, 0, 1.0, 0, 1.0])


def test_svec_inner_product_is_trace():
    rng = np.random.default_rng(4)
    M1, M2 = _sym(rng, 4), _sym(rng, 4)
    assert svec(M1) @ svec(M2) == pytest.approx(np.trace(M1 @ M2), abs=1e-12)


def test_svec_rejects_asymmetric():
    with pytest.raises(ValidationError):
        svec([[1.0, 2.0], [2.1, 1.0]])


def test_svec_inv_examples():
    np.testing.assert_allclose(svec_inv([1.0, 2 * SQ2, 3.0]), [[1, 2], [2, 3]], rtol=1e-15)
    assert np.array_equal(svec_inv(np.zeros(6)), np.zeros((3, 3)))


def test_svec_inv_rejects_non_triangular():
    with pytest.raises(DimensionError):
        svec_inv(np.zeros(4))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 7))
def test_svec_isometry_and_round_trip(seed, d):
    M = _sym(np.random.default_rng(seed), d)
    v = svec(M)
    assert abs(v @ v - np.sum(M * M)) <= 1e-12 * max(1.0, np.sum(M * M))
    assert np.max(np.abs(svec_inv(v) - M)) <= 1e-15 * max(1.0, np.max(np.abs(M)))
    np.testing.assert_allclose(v, svec_entrywise(M), rtol=0, atol=1e-15 * max(1.0, np.abs(M).max()))


def test_vec_is_column_major():
    B = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(vec(B), [1.0, 3.0, 2.0, 4.0])
    assert np.array_equal(unvec(vec(B), 2), B)


# -- design matrices ----------------------------------------------------------

def test_sym_design_scalar():
    F, z = build_sym_design(Trajectory(xs=[[2.0]], ys=[3.0]), sigma_eps_known=1.0)
    assert F.tolist() == [[4.0]] and z.tolist() == [8.0]


def test_sym_design_zero_feature():
    F, z = build_sym_design(Trajectory(xs=[[0.0, 0.0]], ys=[3.0]), sigma_eps_known=0.5)
    assert not np.any(F) and z[0] == 9.0 - 0.25


def test_sym_design_intercept_mode_keeps_raw_squares():
    _, z = build_sym_design(Trajectory(xs=[[1.0]], ys=[3.0]))
    assert z[0] == 9.0


def test_sym_design_entrywise(iso2):
    tr = simulate_trajectory(iso2, 5, seed=2)
    F, _ = build_sym_design(tr, 0.5)
    for t in range(5):
        np.testing.assert_allclose(F[t], svec_entrywise(np.outer(tr.xs[t], tr.xs[t])), rtol=1e-15)


def test_cross_design_scalar():
    F, z = build_cross_design(Trajectory(xs=[[2.0], [3.0]], ys=[1.0, 4.0]))
    assert F.tolist() == [[6.0]] and z.tolist() == [4.0]


def test_cross_design_zero_row():
    F, _ = build_cross_design(Trajectory(xs=[[2.0, 1.0], [0.0, 0.0]], ys=[1.0, 4.0]))
    assert not np.any(F)


def test_cross_design_entrywise(iso2):
    tr = simulate_trajectory(iso2, 6, seed=8)
    F, z = build_cross_design(tr)
    assert F.shape == (5, 4)
    for t in range(5):
        outer = np.outer(tr.xs[t + 1], tr.xs[t])
        expected = [outer[i, j] for j in range(2) for i in range(2)]
        assert np.array_equal(F[t], expected)
        assert z[t] == tr.ys[t] * tr.ys[t + 1]


def test_cross_design_needs_two_steps():
    with pytest.raises(InsufficientDataError):
        build_cross_design(Trajectory(xs=[[1.0]], ys=[1.0]))


# -- least squares --------------------------------------------------------------

def test_lstsq_scalar_closed_form():
    rng = np.random.default_rng(0)
    f, z = rng.standard_normal(30), rng.standard_normal(30)
    coef, icpt, lam = least_squares_solve(f[:, None], z)
    assert coef[0] == pytest.approx((f @ z) / (f @ f), rel=1e-13)
    assert icpt is None and lam == pytest.approx(f @ f)


def test_lstsq_exact_interpolation():
    rng = np.random.default_rng(1)
    F = rng.standard_normal((40, 5))
    theta = rng.standard_normal(5)
    coef, icpt, _ = least_squares_solve(F, F @ theta + 2.5, with_intercept=True)
    np.testing.assert_allclose(coef, theta, atol=1e-10)
    assert icpt == pytest.approx(2.5, abs=1e-10)


def test_lstsq_matches_normal_equations():
    rng = np.random.default_rng(2)
    F = rng.standard_normal((200, 6))
    z = rng.standard_normal(200)
    coef, _, _ = least_squares_solve(F, z)
    ref = normal_equations(F, z)
    assert np.linalg.norm(coef - ref) <= 1e-8 * np.linalg.norm(ref)


def test_lstsq_insufficient_rows():
    with pytest.raises(InsufficientDataError):
        least_squares_solve(np.ones((2, 3)), np.ones(2))
    with pytest.raises(InsufficientDataError):
        least_squares_solve(np.ones((3, 3)), np.ones(3), with_intercept=True)


def test_lstsq_rank_deficient_is_error():
    F = np.ones((10, 2))
    with pytest.raises(SingularDesignError):
        least_squares_solve(F, np.arange(10.0))


# -- estimator -------------------------------------------------------------------

def test_estimate_needs_enough_rows():
    tr = Trajectory(xs=np.ones((5, 3)), ys=np.ones(5))
    with pytest.raises(InsufficientDataError):
        estimate_cm(tr, 0.5)


@pytest.mark.parametrize("seed", range(5))
def test_scalar_closed_form(seed):
    p = SystemParams([[0.7]], [[0.4]], 0.3)
    tr = simulate_trajectory(p, 400, seed)
    x, y = tr.xs[:, 0], tr.ys
    s = np.sum(x**2 * (y**2 - 0.09)) / np.sum(x**4)
    xx = x[:-1] * x[1:]
    m = np.sum(xx * y[:-1] * y[1:]) / np.sum(xx**2)
    est = estimate_cm(tr, 0.3)
    assert est.sigma_hat[0, 0] == pytest.approx(s, rel=1e-10)
    assert est.m_hat[0, 0] == pytest.approx(m, rel=1e-10)
    assert est.a_hat[0, 0] == pytest.approx(m / s, rel=1e-10)


def test_estimate_structure(iso2):
    tr = simulate_trajectory(iso2, 3000, seed=4)
    est = estimate_cm(tr, 0.5)
    assert np.array_equal(est.sigma_hat, est.sigma_hat.T)
    assert np.linalg.norm(est.a_hat @ est.sigma_hat - est.m_hat) <= 1e-9 * np.linalg.norm(est.m_hat)
    assert est.sigma_eps_sq_hat is None
    dg = est.diag
    assert dg.lambda_min_sym > 0 and dg.lambda_min_cross > 0
    assert dg.condition_sigma_hat >= 1
    doc = est.to_dict()
    assert set(doc) == {"sigma_hat", "m_hat", "a_hat", "sigma_eps_sq_hat", "diagnostics"}


def test_near_singular_sigma_hat_is_reported():
    # beta_t = 0: Sigma_hat is pure noise around 0 and typically indefinite
    p = SystemParams(np.zeros((2, 2)), np.zeros((2, 2)), 1.0)
    failures = 0
    for seed in range(10):
        tr = simulate_trajectory(p, 200, seed)
        try:
            estimate_cm(tr, 1.0)
        except NearSingularSigmaError as exc:
            failures += 1
            assert exc.lambda_min < 1e-9
    assert failures > 0


def test_clip_mode_returns_finite_estimate():
    p = SystemParams(np.zeros((2, 2)), np.zeros((2, 2)), 1.0)
    for seed in range(5):
        est = estimate_cm(simulate_trajectory(p, 200, seed), 1.0, clip_eigenvalues=True)
        assert np.all(np.isfinite(est.a_hat))


@pytest.mark.slow
def test_consistency_iso(iso2):
    errs_s, errs_a = [], []
    for seed in range(16):
        est = estimate_cm(simulate_trajectory(iso2, 100_000, seed), 0.5)
        errs_s.append(np.linalg.norm(est.sigma_hat - np.eye(2)))
        errs_a.append(np.linalg.norm(est.a_hat - 0.5 * np.eye(2)))
    assert np.median(errs_s) <= 0.15
    assert np.median(errs_a) <= 0.2


@pytest.mark.slow
def test_intercept_mode_recovers_noise_variance(iso2):
    vals = [estimate_cm(simulate_trajectory(iso2, 100_000, s)).sigma_eps_sq_hat for s in range(16)]
    assert abs(np.median(vals) - 0.25) <= 0.1


def test_residual_mean_near_zero(iso2):
    tr = simulate_trajectory(iso2, 20_000, seed=1)
    est = estimate_cm(tr, 0.5)
    F, z = build_sym_design(tr, 0.5)
    r = z - F @ svec(est.sigma_hat)
    assert abs(r.mean()) <= 5 * r.std() / math.sqrt(tr.T)
    assert est.diag.residual_mean_sym == pytest.approx(r.mean(), abs=1e-9)


@pytest.mark.parametrize("d", [2, 3])
def test_orthogonal_equivariance(d):
    rng = np.random.default_rng(d)
    A = 0.6 * ortho_group.rvs(d, random_state=1) @ np.diag(np.linspace(0.5, 1.0, d))
    p = SystemParams(A, 0.5 * np.eye(d), 0.4)
    tr = simulate_trajectory(p, 4000, seed=5)
    Q = ortho_group.rvs(d, random_state=rng.integers(1 << 31))
    rot = Trajectory(xs=tr.xs @ Q.T, ys=tr.ys)
    e0, e1 = estimate_cm(tr, 0.4), estimate_cm(rot, 0.4)
    for a, b in ((e0.sigma_hat, e1.sigma_hat), (e0.m_hat, e1.m_hat), (e0.a_hat, e1.a_hat)):
        assert np.max(np.abs(Q @ a @ Q.T - b)) <= 1e-8


def test_sym_design_gram_limit(iso2):
    # population second moment of svec(x x^T) for d=2, via Isserlis
    target = np.array([[3.0, 0.0, 1.0], [0.0, 2.0, 0.0], [1.0, 0.0, 3.0]])
    assert np.linalg.eigvalsh(target)[0] == pytest.approx(2.0)
    G = np.zeros((3, 3))
    for seed in range(20):
        F, _ = build_sym_design(simulate_trajectory(iso2, 20_000, seed))
        G += F.T @ F
    G /= 20 * 20_000
    assert np.linalg.norm(G - target) <= 0.05
    assert np.linalg.eigvalsh(G)[0] >= 1.9


def test_cross_design_gram_limit(iso2):
    F, _ = build_cross_design(simulate_trajectory(iso2, 20_000, seed=1))
    assert np.linalg.norm(F.T @ F / len(F) - np.eye(4)) <= 0.1


# -- residual autocorrelation -------------------------------------------------------

def test_autocorrelation_white_noise():
    p = SystemParams(np.zeros((2, 2)), np.eye(2), 0.5)
    tr = simulate_trajectory(p, 20_000, seed=3)
    est = estimate_cm(tr, 0.5)
    r = residual_autocorrelation(tr, est, 0.5, 5)
    assert r[0] == pytest.approx(1.0, abs=1e-15)
    assert abs(r[1]) <= 3 / math.sqrt(tr.T)


def test_autocorrelation_decays_for_persistent_states():
    p = SystemParams([[0.9]], [[0.19]], 0.1)
    tr = simulate_trajectory(p, 100_000, seed=2)
    est = estimate_cm(tr, 0.1)
    r = residual_autocorrelation(tr, est, 0.1, 8)
    lags = np.arange(1, 9)
    slope = np.polyfit(lags, np.log(np.abs(r[1:])), 1)[0]
    assert slope < 0


def test_autocorrelation_lag_domain(iso2):
    tr = simulate_trajectory(iso2, 50, seed=0)
    est = estimate_cm(tr, 0.5)
    with pytest.raises(DomainError):
        residual_autocorrelation(tr, est, 0.5, 50)
