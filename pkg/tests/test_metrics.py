import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import gamma_grid, nu_bruteforce, xi_lp_enumeration, xi_one_lifted_lp

from lsmid.analysis import estimate_D
from lsmid.metrics import (
    MetricsReport,
    NotFullRankError,
    compute_metrics,
    d_hat,
    extreme_rays,
    gamma_m,
    genericity_index,
    isotonic_clamp,
    lambda_l1,
    r_star,
    xi_one_cutting_plane,
    xi_single_mode_curve,
    xi_single_mode_exact,
    xi_single_mode_upper,
    xi_switched_lower,
    xi_switched_lower_curve,
)
from lsmid.model import BudgetExceededError, Dataset, NoiseSpec, simulate


def test_genericity_examples():
    assert genericity_index(np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])) == 2
    nu, wit = genericity_index(np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]), return_witness=True)
    assert nu == 3
    assert sorted(wit.tolist()) == [0, 2]
    X = np.random.default_rng(0).standard_normal((2, 8))
    assert genericity_index(X) == 2


@given(st.integers(0, 10**6))
@settings(max_examples=25, deadline=None)
def test_genericity_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    N = int(rng.integers(n + 1, 9))
    X = rng.standard_normal((n, N))
    # plant structure: repeated or parallel columns and a low-dimensional block
    for _ in range(int(rng.integers(0, 3))):
        i, j = rng.integers(0, N, 2)
        X[:, j] = rng.choice([1.0, -2.0]) * X[:, i]
    if np.linalg.matrix_rank(X) < n:
        return
    assert genericity_index(X) == nu_bruteforce(X)


def test_genericity_errors():
    with pytest.raises(NotFullRankError):
        genericity_index(np.ones((2, 4)))
    with pytest.raises(BudgetExceededError, match="combinatorial budget"):
        genericity_index(np.random.default_rng(0).standard_normal((3, 30)), budget=100)


def test_xi_constant_regressor_is_r_over_n():
    for N in range(2, 8):
        X = np.full((1, N), 2.5)
        ex = xi_single_mode_exact(X)
        np.testing.assert_allclose(ex, np.arange(N + 1) / N, atol=1e-12)
        for r in range(N + 1):
            assert xi_single_mode_upper(X, r) == pytest.approx(r / N, abs=1e-9)


def test_xi_identity_and_zero():
    X = np.eye(2)
    assert xi_single_mode_upper(X, 1) == pytest.approx(1.0)
    assert xi_single_mode_upper(X, 0) == 0.0
    assert xi_single_mode_exact(X)[1] == pytest.approx(1.0)


@given(st.integers(0, 10**6), st.integers(2, 3), st.integers(4, 14))
@settings(max_examples=15, deadline=None)
def test_cutting_plane_matches_lifted_lp(seed, n, N):
    X = np.random.default_rng(seed).standard_normal((n, N))
    cp = xi_one_cutting_plane(X)
    ref = xi_one_lifted_lp(X)
    assert cp.value >= ref - 1e-9
    assert cp.value == pytest.approx(ref, abs=1e-6)
    assert cp.lower_curve[1] <= ref + 1e-9


@given(st.integers(0, 10**6), st.integers(2, 3))
@settings(max_examples=8, deadline=None)
def test_exact_xi_matches_lp_enumeration(seed, n):
    X = np.random.default_rng(seed).standard_normal((n, 6))
    ex = xi_single_mode_exact(X)
    for r in range(0, 4):
        assert ex[r] == pytest.approx(xi_lp_enumeration(X, r), abs=1e-7)


@given(st.integers(0, 10**6))
@settings(max_examples=15, deadline=None)
def test_curve_brackets_are_ordered(seed):
    X = np.random.default_rng(seed).standard_normal((2, 10))
    c = xi_single_mode_curve(X)
    assert np.all(c.lower <= c.upper + 1e-12)
    assert np.all(np.diff(c.upper) >= -1e-12) and np.all(np.diff(c.lower) >= -1e-12)
    assert c.upper[0] == 0 and c.upper[-1] == 1
    assert np.all(c.exact <= c.upper + 1e-9) and np.all(c.exact >= c.lower - 1e-9)
    no_exact = xi_single_mode_curve(X, exact=False)
    assert np.all(no_exact.upper >= c.exact - 1e-9)


def test_isotonic_clamp():
    np.testing.assert_array_equal(isotonic_clamp([0, 0.3, 0.2, 0.5], "lower"), [0, 0.3, 0.3, 0.5])
    np.testing.assert_array_equal(isotonic_clamp([0, 0.3, 0.2, 0.5], "upper"), [0, 0.2, 0.2, 0.5])
    with pytest.raises(ValueError):
        isotonic_clamp([0.0], "middle")


def test_r_star_examples():
    N = 3
    c = np.arange(N + 1) / N
    assert r_star(c, c) == (1, 1)
    assert r_star(np.zeros(4), np.zeros(4))[0] >= 0
    assert r_star(np.r_[0.0, np.ones(4)], np.r_[0.0, np.ones(4)]) == (0, 0)


def _switched_data(seed, N=16, s=2, noise=0.1):
    rng = np.random.default_rng(seed)
    return simulate(rng.standard_normal((2, s)), rng.integers(0, s, N), rng.standard_normal((2, N)),
                    noise=NoiseSpec(dense="gaussian", dense_scale=noise, seed=seed))


def test_switched_lower_endpoints():
    d = _switched_data(1)
    curve = xi_switched_lower_curve(d, 2, samples=30, seed=0)
    assert curve[0] == 0.0 and curve[-1] == 1.0
    assert xi_switched_lower(d, 2, d.N, samples=10) == 1.0
    assert xi_switched_lower(d, 2, 0, samples=10) == 0.0


@given(st.integers(0, 10**6))
@settings(max_examples=10, deadline=None)
def test_single_mode_estimate_never_exceeds_certified_upper(seed):
    d = _switched_data(seed, N=12, s=1)
    est = xi_switched_lower_curve(d, 1, samples=50, seed=seed)
    up = xi_single_mode_curve(d.X, exact=False).upper
    assert np.all(est <= up + 1e-9)


def test_switched_lower_with_no_valid_pairs():
    # zero regressors give every parameter matrix the same residual vector
    d = Dataset(np.zeros((1, 3)), np.ones(3))
    with pytest.raises(ValueError, match="no valid pairs"):
        xi_switched_lower_curve(d, 2, samples=5)


def test_gamma_identity():
    g = gamma_m(np.eye(2), 2)
    assert g.lower_certified == pytest.approx(1.0)
    assert g.upper_estimate == pytest.approx(1.0, abs=1e-6)


def test_gamma_full_subset_lower_is_lambda_min():
    X = np.random.default_rng(3).standard_normal((2, 5))
    g = gamma_m(X, 5)
    assert g.lower_certified == pytest.approx(np.sqrt(np.linalg.eigvalsh(X @ X.T)[0]))


@given(st.integers(0, 10**6))
@settings(max_examples=25, deadline=None)
def test_gamma_bracket_and_grid_oracle(seed):
    X = np.random.default_rng(seed).standard_normal((2, 6))
    for m in (2, 3):
        g = gamma_m(X, m, restarts=5, seed=seed)
        assert g.lower_certified <= g.upper_estimate + 1e-12
        assert d_hat(X, m) <= g.upper_estimate + 1e-12
        ref = gamma_grid(X, m)
        assert g.exact <= ref + 1e-12
        assert g.exact == pytest.approx(ref, abs=1e-3 * (1 + ref))
        assert g.upper_estimate >= g.exact - 1e-12


def test_d_hat_examples():
    assert d_hat(np.eye(2), 2) == pytest.approx(1.0)
    X = np.array([[1.0, 0.0, 1.0], [0.5, 1.0, 0.5]])
    assert d_hat(X, 2) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        d_hat(X, 4)


def test_lambda_identity_and_scaling():
    lam = lambda_l1(np.eye(2))
    assert lam.lower_certified == pytest.approx(1 / np.sqrt(2))
    assert lam.upper_estimate == pytest.approx(1.0, abs=1e-6)
    X = np.random.default_rng(5).standard_normal((2, 7))
    a, b = lambda_l1(X, seed=1), lambda_l1(3.0 * X, seed=1)
    assert b.lower_certified == pytest.approx(3 * a.lower_certified)
    assert b.upper_estimate == pytest.approx(3 * a.upper_estimate, rel=1e-6)
    assert a.lower_certified <= a.upper_estimate


def test_extreme_rays_are_unit_and_orthogonal():
    X = np.random.default_rng(2).standard_normal((3, 6))
    R = extreme_rays(X)
    np.testing.assert_allclose(np.linalg.norm(R, axis=1), 1.0)
    zeros = np.sum(np.abs(R @ X) < 1e-10, axis=1)
    assert np.all(zeros >= 2)


def test_compute_metrics_constant_regressor():
    d = Dataset(np.ones((1, 3)), np.array([0.0, 1.0, 5.0]))
    rep = compute_metrics(d, 1)
    assert rep.r_star_lower == 1
    assert rep.nu_n == 1
    assert rep.xi_for(1) == (pytest.approx(1 / 3), "certified_upper")
    again = MetricsReport.from_dict(rep.to_dict())
    assert again.r_star_lower == 1 and again.s == 1
    np.testing.assert_allclose(again.xi_upper, rep.xi_upper)


def test_compute_metrics_switched_report():
    d = _switched_data(4, N=14)
    rep = compute_metrics(d, 2, xi_samples=30, restarts=3)
    out = rep.to_dict()
    assert out["r_star_lower"] == {"value": 0, "certified": True}
    assert out["xi_switched_lower"]["certified"] is False
    assert out["D_hat"]["certified"] is True
    assert rep.xi_for(1)[1] == "mc_lower"
    assert rep.D_hat <= rep.D_upper_estimate + 1e-12


def test_estimate_D_bracket_identity_and_scaling():
    br = estimate_D(np.eye(2), 1, 2)
    assert br.lower_certified == pytest.approx(1.0)
    assert br.upper_estimate == pytest.approx(1.0, abs=1e-6)
    X = np.random.default_rng(6).standard_normal((2, 8))
    a, b = estimate_D(X, 2, 2, seed=3), estimate_D(2.0 * X, 2, 2, seed=3)
    assert b.lower_certified == pytest.approx(2 * a.lower_certified)
    assert b.upper_estimate == pytest.approx(2 * a.upper_estimate, rel=1e-6)
    # with s * nu <= N the infimum is attained on a single column: gamma_nu
    assert a.upper_estimate == pytest.approx(gamma_m(X, 2).exact, rel=1e-6)
