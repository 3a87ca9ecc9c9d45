import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import best_labeling_cost

from lsmid.assign import cost
from lsmid.estimator import (
    EstimatorConfig,
    distinct_column_sets,
    estimate,
    lad_regression,
    lsm_alternating,
    lsm_bruteforce,
    match_columns,
    matched_error,
)
from lsmid.model import BudgetExceededError, Dataset, NoiseSpec, simulate, switching_generator


def const_data(y):
    y = np.asarray(y, dtype=float)
    return Dataset(np.ones((1, y.size)), y)


def test_lad_median():
    r = lad_regression(np.ones((1, 3)), [1.0, 2.0, 9.0])
    assert r.a[0] == pytest.approx(2.0) and r.objective == pytest.approx(8.0)


def test_lad_breakdown_example():
    for method in ("enumerate", "lp"):
        r = lad_regression(np.ones((1, 4)), [0.0, 0.0, 0.0, 100.0], method=method)
        assert r.a[0] == pytest.approx(0.0, abs=1e-12)
        assert r.objective == pytest.approx(100.0)
        assert not r.degenerate


def test_lad_flags_non_unique_minimizer():
    for method in ("enumerate", "lp"):
        assert lad_regression(np.ones((1, 4)), [0.0, 1.0, 2.0, 100.0], method=method).degenerate


@given(st.integers(0, 10**6))
@settings(max_examples=30, deadline=None)
def test_lad_exact_fit_and_methods_agree(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((2, 9))
    a0 = rng.standard_normal(2)
    r = lad_regression(X, X.T @ a0)
    assert r.objective <= 1e-10
    np.testing.assert_allclose(r.a, a0, atol=1e-8)
    y = rng.standard_normal(9)
    e, l = lad_regression(X, y, method="enumerate"), lad_regression(X, y, method="lp")
    assert e.objective == pytest.approx(l.objective, abs=1e-9)


def test_lad_rank_deficient_subset():
    X = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]])
    r = lad_regression(X, [1.0, 2.0, 3.5])
    assert r.objective == pytest.approx(np.abs(X.T @ r.a - [1.0, 2.0, 3.5]).sum())
    assert r.objective == pytest.approx(0.5, abs=1e-9)


def test_alternating_two_constant_modes():
    d = const_data([0, 0, 10, 10])
    res = lsm_alternating(d, 2, EstimatorConfig(restarts=5))
    assert res.cost <= 1e-12
    assert sorted(res.A_hat[0]) == pytest.approx([0.0, 10.0])
    assert res.solver_status == "converged"


def test_single_mode_is_lad():
    rng = np.random.default_rng(4)
    d = Dataset(rng.standard_normal((2, 15)), rng.standard_normal(15))
    res = lsm_alternating(d, 1)
    lad = lad_regression(d.X, d.y)
    np.testing.assert_allclose(res.A_hat[:, 0], lad.a)
    assert res.cost == pytest.approx(lad.objective)
    bf = lsm_bruteforce(d, 1)
    assert bf.cost == pytest.approx(lad.objective)


def test_noiseless_generic_recovery():
    rng = np.random.default_rng(11)
    A = rng.standard_normal((2, 2))
    d = simulate(A, switching_generator("iid_uniform", 60, 2, seed=3), rng.standard_normal((2, 60)))
    res = lsm_alternating(d, 2, EstimatorConfig(restarts=10, seed=1))
    assert res.cost <= 1e-8
    assert matched_error(A, res.A_hat) <= 1e-6


def test_bruteforce_constant_example():
    res = lsm_bruteforce(const_data([0, 0, 10, 10]), 2)
    assert res.cost == 0
    assert res.assignment.sigma.tolist() in ([0, 0, 1, 1], [1, 1, 0, 0])
    assert res.solver_status == "oracle_exact"


@given(st.integers(0, 10**6))
@settings(max_examples=10, deadline=None)
def test_bruteforce_matches_lp_oracle_and_dominates(seed):
    rng = np.random.default_rng(seed)
    N = 6
    X = rng.standard_normal((2, N))
    y = rng.standard_normal(N)
    d = Dataset(X, y)
    bf = lsm_bruteforce(d, 2)
    assert bf.cost == pytest.approx(best_labeling_cost(X, y, 2), abs=1e-8)
    heur = lsm_alternating(d, 2, EstimatorConfig(restarts=3, seed=seed))
    assert bf.cost <= heur.cost + 1e-9


def test_bruteforce_budget():
    with pytest.raises(BudgetExceededError, match="budget"):
        lsm_bruteforce(const_data(np.arange(12.0)), 2, budget=100)


def test_estimate_modes():
    d = const_data([0.0, 0.1, 5.0, 5.2, 9.0, 0.05])
    both = estimate(d, 2, EstimatorConfig(mode="both", restarts=4))
    assert set(both) == {"heuristic", "oracle"}
    assert both["oracle"].cost <= both["heuristic"].cost + 1e-9
    assert set(estimate(d, 2, EstimatorConfig(mode="exact_bruteforce"))) == {"oracle"}


def test_thread_count_does_not_change_result():
    rng = np.random.default_rng(8)
    d = simulate(rng.standard_normal((2, 3)), rng.integers(0, 3, 40), rng.standard_normal((2, 40)),
                 noise=NoiseSpec(dense="gaussian", dense_scale=0.05, seed=2))
    a = lsm_alternating(d, 3, EstimatorConfig(restarts=6, seed=5, n_jobs=1))
    b = lsm_alternating(d, 3, EstimatorConfig(restarts=6, seed=5, n_jobs=4))
    assert a.A_hat.tobytes() == b.A_hat.tobytes()
    assert a.trajectory == b.trajectory


def test_trajectory_is_monotone_and_result_consistent():
    rng = np.random.default_rng(9)
    d = simulate(rng.standard_normal((2, 2)), rng.integers(0, 2, 30), rng.standard_normal((2, 30)),
                 noise=NoiseSpec(dense="uniform", dense_scale=0.2, sparse_count=2, seed=1))
    res = lsm_alternating(d, 2, EstimatorConfig(restarts=4))
    for traj in res.restart_trajectories:
        assert all(b <= a + 1e-9 * (1 + a) for a, b in zip(traj, traj[1:]))
    assert res.cost == pytest.approx(cost(d, res.A_hat))
    out = res.to_dict()
    assert out["solver_status"] in ("converged", "iter_limit")


def test_iter_limit_reported():
    rng = np.random.default_rng(2)
    d = Dataset(rng.standard_normal((2, 40)), rng.standard_normal(40))
    res = lsm_alternating(d, 3, EstimatorConfig(restarts=1, max_iters=1))
    assert res.solver_status in ("iter_limit", "converged")
    assert len(res.trajectory) <= 2


def test_empty_mode_is_reseeded():
    # three identical samples cannot populate three modes without reseeding
    d = const_data([1.0, 1.0, 1.0, 5.0, 9.0])
    res = lsm_alternating(d, 3, EstimatorConfig(restarts=3))
    assert res.cost <= 1e-12


def test_config_validation():
    with pytest.raises(ValueError):
        EstimatorConfig(restarts=0)
    with pytest.raises(ValueError):
        EstimatorConfig(mode="fast")
    with pytest.raises(ValueError):
        EstimatorConfig(empty_mode_policy="drop")


def test_matching_helpers():
    A = np.array([[0.0, 1.0], [2.0, 3.0]])
    B = A[:, ::-1] + 1e-3
    np.testing.assert_array_equal(match_columns(A, B), [1, 0])
    assert matched_error(A, B) == pytest.approx(2 * np.sqrt(2) * 1e-3)
    assert len(distinct_column_sets([A, A[:, ::-1], A + 1.0])) == 2
