import numpy as np
import pytest

from ccgprice.oracle import tau_solve
from ccgprice.solver import (
    ConvergenceError,
    SolverParams,
    hyperplane_from,
    initial_point,
    line_search,
    natural_residual,
    solve,
)
from ccgprice.vi import eval_operator_Z

from conftest import make_problem, random_problem


def test_params_validation():
    for bad in (dict(step_mu=0), dict(armijo_sigma=1.0), dict(armijo_gamma=0.0), dict(tol=0), dict(max_iter=0)):
        with pytest.raises(ValueError):
            SolverParams(**bad)


def test_default_step_is_inverse_max_alpha():
    prob = make_problem([5.0, 6.0], [1.5, 2.5])
    assert SolverParams().mu_for(prob) == pytest.approx(0.4)
    assert SolverParams(step_mu=0.7).mu_for(prob) == 0.7


def test_natural_residual_zero_at_solution(two_user):
    r, norm = natural_residual([29.0, 13.0], two_user, 1.0)
    assert norm <= 1e-9
    np.testing.assert_allclose(r, [29.0, 13.0], atol=1e-9)


def test_natural_residual_single_user_budget_cap():
    # p - Z(p) = 35 but the budget caps the price at C / e = 20
    prob = make_problem([10.0], 1.0, budget=200.0)
    r, norm = natural_residual([20.0], prob, 1.0)
    assert r[0] == pytest.approx(20.0)
    assert norm == pytest.approx(0.0, abs=1e-12)


def test_natural_residual_stationary_interior_point():
    prob = make_problem([10.0, 5.0], [1.0, 2.0])
    p = np.array([35.0, 20.0])  # Z(p) = 0
    assert not np.any(eval_operator_Z(p, prob))
    r, norm = natural_residual(p, prob, 0.5)
    np.testing.assert_array_equal(r, p)
    assert norm == 0.0


def test_natural_residual_positive_away_from_solution(two_user):
    _, norm = natural_residual([0.0, 0.0], two_user, 1.0)
    assert norm > 1.0


def test_line_search_accepts_full_step():
    # r = (40, 30); <Z(r), p - r> = 650 >= 0.3 * 1300
    prob = make_problem([10.0, 20.0], 0.5, budget=1e6)
    params = SolverParams(step_mu=1.0)
    p = np.array([10.0, 10.0])
    r, _ = natural_residual(p, prob, 1.0)
    np.testing.assert_allclose(r, [40.0, 30.0])
    z, m = line_search(p, r, prob, params)
    assert m == 0
    np.testing.assert_allclose(z, r)


def test_line_search_scalar_case_backtracks_once():
    # Z(z) = z - 35 on [p, r] = [0, 35]: accept iff 1 - theta >= 0.3, so theta = 0.5
    prob = make_problem([10.0], 1.0, budget=1000.0)
    params = SolverParams(step_mu=1.0)
    z, m = line_search([0.0], [35.0], prob, params)
    assert m == 1
    assert z[0] == pytest.approx(17.5)


def test_line_search_rejects_zero_step(two_user):
    with pytest.raises(ValueError):
        line_search([29.0, 13.0], [29.0, 13.0], two_user, SolverParams())


def test_hyperplane_offset_and_zero_operator():
    prob = make_problem([10.0], 1.0)
    hs = hyperplane_from([20.0], prob)
    assert hs.normal[0] == pytest.approx(-15.0)
    assert hs.offset == pytest.approx(-300.0)
    # the boundary passes through z
    assert hs.normal @ np.array([20.0]) == pytest.approx(hs.offset)
    with pytest.raises(ValueError):
        hyperplane_from([35.0], prob)


def test_hyperplanes_separate_iterate_from_solution():
    rng = np.random.default_rng(11)
    for _ in range(20):
        prob = random_problem(rng, n=int(rng.integers(2, 12)))
        p_star = tau_solve(prob).prices
        _, trace = solve(prob)
        for t, (hs, z) in enumerate(zip(trace.halfspaces, trace.search_points)):
            # measured from z: the offset form loses the O(residual**2) depth to rounding
            scale = np.linalg.norm(hs.normal) * max(1.0, np.linalg.norm(p_star))
            assert hs.normal @ (p_star - z) <= 1e-9 * scale
            gap = hs.normal @ (trace.iterates[t] - z)
            if trace.residuals[t] > 1e-5:
                assert gap > 0
            else:
                assert gap > -1e-12 * scale


def test_solve_binding_fixture(two_user):
    alloc, trace = solve(two_user)
    np.testing.assert_allclose(alloc.prices, [29.0, 13.0], atol=1e-7)
    assert alloc.tau == pytest.approx(0.6, abs=1e-6)
    assert alloc.complete
    np.testing.assert_allclose(alloc.payments, [290.0, 260.0], atol=1e-6)
    assert trace.converged and trace.residuals[-1] <= 1e-8


def test_solve_slack_fixture():
    prob = make_problem([10.0, 20.0], 1.0, budget=900.0)
    alloc, _ = solve(prob)
    np.testing.assert_allclose(alloc.prices, [35.0, 25.0], atol=1e-7)
    assert alloc.total_payment == pytest.approx(850.0)
    assert not alloc.complete
    assert alloc.tau == pytest.approx(0.0, abs=1e-8)


def test_initial_point_is_feasible():
    prob = make_problem([10.0, 20.0, 5.0], [1.0, 2.0, 3.0], budget=300.0)
    p0 = initial_point(prob)
    assert prob.e @ p0 <= 300.0 + 1e-9
    assert np.all(p0 >= 0) and np.all(p0 <= 45.0)


def test_iterates_approach_solution_monotonically():
    rng = np.random.default_rng(3)
    for _ in range(25):
        prob = random_problem(rng)
        p_star = tau_solve(prob).prices
        _, trace = solve(prob)
        dist = [np.linalg.norm(p - p_star) for p in trace.iterates]
        assert all(b <= a + 1e-9 for a, b in zip(dist, dist[1:]))


def test_solver_matches_oracle_on_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(40):
        prob = random_problem(rng)
        alloc, trace = solve(prob)
        ref = tau_solve(prob)
        scale = max(1.0, float(np.max(np.abs(ref.prices))))
        assert np.max(np.abs(alloc.prices - ref.prices)) <= 1e-6 * scale
        assert trace.residuals[-1] <= 1e-8


def test_complete_flag_tracks_multiplier():
    rng = np.random.default_rng(5)
    for binding in (True, False) * 10:
        prob = random_problem(rng, binding=binding)
        alloc, _ = solve(prob)
        assert alloc.complete is binding
        if binding:
            assert alloc.tau > 1e-6
        else:
            assert alloc.tau <= 1e-8


def test_positive_multiplier_keeps_prices_below_free_optimum():
    rng = np.random.default_rng(8)
    for _ in range(20):
        prob = random_problem(rng, binding=True)
        alloc, _ = solve(prob)
        p = alloc.prices
        interior = (p > 1e-9) & (p < prob.upper_bounds - 1e-9)
        assert np.all(p[interior] < ((prob.cap - prob.e) / prob.alpha)[interior])


def test_solve_is_deterministic():
    prob = random_problem(np.random.default_rng(42), n=15)
    a1, t1 = solve(prob)
    a2, t2 = solve(prob)
    np.testing.assert_array_equal(a1.prices, a2.prices)
    assert t1.residuals == t2.residuals
    for x, y in zip(t1.iterates, t2.iterates):
        np.testing.assert_array_equal(x, y)


def test_warm_start_at_solution_stops_immediately(two_user):
    alloc, trace = solve(two_user, p0=[29.0, 13.0])
    assert trace.iterations == 0
    np.testing.assert_allclose(alloc.prices, [29.0, 13.0])


def test_iteration_limit_raises_with_partial_result():
    prob = random_problem(np.random.default_rng(1), n=20, binding=True)
    with pytest.raises(ConvergenceError) as info:
        solve(prob, SolverParams(max_iter=2))
    err = info.value
    assert not err.trace.converged
    assert len(err.trace.residuals) == 3
    assert err.allocation.prices.shape == (20,)


def test_residuals_are_nonnegative_and_final_below_tol():
    prob = random_problem(np.random.default_rng(9), n=10)
    _, trace = solve(prob, SolverParams(tol=1e-6))
    assert min(trace.residuals) >= 0
    assert trace.residuals[-1] <= 1e-6
    assert len(trace.linesearch_steps) == trace.iterations
