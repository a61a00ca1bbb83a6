import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from ccgprice.market import social_welfare
from ccgprice.oracle import kkt_residual, prices_at_tau, tau_solve
from ccgprice.solver import solve
from ccgprice.vi import eval_operator_Z, monotonicity_modulus, project_feasible

from conftest import make_problem

surplus = st.floats(3.6, 12.25)
sensitivity = st.floats(1.0, 3.0)


@st.composite
def problems(draw, max_n=8):
    n = draw(st.integers(1, max_n))
    e = np.array(draw(st.lists(surplus, min_size=n, max_size=n)))
    alpha = np.array(draw(st.lists(sensitivity, min_size=n, max_size=n)))
    free_spend = float(np.sum(e * (45.0 - e) / alpha))
    frac = draw(st.floats(0.1, 1.5))
    return make_problem(e, alpha, budget=frac * free_spend)


def points(n):
    return st.lists(st.floats(-20.0, 70.0), min_size=n, max_size=n).map(np.array)


@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_projection_is_feasible_and_idempotent(data):
    prob = data.draw(problems())
    v = data.draw(points(prob.n))
    p = project_feasible(v, prob)
    assert prob.e @ p <= prob.budget * (1 + 1e-12) + 1e-9
    assert np.all(p >= prob.lower_bounds) and np.all(p <= prob.upper_bounds)
    np.testing.assert_allclose(project_feasible(p, prob), p, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_projection_is_nonexpansive(data):
    prob = data.draw(problems())
    u, v = data.draw(points(prob.n)), data.draw(points(prob.n))
    pu, pv = project_feasible(u, prob), project_feasible(v, prob)
    assert np.linalg.norm(pu - pv) <= np.linalg.norm(u - v) + 1e-9


@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_projection_beats_random_feasible_points(data):
    # variational characterization: <v - P(v), q - P(v)> <= 0 for feasible q
    prob = data.draw(problems())
    v = data.draw(points(prob.n))
    p = project_feasible(v, prob)
    q = project_feasible(data.draw(points(prob.n)), prob)
    assert (v - p) @ (q - p) <= 1e-7 * (1 + np.linalg.norm(v - p) * np.linalg.norm(q - p))


@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_operator_is_strongly_monotone(data):
    prob = data.draw(problems())
    u, v = data.draw(points(prob.n)), data.draw(points(prob.n))
    gap = (eval_operator_Z(u, prob) - eval_operator_Z(v, prob)) @ (u - v)
    assert gap >= monotonicity_modulus(prob) * np.sum((u - v) ** 2) - 1e-9


@settings(max_examples=40, deadline=None)
@given(prob=problems())
def test_solver_agrees_with_oracle(prob):
    alloc, _ = solve(prob)
    ref = tau_solve(prob)
    assert np.max(np.abs(alloc.prices - ref.prices)) <= 1e-6 * max(1.0, float(np.max(ref.prices)))
    assert kkt_residual(ref.prices, ref.tau, prob) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(prob=problems(), data=st.data())
def test_optimum_beats_feasible_points(prob, data):
    p_star = tau_solve(prob).prices
    q = project_feasible(data.draw(points(prob.n)), prob)
    assert social_welfare(q, prob.eus) <= social_welfare(p_star, prob.eus) + 1e-7


@settings(max_examples=60, deadline=None)
@given(prob=problems(), t1=st.floats(0, 10), t2=st.floats(0, 10))
def test_price_map_is_monotone(prob, t1, t2):
    lo, hi = min(t1, t2), max(t1, t2)
    assert np.all(prices_at_tau(lo, prob) >= prices_at_tau(hi, prob))
