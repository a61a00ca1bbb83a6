import numpy as np
import pytest

from ccgprice.market import EnergyUser, MarketConfig
from ccgprice.vi import VIProblem


def make_problem(e, alpha, cap=45.0, budget=1000.0, **bounds):
    e = np.atleast_1d(np.asarray(e, dtype=float))
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), e.shape)
    cap = np.broadcast_to(np.asarray(cap, dtype=float), e.shape)
    eus = [EnergyUser(n, float(a), float(b), float(c)) for n, (a, b, c) in enumerate(zip(e, alpha, cap))]
    return VIProblem(eus, MarketConfig(budget), **bounds)


def random_problem(rng, n=None, binding=None):
    """Random instance in the default parameter ranges.

    The budget is a random fraction of the unconstrained spend, so both
    binding and slack budgets occur unless ``binding`` forces one.
    """
    n = int(rng.integers(1, 41)) if n is None else n
    e = rng.uniform(3.6, 12.25, n)
    alpha = rng.uniform(1.0, 3.0, n)
    free_spend = float(np.sum(e * (45.0 - e) / alpha))
    if binding is None:
        frac = rng.uniform(0.2, 1.3)
    elif binding:
        frac = rng.uniform(0.2, 0.95)
    else:
        frac = rng.uniform(1.05, 1.5)
    return make_problem(e, alpha, budget=frac * free_spend)


@pytest.fixture
def two_user():
    # e=(10, 20), alpha=1, P=45, C=550: optimum (29, 13) with tau=0.6
    return make_problem([10.0, 20.0], 1.0, budget=550.0)
