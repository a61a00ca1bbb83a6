import numpy as np
import pytest

from ccgprice.market import (
    ConfigurationError,
    DimensionError,
    EnergyUser,
    MarketConfig,
    as_price_vector,
    benefit,
    has_interior_price,
    marginal_benefit,
    price_cap_bound,
    revenue,
    social_welfare,
)


def test_marginal_benefit_values():
    assert marginal_benefit(0.0, EnergyUser(0, 10, 1, 45)) == 35
    assert marginal_benefit(20.0, EnergyUser(0, 5, 2, 45)) == 0
    eu = EnergyUser(0, 7.5, 1.7, 45)
    assert marginal_benefit(price_cap_bound(eu), eu) == pytest.approx(0.0, abs=1e-12)


def test_benefit_values():
    assert benefit(20.0, EnergyUser(0, 10, 1, 45)) == 500
    assert benefit(0.0, EnergyUser(0, 3, 2, 45)) == 0
    eu = EnergyUser(0, 5, 2, 45)
    assert benefit(20.0, eu) == 400
    assert benefit(19.0, eu) == 399
    assert benefit(21.0, eu) == 399


def test_revenue_matches_two_seller_example():
    assert revenue(20, 35) == 700
    assert revenue(22, 8) == 176
    assert revenue(18, 32) == 576


def test_social_welfare():
    eus = [EnergyUser(0, 10, 1, 45), EnergyUser(1, 20, 1, 45)]
    assert social_welfare([0.0, 0.0], eus) == 0
    assert social_welfare([20.0, 15.0], eus) == 762.5
    assert social_welfare([12.0], eus[:1]) == benefit(12.0, eus[0])
    with pytest.raises(DimensionError):
        social_welfare([1.0, 2.0, 3.0], eus)


def test_price_cap_bound():
    assert price_cap_bound(EnergyUser(0, 10, 1, 45)) == 35
    assert price_cap_bound(EnergyUser(0, 45, 2, 45)) == 0
    assert price_cap_bound(EnergyUser(0, 12.25, 3, 45)) == pytest.approx(32.75 / 3)
    # surplus above the cap: no profitable price, flagged rather than raised
    eu = EnergyUser(0, 50, 1, 45)
    assert price_cap_bound(eu) == -5
    assert not has_interior_price(eu)
    assert has_interior_price(EnergyUser(0, 10, 1, 45))


def test_benefit_is_concave_with_exact_second_difference():
    rng = np.random.default_rng(1)
    for _ in range(50):
        eu = EnergyUser(0, rng.uniform(3.6, 12.25), rng.uniform(1, 3), 45)
        p, h = rng.uniform(1, 40), rng.uniform(0.1, 1)
        second = benefit(p + h, eu) - 2 * benefit(p, eu) + benefit(p - h, eu)
        assert second == pytest.approx(-eu.sensitivity_alpha * h * h, rel=1e-9, abs=1e-9)
        assert second < 0


def test_benefit_monotone_in_cap_and_sensitivity():
    p = 12.0
    assert benefit(p, EnergyUser(0, 8, 2, 46)) > benefit(p, EnergyUser(0, 8, 2, 45))
    assert benefit(p, EnergyUser(0, 8, 2.5, 45)) < benefit(p, EnergyUser(0, 8, 2, 45))


def test_benefit_decomposition_identity():
    eu = EnergyUser(0, 6.0, 1.5, 45)
    for p in (0.0, 3.0, 17.5, 44.0):
        assert benefit(p, eu) + 0.5 * eu.sensitivity_alpha * p * p + eu.surplus_e * p == pytest.approx(45 * p)


def test_benefit_argmax_on_nonnegative_prices():
    for eu in (EnergyUser(0, 10, 1, 45), EnergyUser(1, 12.25, 3, 45), EnergyUser(2, 50, 1, 45)):
        grid = np.linspace(0, 45, 45001)
        best = grid[np.argmax(benefit(grid, eu))]
        assert best == pytest.approx(max(0.0, price_cap_bound(eu)), abs=1e-3)


@pytest.mark.parametrize("field,value", [("surplus_e", 0.0), ("sensitivity_alpha", -1.0), ("price_cap_P", float("nan"))])
def test_energy_user_validation(field, value):
    kw = dict(id=0, surplus_e=5.0, sensitivity_alpha=1.0, price_cap_P=45.0)
    kw[field] = value
    with pytest.raises(ConfigurationError):
        EnergyUser(**kw)


def test_market_config_validation_and_threshold_default():
    cfg = MarketConfig()
    assert cfg.participation_threshold == cfg.grid_buy_price == 8.0
    assert MarketConfig(participation_threshold=5.0).participation_threshold == 5.0
    with pytest.raises(ConfigurationError):
        MarketConfig(budget_C=0)
    with pytest.raises(ConfigurationError):
        MarketConfig(grid_sell_price=8.0, grid_buy_price=8.0)


def test_price_vector_validation():
    assert as_price_vector([1, 2], 2).dtype == float
    with pytest.raises(DimensionError):
        as_price_vector([1, 2], 3)
    with pytest.raises(ValueError):
        as_price_vector([1, -2])
    with pytest.raises(ValueError):
        as_price_vector([1, np.inf])
