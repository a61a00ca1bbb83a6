"""Energy users, market configuration and the closed-form economics of the game.

Units are fixed throughout: energy in kWh, money in cents, prices in
cents/kWh. Benefit values are plain scalars with no monetary meaning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ConfigurationError(ValueError):
    """Invalid market, problem or scenario parameters."""


class DimensionError(ValueError):
    """Vector lengths do not match the number of energy users."""


@dataclass(frozen=True)
class EnergyUser:
    """A seller with surplus ``surplus_e`` (kWh), price sensitivity and price cap."""

    id: int
    surplus_e: float
    sensitivity_alpha: float
    price_cap_P: float

    def __post_init__(self):
        for name in ("surplus_e", "sensitivity_alpha", "price_cap_P"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise ConfigurationError(f"EnergyUser {self.id}: {name} must be > 0, got {value!r}")


@dataclass(frozen=True)
class MarketConfig:
    budget_C: float = 1000.0
    grid_sell_price: float = 44.0
    grid_buy_price: float = 8.0
    participation_threshold: float | None = None

    def __post_init__(self):
        if not self.budget_C > 0:
            raise ConfigurationError(f"budget_C must be > 0, got {self.budget_C!r}")
        if not 0 < self.grid_buy_price < self.grid_sell_price:
            raise ConfigurationError(
                "need 0 < grid_buy_price < grid_sell_price, got "
                f"{self.grid_buy_price!r} and {self.grid_sell_price!r}"
            )
        if self.participation_threshold is None:
            object.__setattr__(self, "participation_threshold", float(self.grid_buy_price))


@dataclass
class Allocation:
    """Outcome of a solve: prices, transfers, benefits and the budget multiplier."""

    prices: np.ndarray
    payments: np.ndarray
    benefits: np.ndarray
    tau: float
    complete: bool
    participants: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.participants is None:
            self.participants = np.ones(len(self.prices), dtype=bool)

    @property
    def total_payment(self) -> float:
        return float(np.sum(self.payments))


def as_price_vector(p, n: int | None = None) -> np.ndarray:
    """Validate ``p`` as a price vector: finite, nonnegative, optionally of length ``n``."""
    arr = np.asarray(p, dtype=float).reshape(-1)
    if n is not None and arr.shape[0] != n:
        raise DimensionError(f"expected {n} prices, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("prices must be finite and nonnegative")
    return arr


def marginal_benefit(p, eu: EnergyUser):
    """P - alpha*p - e: the linearly decreasing marginal benefit."""
    return eu.price_cap_P - eu.sensitivity_alpha * p - eu.surplus_e


def benefit(p, eu: EnergyUser):
    """Net benefit P*p - (alpha/2)*p**2 - e*p of selling the surplus at price ``p``."""
    return eu.price_cap_P * p - 0.5 * eu.sensitivity_alpha * p * p - eu.surplus_e * p


def revenue(p, e):
    return p * e


def price_cap_bound(eu: EnergyUser) -> float:
    """Unconstrained argmax (P - e)/alpha of the benefit.

    Negative values are returned as is; see :func:`has_interior_price`.
    """
    return (eu.price_cap_P - eu.surplus_e) / eu.sensitivity_alpha


def has_interior_price(eu: EnergyUser) -> bool:
    """False when e >= P, i.e. the EU gains nothing from any positive price."""
    return price_cap_bound(eu) > 0


def social_welfare(p, eus: Sequence[EnergyUser]) -> float:
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.shape[0] != len(eus):
        raise DimensionError(f"{p.shape[0]} prices for {len(eus)} energy users")
    return float(sum(benefit(pn, eu) for pn, eu in zip(p, eus)))


def user_arrays(eus: Sequence[EnergyUser]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack (e, alpha, P) of a list of users into float arrays."""
    e = np.array([eu.surplus_e for eu in eus], dtype=float)
    alpha = np.array([eu.sensitivity_alpha for eu in eus], dtype=float)
    cap = np.array([eu.price_cap_P for eu in eus], dtype=float)
    return e, alpha, cap


def benefits_vector(p, e, alpha, cap) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return cap * p - 0.5 * alpha * p * p - e * p
