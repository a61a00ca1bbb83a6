"""Scenarios, the buyer/seller negotiation protocol and market-level analytics.

The protocol runs the same hyperplane iteration as :func:`ccgprice.solver.solve`
but every operator value is gathered from the sellers as scalar messages.
The buyer (the facility controller) only ever sees each seller's surplus and
its scalar replies; sensitivities and price caps stay with the sellers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .market import Allocation, ConfigurationError, EnergyUser, MarketConfig
from .solver import ConvergenceError, SolverParams, estimate_tau, make_allocation, solve
from .vi import VIProblem

BUYER = "SFC"
PARTICIPATION_MODES = ("fixed_point", "one_shot", "off")
MESSAGE_KINDS = (
    "BudgetAnnounce",
    "SurplusSubmit",
    "PriceProbe",
    "LocalOperatorReply",
    "InnerProductReply",
    "ProjectedPrice",
    "Terminate",
)
SELLER_KINDS = ("SurplusSubmit", "LocalOperatorReply", "InnerProductReply")


@dataclass(frozen=True)
class GenerationParams:
    e_range: tuple[float, float] = (3.6, 12.25)
    alpha_range: tuple[float, float] = (1.0, 3.0)
    price_cap: float = 45.0

    def __post_init__(self):
        for name in ("e_range", "alpha_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi or not np.isfinite(hi):
                raise ConfigurationError(f"{name} must satisfy 0 < low <= high, got {(lo, hi)!r}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if not self.price_cap > 0:
            raise ConfigurationError(f"price_cap must be > 0, got {self.price_cap!r}")


@dataclass(frozen=True)
class Scenario:
    eus: tuple[EnergyUser, ...]
    config: MarketConfig
    seed: int | None = None
    label: str = ""
    generation: GenerationParams = field(default_factory=GenerationParams)
    participation_mode: str = "fixed_point"

    def __post_init__(self):
        object.__setattr__(self, "eus", tuple(self.eus))
        if not self.eus:
            raise ConfigurationError("a scenario needs at least one energy user")
        if self.participation_mode not in PARTICIPATION_MODES:
            raise ConfigurationError(f"unknown participation mode {self.participation_mode!r}")

    @property
    def n_eus(self) -> int:
        return len(self.eus)

    @property
    def price_ceiling(self) -> np.ndarray:
        """Per-seller upper price bound used by the buyer.

        It is a published market rule (every seller's cap in the default
        market), so the buyer can build its feasible set without being told
        any private cap.
        """
        return np.full(self.n_eus, float(max(eu.price_cap_P for eu in self.eus)))

    def problem(self) -> VIProblem:
        return VIProblem(self.eus, self.config, upper_bounds=self.price_ceiling)

    def with_budget(self, budget: float) -> "Scenario":
        return replace(self, config=replace(self.config, budget_C=float(budget)))


def generate_scenario(n_eus: int, seed: int, params: GenerationParams | None = None,
                      config: MarketConfig | None = None, label: str = "") -> Scenario:
    """Draw sellers with uniform surplus and sensitivity.

    Draws are made seller by seller (surplus, then sensitivity), so the first
    k sellers of a larger population equal a k-seller population with the
    same seed.
    """
    if int(n_eus) < 1:
        raise ConfigurationError(f"n_eus must be >= 1, got {n_eus!r}")
    params = GenerationParams() if params is None else params
    config = MarketConfig() if config is None else config
    rng = np.random.default_rng(seed)
    eus = []
    for n in range(int(n_eus)):
        e = rng.uniform(*params.e_range)
        alpha = rng.uniform(*params.alpha_range)
        eus.append(EnergyUser(n, float(e), float(alpha), params.price_cap))
    return Scenario(tuple(eus), config, seed, label or f"n{n_eus}-seed{seed}", params)


# --- scenario files -------------------------------------------------------

def scenario_to_dict(sc: Scenario) -> dict:
    g = sc.generation
    return {
        "label": sc.label,
        "seed": sc.seed,
        "n_eus": sc.n_eus,
        "e_range": list(g.e_range),
        "alpha_range": list(g.alpha_range),
        "price_cap": g.price_cap,
        "budget": sc.config.budget_C,
        "grid_sell": sc.config.grid_sell_price,
        "grid_buy": sc.config.grid_buy_price,
        "participation_threshold": sc.config.participation_threshold,
        "participation_mode": sc.participation_mode,
        "eus": [
            {"id": eu.id, "e": eu.surplus_e, "alpha": eu.sensitivity_alpha, "P": eu.price_cap_P}
            for eu in sc.eus
        ],
    }


class ScenarioFormatError(ValueError):
    """A scenario document is malformed; the message names the field."""


def _field(doc, key, kind, default=None, required=False):
    if key not in doc or doc[key] is None:
        if required:
            raise ScenarioFormatError(f"missing field '{key}'")
        return default
    value = doc[key]
    try:
        if kind == "range":
            if len(value) != 2:
                raise ValueError
            return (float(value[0]), float(value[1]))
        return kind(value)
    except (TypeError, ValueError):
        raise ScenarioFormatError(f"field '{key}': cannot read {value!r}") from None


def scenario_from_dict(doc: dict) -> Scenario:
    """Build a scenario from a parsed document.

    An explicit ``eus`` list wins; otherwise sellers are drawn from
    ``seed``, ``n_eus`` and the ranges.
    """
    if not isinstance(doc, dict):
        raise ScenarioFormatError("scenario document must be a JSON object")
    mode = _field(doc, "participation_mode", str, "fixed_point").replace("-", "_")
    try:
        gen = GenerationParams(
            _field(doc, "e_range", "range", (3.6, 12.25)),
            _field(doc, "alpha_range", "range", (1.0, 3.0)),
            _field(doc, "price_cap", float, 45.0),
        )
        config = MarketConfig(
            _field(doc, "budget", float, 1000.0),
            _field(doc, "grid_sell", float, 44.0),
            _field(doc, "grid_buy", float, 8.0),
            _field(doc, "participation_threshold", float, None),
        )
    except ConfigurationError as exc:
        raise ScenarioFormatError(str(exc)) from None
    seed = _field(doc, "seed", int, None)
    label = _field(doc, "label", str, "")
    if "eus" in doc and doc["eus"] is not None:
        rows = doc["eus"]
        if not isinstance(rows, list) or not rows:
            raise ScenarioFormatError("field 'eus': expected a non-empty list")
        eus = []
        for i, row in enumerate(rows):
            try:
                eus.append(EnergyUser(int(row.get("id", i)), float(row["e"]), float(row["alpha"]),
                                      float(row.get("P", gen.price_cap))))
            except (KeyError, TypeError, ValueError, AttributeError) as exc:
                raise ScenarioFormatError(f"field 'eus[{i}]': {exc}") from None
        n = _field(doc, "n_eus", int, len(eus))
        if n != len(eus):
            raise ScenarioFormatError(f"field 'n_eus': {n} does not match {len(eus)} listed users")
        sc = Scenario(tuple(eus), config, seed, label, gen, "fixed_point")
    else:
        n = _field(doc, "n_eus", int, required=True)
        if seed is None:
            raise ScenarioFormatError("missing field 'seed' (needed to draw users)")
        try:
            sc = generate_scenario(n, seed, gen, config, label)
        except ConfigurationError as exc:
            raise ScenarioFormatError(str(exc)) from None
    if mode not in PARTICIPATION_MODES:
        raise ScenarioFormatError(f"field 'participation_mode': unknown mode {mode!r}")
    return replace(sc, participation_mode=mode)


def load_scenario(path) -> Scenario:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(doc)


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=2) + "\n")


# --- protocol --------------------------------------------------------------

@dataclass(frozen=True)
class ProtocolMessage:
    round: int
    kind: str
    sender: str
    payload: object

    def to_json(self) -> str:
        payload = self.payload
        if isinstance(payload, np.ndarray):
            payload = payload.tolist()
        return json.dumps({"round": self.round, "kind": self.kind, "sender": self.sender, "payload": payload})


class MessageLog(list):
    def of_kind(self, kind: str) -> list[ProtocolMessage]:
        return [m for m in self if m.kind == kind]

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for m in self:
                fh.write(m.to_json() + "\n")


class SellerAgent:
    """Holds one seller's private parameters; answers probes with scalars only."""

    def __init__(self, eu: EnergyUser):
        self._eu = eu
        self.name = f"EU{eu.id}"

    def surplus(self) -> float:
        return self._eu.surplus_e

    def local_operator(self, price: float) -> float:
        eu = self._eu
        return eu.sensitivity_alpha * price + eu.surplus_e - eu.price_cap_P

    def inner_term(self, price: float, direction: float) -> float:
        return self.local_operator(price) * direction


def _masked_problem(surplus: Sequence[float], config: MarketConfig, ceiling: np.ndarray) -> VIProblem:
    # Buyer-side view: only surpluses, budget and the published ceiling are
    # real. Sensitivity and cap are placeholders that the solver never reads
    # because the operator and step size come from outside.
    eus = [EnergyUser(n, e, 1.0, float(c)) for n, (e, c) in enumerate(zip(surplus, ceiling))]
    return VIProblem(eus, config, upper_bounds=ceiling)


def protocol_params(scenario: Scenario, params: SolverParams | None = None) -> SolverParams:
    """Solver settings the buyer can use without private data.

    A default step 1/max(alpha) needs every sensitivity, so the published
    upper end of the sensitivity range stands in for it.
    """
    params = SolverParams() if params is None else params
    if params.step_mu is None:
        params = replace(params, step_mu=1.0 / scenario.generation.alpha_range[1])
    return params


@dataclass
class MarketOutcome:
    allocation: Allocation
    participants: np.ndarray
    rounds: int
    sfc_energy_bought: float
    sfc_cost: float
    eu_total_revenue: float
    converged: bool = True
    trace: object = None

    @property
    def mean_benefit(self) -> float:
        """Mean benefit over participants; 0 for an empty market."""
        if not np.any(self.participants):
            return 0.0
        return float(np.mean(self.allocation.benefits[self.participants]))

    @property
    def n_participants(self) -> int:
        return int(np.sum(self.participants))


def _outcome(allocation: Allocation, scenario: Scenario, rounds: int, converged=True, trace=None) -> MarketOutcome:
    part = np.asarray(allocation.participants, dtype=bool)
    e = np.array([eu.surplus_e for eu in scenario.eus])
    cost = float(np.sum(allocation.payments[part]))
    return MarketOutcome(allocation, part, rounds, float(np.sum(e[part])), cost, cost, converged, trace)


def run_protocol(scenario: Scenario, params: SolverParams | None = None):
    """Negotiate prices by message passing; returns ``(MarketOutcome, MessageLog)``.

    Messages are processed in ascending seller order, so the run is
    deterministic and its prices equal ``solve(scenario.problem(),
    protocol_params(scenario, params))`` bit for bit.
    """
    params = protocol_params(scenario, params)
    sellers = [SellerAgent(eu) for eu in scenario.eus]
    log = MessageLog()
    state = {"round": 0}

    def send(kind, sender, payload):
        log.append(ProtocolMessage(state["round"], kind, sender, payload))

    budget = scenario.config.budget_C
    send("BudgetAnnounce", BUYER, float(budget))
    surplus = []
    for s in sellers:
        e = s.surplus()
        send("SurplusSubmit", s.name, float(e))
        surplus.append(e)
    view = _masked_problem(surplus, scenario.config, scenario.price_ceiling)

    def operator(p):
        send("PriceProbe", BUYER, np.array(p, dtype=float))
        replies = np.empty(len(sellers))
        for n, s in enumerate(sellers):
            replies[n] = s.local_operator(float(p[n]))
            send("LocalOperatorReply", s.name, float(replies[n]))
        return replies

    def inner(z, d):
        send("PriceProbe", BUYER, {"prices": np.asarray(z).tolist(), "direction": np.asarray(d).tolist()})
        terms = np.empty(len(sellers))
        for n, s in enumerate(sellers):
            terms[n] = s.inner_term(float(z[n]), float(d[n]))
            send("InnerProductReply", s.name, float(terms[n]))
        return float(np.sum(terms))

    def on_iterate(t, p):
        send("ProjectedPrice", BUYER, np.array(p, dtype=float))
        state["round"] = t

    converged = True
    try:
        alloc, trace = solve(view, params, operator=operator, inner=inner, on_iterate=on_iterate)
    except ConvergenceError as exc:
        alloc, trace, converged = exc.allocation, exc.trace, False
    prices = alloc.prices
    send("Terminate", BUYER, np.array(prices, dtype=float))
    # Benefits are evaluated by the harness; sellers never report them.
    final = make_allocation(prices, scenario.problem(), params.tol, zp=None)
    final.tau = alloc.tau
    return _outcome(final, scenario, trace.iterations, converged, trace), log


def audit_privacy(log: Iterable[ProtocolMessage], scenario: Scenario) -> list[str]:
    """Return a list of privacy violations in ``log`` (empty when clean).

    Sellers may only send the allowed scalar kinds, and no seller payload
    may equal its own sensitivity or price cap.
    """
    private = {f"EU{eu.id}": (eu.sensitivity_alpha, eu.price_cap_P) for eu in scenario.eus}
    problems = []
    for m in log:
        if m.sender == BUYER:
            continue
        if m.kind not in SELLER_KINDS:
            problems.append(f"{m.sender} sent {m.kind}")
            continue
        if not isinstance(m.payload, float):
            problems.append(f"{m.sender} sent a non-scalar {m.kind}")
            continue
        if m.sender in private and m.payload in private[m.sender]:
            problems.append(f"{m.sender} revealed a private value in {m.kind} (round {m.round})")
    return problems


# --- participation ----------------------------------------------------------

def _full_allocation(prices_sub, mask, scenario: Scenario, tol: float, tau: float) -> Allocation:
    prob = scenario.problem()
    prices = np.zeros(scenario.n_eus)
    prices[mask] = prices_sub
    alloc = make_allocation(prices, prob, tol)
    alloc.benefits = np.where(mask, alloc.benefits, 0.0)
    alloc.tau = tau
    alloc.participants = mask.copy()
    return alloc


def apply_participation(prices, scenario: Scenario, mode: str | None = None,
                        params: SolverParams | None = None, rounds: int = 0) -> MarketOutcome:
    """Withdraw sellers priced below the threshold.

    ``one_shot`` drops them and keeps the other prices. ``fixed_point``
    re-solves among the remaining sellers until every price clears the
    threshold or nobody is left. ``off`` keeps everyone. Withdrawn sellers
    get price, payment and benefit 0.
    """
    mode = scenario.participation_mode if mode is None else mode.replace("-", "_")
    if mode not in PARTICIPATION_MODES:
        raise ConfigurationError(f"unknown participation mode {mode!r}")
    params = SolverParams() if params is None else params
    threshold = scenario.config.participation_threshold
    prob = scenario.problem()
    prices = np.asarray(prices, dtype=float)
    mask = np.ones(scenario.n_eus, dtype=bool)
    tau = estimate_tau(prices, prob)
    if mode == "off":
        return _outcome(_full_allocation(prices, mask, scenario, params.tol, tau), scenario, rounds)
    below = prices < threshold
    if mode == "one_shot" or not np.any(below):
        mask = ~below
        return _outcome(_full_allocation(prices[mask], mask, scenario, params.tol, tau), scenario, rounds)
    current = prices
    while True:
        below_now = current < threshold
        if not np.any(below_now):
            break
        idx = np.flatnonzero(mask)
        mask[idx[below_now]] = False
        if not np.any(mask):
            current, tau = np.zeros(0), 0.0
            break
        alloc, trace = solve(prob.subset(mask), params)
        current, tau = alloc.prices, alloc.tau
        rounds += trace.iterations
    return _outcome(_full_allocation(current, mask, scenario, params.tol, tau), scenario, rounds)


def clear_market(scenario: Scenario, params: SolverParams | None = None, mode: str | None = None) -> MarketOutcome:
    """Centralized solve followed by the participation rule."""
    params = SolverParams() if params is None else params
    alloc, trace = solve(scenario.problem(), params)
    out = apply_participation(alloc.prices, scenario, mode, params, trace.iterations)
    out.trace = trace
    return out


# --- analytics ----------------------------------------------------------------

@dataclass(frozen=True)
class GridComparison:
    budget: float
    grid_only_energy: float
    market_energy: float
    energy_gain: float
    market_revenue: float
    grid_revenue: float
    revenue_gain: float


def grid_comparison(outcome: MarketOutcome, config: MarketConfig) -> GridComparison:
    """Buyer side: energy for the budget from sellers vs from the grid.
    Seller side: payment received vs selling the same surplus to the grid."""
    grid_energy = config.budget_C / config.grid_sell_price
    grid_rev = config.grid_buy_price * outcome.sfc_energy_bought
    return GridComparison(
        budget=config.budget_C,
        grid_only_energy=grid_energy,
        market_energy=outcome.sfc_energy_bought,
        energy_gain=outcome.sfc_energy_bought - grid_energy,
        market_revenue=outcome.eu_total_revenue,
        grid_revenue=grid_rev,
        revenue_gain=outcome.eu_total_revenue - grid_rev,
    )


SWEEP_AXES = ("budget", "n_eus", "common_alpha")


def _vary(base: Scenario, axis: str, value) -> Scenario:
    if axis == "budget":
        return base.with_budget(value)
    if axis == "n_eus":
        if base.seed is None:
            raise ConfigurationError("an n_eus sweep needs a seeded base scenario")
        return replace(generate_scenario(int(value), base.seed, base.generation, base.config),
                       participation_mode=base.participation_mode)
    if axis == "common_alpha":
        eus = tuple(replace(eu, sensitivity_alpha=float(value)) for eu in base.eus)
        return replace(base, eus=eus)
    raise ConfigurationError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def sweep(axis: str, values: Sequence, base: Scenario, params: SolverParams | None = None,
          mode: str | None = None) -> list[dict]:
    """Solve one market per value of ``axis``; one row of aggregates per value."""
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    rows = []
    for v in values:
        sc = _vary(base, axis, v)
        out = clear_market(sc, params, mode)
        rows.append({
            "axis": axis,
            "value": v,
            "n_eus": sc.n_eus,
            "budget": sc.config.budget_C,
            "participants": out.n_participants,
            "mean_benefit": out.mean_benefit,
            "total_payment": out.sfc_cost,
            "energy_bought": out.sfc_energy_bought,
            "tau": out.allocation.tau,
            "iterations": out.rounds,
        })
    return rows

