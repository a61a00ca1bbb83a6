"""Budget-sharing price negotiation between energy sellers and a facility buyer.

The market is posed as a strictly monotone variational inequality over
per-seller unit prices and solved with a two-projection hyperplane method.
"""

from .market import (
    Allocation,
    ConfigurationError,
    DimensionError,
    EnergyUser,
    MarketConfig,
    benefit,
    marginal_benefit,
    price_cap_bound,
    revenue,
    social_welfare,
)
from .oracle import KKTSolution, brute_force_welfare, kkt_residual, pareto_check, tau_solve
from .sim import (
    GenerationParams,
    MarketOutcome,
    Scenario,
    apply_participation,
    clear_market,
    generate_scenario,
    grid_comparison,
    run_protocol,
    sweep,
)
from .solver import ConvergenceError, LineSearchError, SolveTrace, SolverParams, solve
from .vi import (
    HalfSpace,
    SeparationError,
    VIProblem,
    eval_operator_Z,
    monotonicity_modulus,
    project_feasible,
    project_feasible_cap_halfspace,
)

__version__ = "0.1.0"
