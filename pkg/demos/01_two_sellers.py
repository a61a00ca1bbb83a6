"""Two sellers share a 550 cent budget.

Both sellers have the same sensitivity and price cap but different surplus.
The solver splits the budget so that each seller's marginal benefit falls by
an amount proportional to its own surplus, which gives the smaller seller
the higher unit price.
"""

import numpy as np

from ccgprice import EnergyUser, MarketConfig, VIProblem, kkt_residual, social_welfare, solve, tau_solve

eus = [EnergyUser(0, 10.0, 1.0, 45.0), EnergyUser(1, 20.0, 1.0, 45.0)]
prob = VIProblem(eus, MarketConfig(budget_C=550.0))

alloc, trace = solve(prob)
print(f"hyperplane method: prices {np.round(alloc.prices, 6)} after {trace.iterations} iterations")
print(f"  payments {np.round(alloc.payments, 3)} (total {alloc.total_payment:.3f}, complete={alloc.complete})")
print(f"  budget multiplier {alloc.tau:.6f}")

ref = tau_solve(prob)
print(f"multiplier search: prices {ref.prices}, tau {ref.tau:.6f}")
print(f"  KKT residual of the solver output: {kkt_residual(alloc.prices, alloc.tau, prob):.2e}")

# Cutting both prices by the same amount also spends 550, but gives up welfare.
flat = np.array([25.0, 15.0])
print(f"welfare at the solution {social_welfare(alloc.prices, eus):.3f}; "
      f"uniform cut {flat} spends {flat @ prob.e:.0f} for welfare {social_welfare(flat, eus):.3f}")

# With 900 cents the budget no longer binds and each seller gets its free optimum (P - e) / alpha.
loose, _ = solve(prob.with_budget(900.0))
print(f"budget 900: prices {np.round(loose.prices, 6)}, paid {loose.total_payment:.1f}, complete={loose.complete}")
