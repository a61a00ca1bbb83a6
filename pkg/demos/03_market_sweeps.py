"""How budget, crowding and sensitivity shape the market.

Sellers priced below the grid buy price (8 cents/kWh) would rather sell to
the grid. With the fixed-point rule they withdraw and the rest re-negotiate.
"""

from ccgprice.sim import generate_scenario, sweep

population = generate_scenario(40, seed=0)
print("participation among 40 sellers as the budget grows")
for row in sweep("budget", [500, 1000, 2000, 3000, 4000], population, mode="fixed_point"):
    print(f"  C={row['value']:>6.0f}: {row['participants']:>2} trade, mean benefit {row['mean_benefit']:7.1f}")

print("\nmean benefit as more sellers share a 1000 cent budget (everyone kept)")
for row in sweep("n_eus", [10, 20, 30, 40], generate_scenario(10, seed=0), mode="off"):
    print(f"  N={row['value']:>2}: mean benefit {row['mean_benefit']:7.1f}, tau {row['tau']:.3f}")

print("\ncommon sensitivity, ten sellers")
for budget in (1000.0, 2000.0):
    rows = sweep("common_alpha", [1.0, 2.0, 3.0], generate_scenario(10, seed=0).with_budget(budget), mode="off")
    base = rows[0]["mean_benefit"]
    steps = ", ".join(f"alpha {r['value']:.0f}: {r['mean_benefit']:.1f}" for r in rows)
    print(f"  C={budget:.0f}: {steps} (drop {100 * (1 - rows[-1]['mean_benefit'] / base):.1f}%)")
