"""Trading with the community versus trading with the grid.

Ten sellers with 81 kWh of surplus in total share a 1000 cent budget. The
same money buys only 1000/44 kWh from the grid, and the sellers would earn
only 8 cents/kWh by exporting.
"""

from ccgprice.report import grid_fixture
from ccgprice.sim import clear_market, grid_comparison

sc = grid_fixture()
outcome = clear_market(sc)
cmp = grid_comparison(outcome, sc.config)

print(f"{outcome.n_participants} of {sc.n_eus} sellers trade; lowest price "
      f"{outcome.allocation.prices.min():.2f} cents/kWh")
print(f"buyer: {cmp.market_energy:.2f} kWh from sellers vs {cmp.grid_only_energy:.3f} kWh from the grid "
      f"(+{cmp.energy_gain:.2f} kWh)")
print(f"sellers: {cmp.market_revenue:.2f} cents vs {cmp.grid_revenue:.2f} from exporting "
      f"(+{cmp.revenue_gain:.2f})")
