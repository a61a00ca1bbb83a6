"""Message-passing negotiation between the buyer and ten sellers.

The buyer only learns surpluses. Every probe is answered by each seller with
one number (its operator value or an inner-product term), and the run ends
at the same prices a centralized solve produces.
"""

from collections import Counter

import numpy as np

from ccgprice.sim import audit_privacy, generate_scenario, protocol_params, run_protocol
from ccgprice.solver import solve

sc = generate_scenario(10, seed=3)
outcome, log = run_protocol(sc)
print(f"{sc.label}: {outcome.rounds} rounds, {len(log)} messages")
for kind, count in sorted(Counter(m.kind for m in log).items()):
    print(f"  {kind:<20} {count}")

central, _ = solve(sc.problem(), protocol_params(sc))
same = np.array_equal(outcome.allocation.prices, central.prices)
print(f"prices identical to the centralized solve: {same}")
print(f"privacy findings: {audit_privacy(log, sc) or 'none'}")

first = log.of_kind("LocalOperatorReply")[0]
print(f"a typical seller reply: round {first.round}, {first.sender} sends {first.payload:.4f}")
