"""Distance between the eps-scaled and the Vlasov hierarchy as eps shrinks.

Run: python3 demos/vlasov_limit.py
"""

import numpy as np

from binjump.discretization import TorusGrid, random_state
from binjump.hierarchy import HierSolverConfig, vlasov_convergence_study
from binjump.kernel import example_kernel

g = TorusGrid(1, 1.0, 16)
k = example_kernel(g)
G0 = random_state(g, 3, np.random.default_rng(5))
C = 1.0
T = 1 / (k.bounds.B * C)

rows = vlasov_convergence_study(G0, T, [1.0, 0.5, 0.25, 0.1, 0.05], k, HierSolverConfig(dt=1 / 120), C)
prev = None
for r in rows:
    ratio = "" if prev is None else f"  ratio to previous {r.error / prev:.3f}"
    print(f"eps={r.eps:<5} sup error={r.error:.5f}{ratio}")
    prev = r.error
# roughly linear in eps: halving eps halves the error
