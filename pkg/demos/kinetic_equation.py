"""Picard fixed point against RK4 for the kinetic equation.

Run: python3 demos/kinetic_equation.py
"""

import numpy as np

from binjump.discretization import TorusGrid
from binjump.kernel import example_kernel
from binjump.kinetic import KineticConfig, invariants, richardson_order, solve_picard, solve_rk

g = TorusGrid(1, 1.0, 32)
k = example_kernel(g)
x = g.centers()[:, 0]
p0 = 0.3 + 0.15 * np.cos(2 * np.pi * x)

cfg = KineticConfig(C=0.5, T=1.0)
P = solve_picard(p0, k, cfg)
R = solve_rk(p0, k, cfg)
print("Picard segments:", P.info["segments"], "iterations:", P.info["iterations"])
print("max |Picard - RK| =", max(np.max(np.abs(P.at(t) - R.values[j])) for j, t in enumerate(R.times)))
print("RK4 observed order:", round(richardson_order(p0, k, 1.0, 8), 2))
for t, m, lo, hi in invariants(R)[::25]:
    print(f"t={t:.2f} mass={m:.12f} min={lo:.4f} max={hi:.4f}")
