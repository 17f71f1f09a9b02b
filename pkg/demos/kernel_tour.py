"""Build the example kernel, print its constants and structural checks.

Run: python3 demos/kernel_tour.py
"""

import numpy as np

from binjump.discretization import TorusGrid
from binjump.kernel import FactorizedKernel, check_conditions, example_kernel, geometric_fourier_density

g = TorusGrid(1, 1.0, 16)
k = example_kernel(g)
b = k.bounds
print(f"c1={b.c1:.4f} c2={b.c2:.4f} c3={b.c3:.4f} c4={b.c4:.4f}  A={b.A:.4f} B={b.B:.4f}")
print("flags:", k.flags())

rep = check_conditions(k)
for name, v in rep.as_dict().items():
    print(f"  {name:10s} holds={v['holds']}  violation={v['violation']:.2e}")

# the same jump density used for both a and b breaks the one-point condition
a = geometric_fourier_density(g, 0.3)
bad = check_conditions(FactorizedKernel(g, 0.25, a, a))
print("a = b: chr holds?", bad.chr.holds, f"(violation {bad.chr.violation:.3f})")

# a1 depends only on x1 - x2 for a translation kernel
print("a1 profile:", np.round(k.a1_profile[:5], 4), "...")
