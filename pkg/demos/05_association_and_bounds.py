"""Association of the field, the explicit variance lower bound and the Pinsker bound.

Run: python3 demos/05_association_and_bounds.py
"""

import numpy as np

from shelab import (DiffusionSpec, Ensemble, LatticeGrid, NoiseModel, distance_to_gaussian, seed_stream,
                    tv_normals_bound, variance_lower_bound)
from shelab.stats import MonotoneFunctional, association_check

grid = LatticeGrid(1, 512, 1 / 32, 1 / 2048)
ens = Ensemble(grid, NoiseModel("dirac", 1), DiffusionSpec.linear(), 5, range(600))
u = ens.advance_to(0.5)

# Coordinatewise nondecreasing functionals of the field are positively correlated.
a, b, c = (256,), (264,), (272,)
pairs = [(MonotoneFunctional("projection", (a,)), MonotoneFunctional("projection", (c,))),
         (MonotoneFunctional("min", (a, b)), MonotoneFunctional("max", (b, c))),
         (MonotoneFunctional("bump", (a, b, c)), MonotoneFunctional("projection", (b,)))]
verdict = association_check(u, pairs)
for row in verdict.details["pairs"]:
    print(f"Cov[{row['h1']}, {row['h2']}] = {row['cov']:+.4f} (z = {row['z']:.1f})")

# Condition-3 lower bound on the variance of the spatial average.
for n in (16, 64, 512):
    lb = variance_lower_bound(NoiseModel("dirac", 1), DiffusionSpec.linear(), n, 0.5, 3, delta=0.1, R=1.0)
    print(f"N={n}: bound {lb.value:.5f} ({'vacuous' if lb.vacuous else 'informative'})")

# Total variation between centred normals is bounded by 0.5 sqrt(c1/c2 - 1).
x = seed_stream(1, 0, "demo").normal(0, np.sqrt(1.21), 20000)
est = distance_to_gaussian(x, variance=1.0)
print(f"TV proxy {est.value:.4f} +/- {est.se:.4f} <= Pinsker bound {tv_normals_bound(1.21, 1.0):.4f}")
