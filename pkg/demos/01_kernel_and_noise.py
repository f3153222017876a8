"""Heat kernel, noise spectra and the spectral functions Upsilon and Lambda.

Run: python3 demos/01_kernel_and_noise.py
"""

import math

import numpy as np

from shelab import LatticeGrid, NoiseModel, dalang_integral, heat_kernel, lambda_inverse, upsilon
from shelab.kernel import kernel_product_split, semigroup_convolve
from shelab.noise import lattice_covariance

# The Gaussian heat kernel and one of its product identities.
s, x, y = 0.7, 1.2, -0.4
a, b = kernel_product_split(s, x, y)
print(f"p_s(x) p_s(y) = {heat_kernel(s, x) * heat_kernel(s, y):.12f}")
print(f"2 * split     = {2 * a * b:.12f}")

# On the lattice the heat flow is a Fourier multiplier; it is an exact semigroup.
grid = LatticeGrid(1, 256, 1 / 16, 1e-3)
f = np.random.default_rng(0).random(grid.shape)
two = semigroup_convolve(semigroup_convolve(f, 0.2, grid), 0.3, grid)
print(f"semigroup defect: {np.max(np.abs(two - semigroup_convolve(f, 0.5, grid))):.1e}")

# Dalang integrals: white noise in d = 1 is fine for alpha < 1/2 and diverges beyond.
white = NoiseModel("dirac", 1)
for alpha in (0.0, 0.25, 0.5):
    r = dalang_integral(white, alpha)
    print(f"Dalang alpha={alpha}: {r.status} {r.value:.6g}")

# Upsilon(lambda) and its inverse; for white noise Upsilon = 1/sqrt(2 lambda).
for model in (white, NoiseModel("gaussian", 2, bandwidth=0.5), NoiseModel("exponential", 2, rate=2.0)):
    lam = lambda_inverse(model, 0.05)
    print(f"{model.kind:12s} d={model.d}: Lambda(0.05) = {lam:.6g}, Upsilon back = {upsilon(model, lam):.12f}")
print(f"closed form at lambda=2: {upsilon(white, 2.0):.12f} vs {1 / math.sqrt(4.0):.12f}")

# Lattice covariance of coloured noise keeps the total mass.
g = NoiseModel("gaussian", 1, bandwidth=1.0)
c = lattice_covariance(g, grid)
print(f"lattice covariance mass {c.sum() * grid.dx:.10f} (model total mass {g.total_mass})")
