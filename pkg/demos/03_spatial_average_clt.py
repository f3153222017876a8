"""Gaussian fluctuations of spatial averages of u and of log u.

Run: python3 demos/03_spatial_average_clt.py   (about a minute)
"""

import numpy as np

from shelab import DiffusionSpec, Ensemble, NoiseModel, ObservableSpec, estimate_b, grid_for, normality_test
from shelab.observables import LagCovariance, default_max_lag, estimate_b_limit, window_means

model = NoiseModel("dirac", 1)
sigma = DiffusionSpec.linear()
t, n_window, replicas = 0.5, 64.0, 1000
grid = grid_for(1, 0.125, 2 * n_window).with_dt(1 / 128)

ens = Ensemble(grid, model, sigma, 7, range(replicas))
u = ens.advance_to(t)
for g, centering in ((ObservableSpec.identity(), 1.0), (ObservableSpec.log(), None)):
    means, _ = window_means(u, grid, g, n_window)
    # E log u is not known in closed form; centre by the sample mean here
    c = means.mean() if centering is None else centering
    x = np.sqrt(n_window) * (means - c)
    b, se = estimate_b(x)
    ks = normality_test(x, mean=None if centering is None else 0.0)
    print(f"{g.label:8s}: N^(1/2)-scaled variance {b:.4f} +/- {se:.4f}, KS p = {ks.p_value:.3f}")

# The limit variance is the integrated covariance of u(t, .) over lags.
acc = LagCovariance(grid, default_max_lag(model, t))
acc.add(range(replicas), u, u)
value, se, _, tail, status = estimate_b_limit(acc)
print(f"lag integral {value:.4f} +/- {se:.4f} (tail fraction {tail:.4f}, {status})")
