"""Fit a Wasserstein regression, test it and draw a band.

Run with ``python demos/quickstart.py``.
"""

import numpy as np

from wassreg import fit_model, test_global, test_partial, wasserstein_r_squared, winf_band
from wassreg.simulate import SimConfig, generate_dataset

# Two predictors: the first moves location and scale, the second does nothing.
config = SimConfig(n=300, p=2, alpha=(1.0, 0.0), beta=(0.5, 0.0), transport="linear")
sim = generate_dataset(config, np.random.default_rng(1))
data = sim.data
print(f"{data.n} responses on a grid of {data.grid.size} quantile levels")

fit = fit_model(data)
print("Wasserstein R^2:", round(wasserstein_r_squared(data, fit), 3))

x = [0.2, -0.1]
Qx = fit.quantile_at(x)
print("fitted median at x:", round(float(Qx(0.5)), 3), " truth:",
      round(float(config.true_quantile(x, [0.5])[0]), 3))

for method in ("mixture", "satterthwaite", "bootstrap"):
    rep = test_global(data, method=method, seed=7)
    print(f"global test [{method:13s}] F = {rep.statistic:.3f}  crit = {rep.critical_value:.3f}"
          f"  p = {rep.p_value:.4f}")

rep = test_partial(data, ["x2"], seed=7)
print(f"partial test for x2: F = {rep.statistic:.4f}  p = {rep.p_value:.3f}")

band = winf_band(data, fit, x, alpha=0.05, R=5000, seed=3)
truth = config.true_quantile(x)
print("band critical value:", round(band.critical_value, 3),
      " covers truth:", band.contains(truth))
