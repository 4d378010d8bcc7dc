"""Density band for a single predictor, printed as a coarse table."""

import numpy as np

from wassreg import density_band, fit_model
from wassreg.simulate import SimConfig, generate_dataset

config = SimConfig(n=500, p=1, alpha=(2.0,), beta=(1.0,), transport="nonlinear")
data = generate_dataset(config, np.random.default_rng(11)).data
fit = fit_model(data)

x = [0.3]
band = density_band(data, fit, x, alpha=0.05, delta=0.1, R=5000, seed=2)
truth = config.true_density(x, band.abscissae)
print(f"critical value {band.critical_value:.3f}, trimmed points excluded: {band.excluded}")
print(f"{'u':>8} {'lower':>8} {'fit':>8} {'upper':>8} {'truth':>8}")
for i in np.linspace(0, band.abscissae.size - 1, 12).astype(int):
    print(f"{band.abscissae[i]:8.3f} {band.lower[i]:8.4f} {band.center[i]:8.4f}"
          f" {band.upper[i]:8.4f} {truth[i]:8.4f}")
print("covers truth:", band.contains(truth))
