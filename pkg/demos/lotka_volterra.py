"""Identify the predator-prey equations from 5% noisy states and draw a credible band."""

import numpy as np

from langevin_sysid import ChainConfig, credible_band, evaluate_model, fit, make_problem

p = make_problem("lotka_volterra", seed=0)
model = fit(p.dataset, p.library, ChainConfig(method="resgld", seed=0), p.threshold)
evaluate_model(model, p.truth, p.ic, p.grid)

print("support:", model.support())
for (basis, state), s in model.summary.items():
    print(f"  d{state}/dt  {basis:>3}  {s['mode']:+.4f} +- {s['std']:.1e}")
print("error bar %.3g  mse %.3g  aic %.4g" % (model.metrics["error_bar"], model.metrics["mse"],
                                            model.metrics["aic"]))

band = credible_band(model.samples, p.library.descriptors, p.ic, p.grid, ensemble_size=100)
width = band.upper - band.lower
print("band width: median %.3g, max %.3g; truth inside at %.0f%% of points"
      % (np.median(width), width.max(), 100 * band.contains(p.truth).mean()))
