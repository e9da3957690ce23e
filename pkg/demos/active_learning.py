"""Hybrid versus random acquisition on the Lotka-Volterra pool.

For each seed, prints how many measured derivatives each rule needed before the
Error Bar first dropped below 1e-2, then the medians over seeds.
"""

import numpy as np

from langevin_sysid import AcquisitionConfig, active_learning_loop, lotka_volterra_pool
from langevin_sysid.samplers import ChainConfig

MAX_POINTS = 100
counts = {"hybrid": [], "random": []}
for seed in range(5):
    for strategy in counts:
        res = active_learning_loop(
            lotka_volterra_pool(seed=seed), ChainConfig(method="mala", iterations=2000, seed=seed),
            AcquisitionConfig(alpha=0.5, lam=0.0, n_initial=20, batch=10, max_points=MAX_POINTS,
                              tol=0.0, strategy=strategy, seed=seed))
        n = res.points_to_reach(1e-2)
        counts[strategy].append(MAX_POINTS + 10 if n is None else n)
        trace = ", ".join(f"{r['n_points']}:{r['error_bar']:.2g}" for r in res.rounds
                          if r["error_bar"] is not None)
        print(f"seed {seed} {strategy:>6}: {n} points  [{trace}]")

for strategy, c in counts.items():
    print(f"{strategy:>6}: median {np.median(c):g} points {c}")
