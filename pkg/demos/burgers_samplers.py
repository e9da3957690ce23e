"""Fit viscous Burgers with each Langevin sampler and compare Error Bars."""

import time

from langevin_sysid import fit, make_problem
from langevin_sysid.samplers import ChainConfig

p = make_problem("burgers", seed=0)
print("library:", p.library.names)
for method in ("sgld", "cyclical", "resgld"):
    t0 = time.perf_counter()
    m = fit(p.dataset, p.library, ChainConfig(method=method, seed=0), p.threshold)
    coefs = {b: round(v["mode"], 4) for (b, _), v in m.summary.items()}
    print(f"{method:>8}: {coefs}  error bar {m.metrics['error_bar']:.3g}"
          f"  ({time.perf_counter() - t0:.0f}s)")
