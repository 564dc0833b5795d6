"""
Instantaneous gelation in truncated systems
===========================================

For ``K(j, k) = j^3 + k^3`` with ``K(j, 0) = 0`` the gelation time is zero:
mass leaves every finite size immediately.  A truncated system cannot show
that directly since its moments stay finite.  What it does show is a
threshold-crossing time that keeps shrinking as the truncation grows.
"""

import numpy as np

from edgrowth import (
    IntegratorConfig,
    InitSpec,
    KernelSpec,
    classify_regime,
    instantaneous_blowup_time_bound,
    instantaneous_gelation_probe,
    make_kernel,
)

kernel = make_kernel(KernelSpec("sum_power", C=1.0, beta=3.0, zero_receiver_row=True))
print("regime:", classify_regime(kernel).regime)

# geometric data has every moment finite
init = InitSpec("geometric", amplitude=1.0, q=0.5)
cfg = IntegratorConfig(t_end=1.0, dt_init=1e-8, dt_min=1e-16, record_every=1e-3)

t_star = instantaneous_gelation_probe(init, kernel, cfg, [64, 256, 1024, 4096], factor=10.0)
for N, t in t_star.items():
    print(f"N = {N:5d}: M2 reaches 10 M2(0) at t = {t:.4f}")

# the analytic blow-up time bound for M_n shrinks like 1/n
ns = np.array([2, 5, 10, 50, 100])
bounds = [instantaneous_blowup_time_bound(int(n), 3.0, 1.0, 1.0, 1.0, 1.0) for n in ns]
for n, b in zip(ns, bounds):
    print(f"n = {n:3d}: blow-up time of M_n is at most {b:.4f}")
