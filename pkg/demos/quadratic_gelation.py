"""
Gelation of the quadratic kernel
================================

For ``K(j, k) = C j^2 k^2`` the second moment satisfies a closed equation
before gelation, so ``1/M2`` falls on a straight line that hits zero at
``1 / (2 M2(0) C)``.  This script integrates the truncated system and
recovers that time from the simulated moments.
"""

from edgrowth import (
    IntegratorConfig,
    InitSpec,
    KernelSpec,
    estimate_gelation_time,
    integrate,
    make_kernel,
    make_state,
)

# monodisperse start: every cluster has size 1, so M2(0) = 1
kernel = make_kernel(KernelSpec("homogeneous_eta", C=1.0, eta=2.0))
state0 = make_state(InitSpec("monodisperse"), N=2048)

# the implicit default method handles the fast rates of large clusters
traj = integrate(state0, kernel, IntegratorConfig(t_end=0.45, record_every=0.01))
print(f"stop reason: {traj.stop_reason}, {traj.step_stats.accepted} steps")

# 1/M2 against t, a few sample points
for t, m2 in list(zip(traj.times, traj.moment(2.0)))[::5]:
    print(f"t = {t:.2f}   M2 = {m2:10.5f}   1/M2 = {1 / m2:.6f}   1 - 2t = {1 - 2 * t:.6f}")

est = estimate_gelation_time(traj, kernel, window=(0.05, 0.35))
print(f"fitted slope {est.slope:.6f}, extrapolated t_gel {est.t_gel:.6f}")
print(f"analytic prediction {est.analytic_prediction}")

# the truncated system keeps both invariants no matter how fast M2 grows
print(f"M0 at the end: {traj.moment(0.0)[-1]:.15f}")
print(f"M1 at the end: {traj.moment(1.0)[-1]:.15f}")
