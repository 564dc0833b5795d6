"""Verdicts on trajectories: gelation time, moment bounds, refinement studies."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .integrator import IntegratorConfig, Trajectory, integrate
from .kernel import Kernel, classify_regime
from .state import DensityState, InitSpec, make_state, moment

GELATION_METHODS = ("inverse_m2_linear_fit", "threshold_crossing")

# |slope| of 1/M2 below which a run is reported as not gelling
NON_GELLING_SLOPE = 1e-3


@dataclass(frozen=True)
class GelationEstimate:
    t_gel: float
    method: str
    fit_r2: float
    window: tuple
    analytic_prediction: Optional[float]
    slope: float
    intercept: float
    gelling: bool
    n_samples: int


@dataclass
class BoundReport:
    """Pointwise comparison of a simulated moment with an analytic bound.

    ``margin`` is the signed relative slack in the direction of the
    inequality: positive means the bound holds with room to spare.
    """

    bound_name: str
    kind: str  # "upper" or "lower"
    times: np.ndarray
    simulated: np.ndarray
    bound_value: np.ndarray
    satisfied: np.ndarray
    margin: np.ndarray
    N: int

    @property
    def all_satisfied(self) -> bool:
        return bool(np.all(self.satisfied))

    @property
    def worst_shortfall(self) -> float:
        """Largest relative violation, zero when the bound holds everywhere."""
        if self.margin.size == 0:
            return 0.0
        return float(max(0.0, -np.min(self.margin)))


@dataclass
class ConvergenceReport:
    N_values: list
    reference_N: int
    orders: tuple
    sup_diffs: dict  # N -> array of sup_t |M_p^N - M_p^ref|, one entry per order
    stop_reasons: dict
    shared_times: np.ndarray = field(repr=False)


def _analytic_gel_time(kernel: Kernel, M2_0: float) -> Optional[float]:
    spec = kernel.spec
    if spec.family == "homogeneous_eta" and spec.eta == 2.0:
        c = spec.C
    elif spec.family == "product_power" and spec.mu == 2.0 and spec.nu == 2.0:
        c = 2.0 * spec.C
    else:
        return None
    if c <= 0 or M2_0 <= 0:
        return None
    return 1.0 / (2.0 * M2_0 * c)


def threshold_crossing_time(traj: Trajectory, order: float = 2.0, factor: float = 10.0,
                            threshold: Optional[float] = None) -> float:
    """First time the moment of ``order`` reaches ``threshold``.

    ``threshold`` defaults to ``factor`` times the initial moment.  The
    crossing is interpolated linearly between the two records that bracket
    it; ``inf`` is returned if the moment never gets there.
    """
    t = traj.times
    m = traj.moment(order)
    level = factor * m[0] if threshold is None else threshold
    hit = np.nonzero(m >= level)[0]
    if hit.size == 0:
        return math.inf
    i = int(hit[0])
    if i == 0:
        return float(t[0])
    frac = (level - m[i - 1]) / (m[i] - m[i - 1])
    return float(t[i - 1] + frac * (t[i] - t[i - 1]))


def estimate_gelation_time(
    traj: Trajectory,
    kernel: Kernel,
    window: Optional[tuple] = None,
    method: str = "inverse_m2_linear_fit",
    threshold_factor: float = 10.0,
) -> GelationEstimate:
    """Extrapolate the blow-up time of the second moment.

    A straight line is fitted by least squares to ``(t, 1/M2(t))`` over
    ``window``; its root is the gelation estimate.  For ``K = C j^2 k^2``
    this line is exact before gelation, with slope ``-2C``.  Other kernels
    get the same fit and ``fit_r2`` tells how straight the data were.

    With ``method='threshold_crossing'`` the estimate is the first time
    ``M2`` reaches ``threshold_factor * M2(0)``; the fit is still reported.

    ``window`` defaults to ``(0.1, 0.7)`` times the analytic gelation time
    when one is known, else times the threshold-crossing time, else times
    the last recorded time.

    Raises
    ------
    ValueError
        Fewer than four samples in the window, or an unknown method.
    """
    if method not in GELATION_METHODS:
        raise ValueError(f"unknown gelation method {method!r}")
    t = traj.times
    m2 = traj.moment(2.0)
    analytic = _analytic_gel_time(kernel, float(m2[0]))
    crossing = threshold_crossing_time(traj, 2.0, threshold_factor)
    if window is None:
        ref = analytic if analytic is not None else crossing
        if not math.isfinite(ref):
            ref = float(t[-1])
        window = (0.1 * ref, 0.7 * ref)
    lo, hi = float(window[0]), float(window[1])
    eps = 1e-12 * max(1.0, abs(hi))
    sel = (t >= lo - eps) & (t <= hi + eps) & (m2 > 0)
    n = int(np.count_nonzero(sel))
    if n < 4:
        raise ValueError(f"gelation fit window ({lo:g}, {hi:g}) holds {n} samples; need at least 4")
    x = t[sel]
    y = 1.0 / m2[sel]
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res == 0.0 else 0.0
    else:
        r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    gelling = bool(slope < 0 and abs(slope) >= NON_GELLING_SLOPE)
    if method == "threshold_crossing":
        t_gel = crossing
    else:
        t_gel = float(-intercept / slope) if gelling else math.inf
    return GelationEstimate(
        t_gel=t_gel,
        method=method,
        fit_r2=r2,
        window=(lo, hi),
        analytic_prediction=analytic,
        slope=float(slope),
        intercept=float(intercept),
        gelling=gelling,
        n_samples=n,
    )


def _lambda_constant(lam: float) -> float:
    return max(2.0**lam - 2.0, 2.0 ** (2.0 - lam) * lam * (lam - 1.0))


def moment_upper_bound_constants(kernel: Kernel, state0: DensityState,
                                 lam: Optional[float] = None) -> tuple[float, float]:
    """Constants ``(C_M, C)`` of the bound ``M_lam(t) <= C_M exp(C t)``.

    For ``K = C_q (j^mu k^nu + j^nu k^mu)`` with ``lam = max(mu, nu)`` and
    ``nu_ = min(mu, nu)``::

        C_lam = max(2^lam - 2, 2^(2-lam) lam (lam-1))
        C_L   = max(M1^((2-nu_)/(lam-1)), M1)
        C     = 2 C_lam C_q M1 + 2 C_L C_lam C_q
        C_M   = 2 C_L C_lam C_q + M_lam(0)

    ``lam`` may be raised above ``max(mu, nu)`` (the kernel is then
    dominated by the one with the larger exponent) as long as
    ``lam + nu_ <= 3``.

    Raises
    ------
    ValueError
        Kernel not of product_power form, or ``lam`` outside ``(1, 2]``.
    """
    spec = kernel.spec
    if spec.family != "product_power":
        raise ValueError("upper-bound constants are defined for product_power kernels")
    mu, nu = float(spec.mu), float(spec.nu)
    big, small = max(mu, nu), min(mu, nu)
    lam = big if lam is None else float(lam)
    if lam < big:
        raise ValueError(f"lambda = {lam} is below max(mu, nu) = {big}")
    if not 1.0 < lam <= 2.0:
        raise ValueError(f"lambda must lie in (1, 2], got {lam}")
    if lam + small > 3.0:
        raise ValueError("lambda + min(mu, nu) must not exceed 3")
    c_q = float(spec.C)
    m1 = moment(state0, 1.0)
    c_lam = _lambda_constant(lam)
    c_l = max(m1 ** ((2.0 - small) / (lam - 1.0)), m1)
    C = 2.0 * c_lam * c_q * m1 + 2.0 * c_l * c_lam * c_q
    C_M = 2.0 * c_l * c_lam * c_q + moment(state0, lam)
    return C_M, C


def verify_upper_bound(traj: Trajectory, kernel: Kernel, lam: Optional[float] = None) -> BoundReport:
    """Check ``M_lam^N(t) <= C_M exp(C t)`` at every recorded time."""
    regime = classify_regime(kernel).regime
    if regime != "global_existence":
        raise ValueError(f"upper moment bound needs a global_existence kernel, got {regime}")
    spec = kernel.spec
    lam = max(spec.mu, spec.nu) if lam is None else lam
    C_M, C = moment_upper_bound_constants(kernel, traj.states[0], lam)
    t = traj.times
    sim = traj.moment(float(lam))
    bound = C_M * np.exp(C * t)
    with np.errstate(invalid="ignore", divide="ignore"):
        margin = np.where(bound > 0, (bound - sim) / np.where(bound > 0, bound, 1.0), 0.0)
    return BoundReport(
        bound_name=f"M_{lam:g} <= {C_M:.6g} exp({C:.6g} t)",
        kind="upper",
        times=t,
        simulated=sim,
        bound_value=bound,
        satisfied=sim <= bound * (1.0 + 1e-12),
        margin=margin,
        N=traj.N,
    )


def blowup_lower_bound(alpha: float, C1: float, M_alpha0: float, t):
    """``[1/M_alpha(0) - C1 alpha (alpha-1) 2^(alpha-2) t]^(-1)``; ``inf`` past the blow-up time."""
    if not 1.0 < alpha <= 2.0:
        raise ValueError("alpha must lie in (1, 2]")
    if C1 <= 0 or M_alpha0 <= 0:
        raise ValueError("C1 and M_alpha(0) must be positive")
    rate = C1 * alpha * (alpha - 1.0) * 2.0 ** (alpha - 2.0)
    denom = 1.0 / M_alpha0 - rate * np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(denom > 0, 1.0 / np.where(denom > 0, denom, 1.0), np.inf)
    return float(out) if out.ndim == 0 else out


def blowup_time(alpha: float, C1: float, M_alpha0: float) -> float:
    return 1.0 / (C1 * alpha * (alpha - 1.0) * 2.0 ** (alpha - 2.0) * M_alpha0)


def verify_blowup_bound(traj: Trajectory, alpha: float, C1: float, slack: float = 0.0,
                        t_max: Optional[float] = None) -> BoundReport:
    """Check ``M_alpha^N(t) >= blowup_lower_bound(t)`` before the blow-up time.

    The truncated moment misses whatever has moved past ``N``, so a small
    shortfall is expected; ``slack`` is the relative shortfall tolerated.
    Compare reports at two values of ``N`` to see it shrink.
    """
    t = traj.times
    sim = traj.moment(float(alpha))
    t_blow = blowup_time(alpha, C1, float(sim[0]))
    keep = t < t_blow
    if t_max is not None:
        keep &= t <= t_max + 1e-12 * max(1.0, t_max)
    t = t[keep]
    sim = sim[keep]
    bound = blowup_lower_bound(alpha, C1, float(traj.moment(float(alpha))[0]), t)
    bound = np.atleast_1d(bound)
    margin = (sim - bound) / bound
    return BoundReport(
        bound_name=f"M_{alpha:g} >= [1/M(0) - {C1:g} a(a-1) 2^(a-2) t]^-1",
        kind="lower",
        times=t,
        simulated=sim,
        bound_value=bound,
        satisfied=margin >= -slack,
        margin=margin,
        N=traj.N,
    )


def jensen_lower_bound(state: DensityState, n: int, beta: float) -> tuple[float, float, bool]:
    """Both sides of ``M_{n-2+beta} >= M_1^(-L) M_n^(1+L)``, ``L = (beta-2)/(n-1)``.

    Returns ``(lhs, rhs, holds)`` with a relative slack of 1e-12 for roundoff.
    """
    if int(n) != n or n < 2:
        raise ValueError("n must be an integer >= 2")
    if beta <= 2:
        raise ValueError("beta must exceed 2")
    m1 = moment(state, 1.0)
    if m1 <= 0:
        raise ValueError("state has zero mass")
    lam = (beta - 2.0) / (n - 1.0)
    lhs = moment(state, n - 2.0 + beta)
    # compare logarithms so tiny masses do not overflow M1^(-L)
    log_rhs = -lam * math.log(m1) + (1.0 + lam) * math.log(moment(state, float(n)))
    rhs = math.exp(log_rhs) if log_rhs < 709.0 else math.inf
    holds = math.log(lhs) >= log_rhs + math.log1p(-1e-12)
    return lhs, rhs, bool(holds)


def instantaneous_blowup_time_bound(n: int, beta: float, C: float, C2: float,
                                    Mn0: float, M10: float) -> float:
    """Upper bound on the blow-up time of ``M_n`` for ``K >= C (j^beta + k^beta)``.

    ``(Mn0 / M10)^(-L) / (C C2 (beta - 2) n)`` with ``L = (beta-2)/(n-1)``;
    ``C2`` is a lower bound on the particle number.
    """
    if beta <= 2 or C <= 0 or C2 <= 0:
        raise ValueError("need beta > 2, C > 0 and C2 > 0")
    lam = (beta - 2.0) / (n - 1.0)
    return (Mn0 / M10) ** (-lam) / (C * C2 * (beta - 2.0) * n)


def conservation_report(traj: Trajectory) -> tuple[float, float]:
    """Largest relative drift of ``M_0`` and ``M_1`` over the recorded times."""
    out = []
    for p in (0.0, 1.0):
        m = traj.moment(p)
        ref = abs(m[0])
        d = np.abs(m - m[0])
        out.append(float(np.max(d) / ref) if ref > 0 else float(np.max(d)))
    return out[0], out[1]


def _workers() -> int:
    env = os.environ.get("EDG_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _run_many(jobs, max_workers: Optional[int]):
    workers = max_workers or _workers()
    if workers == 1 or len(jobs) == 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(job) for job in jobs]
        return [fut.result() for fut in futures]


def convergence_study(
    init: InitSpec,
    kernel: Kernel,
    cfg: IntegratorConfig,
    N_list: Sequence[int],
    orders: Sequence[float] = (0.0, 1.0, 2.0),
    max_workers: Optional[int] = None,
) -> ConvergenceReport:
    """Run the same problem at several truncation sizes and compare moments.

    ``sup_diffs[N][i]`` is the largest difference of the moment of order
    ``orders[i]`` from the largest-``N`` run over the times both recorded.
    Runs execute concurrently (``EDG_THREADS`` caps the pool) and are
    merged in ascending ``N``.
    """
    N_values = sorted({int(n) for n in N_list})
    if len(N_values) < 2:
        raise ValueError("convergence study needs at least two distinct N")
    orders = tuple(float(p) for p in orders)
    jobs = [lambda n=n: integrate(make_state(init, n), kernel, cfg, orders) for n in N_values]
    trajs = dict(zip(N_values, _run_many(jobs, max_workers)))
    ref_N = N_values[-1]
    ref = trajs[ref_N]
    shared = ref.times
    for n in N_values:
        shared = np.intersect1d(shared, trajs[n].times)
    diffs = {}
    for n in N_values:
        tr = trajs[n]
        rows_ref = np.searchsorted(ref.times, shared)
        rows = np.searchsorted(tr.times, shared)
        diffs[n] = np.array([
            float(np.max(np.abs(tr.moment(p)[rows] - ref.moment(p)[rows_ref]))) if shared.size else math.nan
            for p in orders
        ])
    return ConvergenceReport(
        N_values=N_values,
        reference_N=ref_N,
        orders=orders,
        sup_diffs=diffs,
        stop_reasons={n: trajs[n].stop_reason for n in N_values},
        shared_times=shared,
    )


def instantaneous_gelation_probe(
    init: InitSpec,
    kernel: Kernel,
    cfg: IntegratorConfig,
    N_list: Sequence[int],
    factor: float = 10.0,
    order: float = 2.0,
    max_workers: Optional[int] = None,
) -> dict:
    """Time for ``M_order`` to grow by ``factor`` at each truncation size.

    Each run stops as soon as the threshold is crossed.  A crossing time
    that keeps falling as ``N`` grows is how a zero gelation time shows up
    in truncated systems.
    """
    N_values = sorted({int(n) for n in N_list})

    def run(n):
        s0 = make_state(init, n)
        level = factor * moment(s0, order)
        c = replace(cfg, blowup_moment_order=order, blowup_threshold=level)
        tr = integrate(s0, kernel, c, (0.0, 1.0, order))
        return threshold_crossing_time(tr, order, threshold=level)

    results = _run_many([lambda n=n: run(n) for n in N_values], max_workers)
    return dict(zip(N_values, results))


@dataclass(frozen=True)
class OracleCase:
    index: int
    family: str
    N: int
    lhs: float  # divergence form
    rhs: float  # sum_j h_j df_j/dt
    rel_error: float
    passed: bool


def _random_symmetric_kernel(rng: np.random.Generator, N: int) -> Kernel:
    from .kernel import FAMILIES, KernelSpec, make_kernel

    fam = str(rng.choice([f for f in FAMILIES if f != "separable_custom"]))
    zero_row = bool(rng.integers(2))
    C = float(rng.uniform(0.1, 2.0))
    if fam == "product_power":
        spec = KernelSpec(fam, C=C, mu=float(rng.uniform(0, 2)), nu=float(rng.uniform(0, 2)),
                          zero_receiver_row=zero_row)
    elif fam == "homogeneous_eta":
        spec = KernelSpec(fam, C=C, eta=float(rng.uniform(0, 2)), zero_receiver_row=zero_row)
    elif fam == "sum_power":
        spec = KernelSpec(fam, C=C, beta=float(rng.uniform(0, 4)), zero_receiver_row=zero_row)
    else:
        m = rng.random((N + 1, N + 1))
        spec = KernelSpec(fam, table=m + m.T, zero_receiver_row=zero_row)
        if zero_row:
            # keep the table symmetric after its receiver column is zeroed
            spec = KernelSpec(fam, table=_zero_first(m + m.T), zero_receiver_row=True)
    return make_kernel(spec)


def _zero_first(m: np.ndarray) -> np.ndarray:
    m = m.copy()
    m[0, :] = 0.0
    m[:, 0] = 0.0
    return m


def divergence_oracle(seed: int, cases: int, n_max: int = 256, rel_tol: float = 1e-12) -> list:
    """Compare the divergence form with ``sum_j h_j df_j/dt`` on random inputs.

    Each case draws ``N`` in ``[2, n_max]``, a symmetric kernel from one of
    the parametric families or a random symmetric table, a non-negative
    state with some empty sizes and a Gaussian weight vector.  A case
    passes when the two sides agree to ``rel_tol`` times the larger of them.
    """
    from .dynamics import divergence_form, rhs

    rng = np.random.default_rng(seed)
    out = []
    for i in range(cases):
        N = int(rng.integers(2, n_max + 1))
        kernel = _random_symmetric_kernel(rng, N)
        f = rng.random(N + 1) * (rng.random(N + 1) < 0.8)
        h = rng.normal(size=N + 1)
        state = DensityState(0.0, f)
        lhs = divergence_form(state, kernel, h)
        rhs_val = float(h @ rhs(state, kernel))
        scale = max(abs(lhs), abs(rhs_val))
        err = abs(lhs - rhs_val) / scale if scale > 0 else 0.0
        out.append(OracleCase(i, kernel.spec.family, N, lhs, rhs_val, err, err <= rel_tol))
    return out
