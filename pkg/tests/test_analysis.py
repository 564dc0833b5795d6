import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from edgrowth.analysis import (
    blowup_lower_bound,
    conservation_report,
    convergence_study,
    divergence_oracle,
    estimate_gelation_time,
    instantaneous_blowup_time_bound,
    instantaneous_gelation_probe,
    jensen_lower_bound,
    moment_upper_bound_constants,
    threshold_crossing_time,
    verify_blowup_bound,
    verify_upper_bound,
)
from edgrowth.integrator import IntegratorConfig, integrate
from edgrowth.kernel import KernelSpec, kernel_from_table, make_kernel
from edgrowth.state import DensityState, InitSpec, make_state

QUAD = make_kernel(KernelSpec("homogeneous_eta", C=1.0, eta=2.0))
LINEAR = make_kernel(KernelSpec("homogeneous_eta", C=1.0, eta=1.0))


@pytest.fixture(scope="module")
def quad_traj():
    return integrate(make_state(InitSpec(), 1024), QUAD, IntegratorConfig(t_end=0.45))


def test_gelation_quadratic(quad_traj):
    est = estimate_gelation_time(quad_traj, QUAD, (0.05, 0.35))
    assert est.analytic_prediction == 0.5
    assert est.t_gel == pytest.approx(0.5, abs=0.01)
    assert est.slope == pytest.approx(-2.0, abs=0.02)
    assert est.gelling and est.fit_r2 > 0.999999
    assert est.t_gel > est.window[0] and 0 <= est.fit_r2 <= 1
    assert est.n_samples == 31


def test_gelation_default_window(quad_traj):
    est = estimate_gelation_time(quad_traj, QUAD)
    assert est.window == pytest.approx((0.05, 0.35))
    crossing = estimate_gelation_time(quad_traj, QUAD, method="threshold_crossing", threshold_factor=8.0)
    # M2 = 1/(1-2t) reaches 8 at t = 0.4375
    assert crossing.t_gel == pytest.approx(0.4375, abs=1e-3)


def test_gelation_scaled_kernel():
    kern = make_kernel(KernelSpec("homogeneous_eta", C=2.0, eta=2.0))
    s0 = make_state(InitSpec("delta_at", amplitude=0.5, s=2), 1024)  # M2(0) = 2
    traj = integrate(s0, kern, IntegratorConfig(t_end=0.1, record_every=0.005))
    est = estimate_gelation_time(traj, kern)
    assert est.analytic_prediction == 1 / 8
    assert est.t_gel == pytest.approx(1 / 8, rel=0.02)


def test_gelation_subcritical_flagged():
    traj = integrate(make_state(InitSpec(), 512), LINEAR, IntegratorConfig(t_end=40.0, record_every=1.0))
    est = estimate_gelation_time(traj, LINEAR, (20.0, 40.0))
    assert est.analytic_prediction is None
    assert not est.gelling and math.isinf(est.t_gel)
    assert abs(est.slope) < 1e-3


def test_gelation_errors(quad_traj):
    with pytest.raises(ValueError):
        estimate_gelation_time(quad_traj, QUAD, (0.1, 0.12))
    with pytest.raises(ValueError):
        estimate_gelation_time(quad_traj, QUAD, method="guess")


def test_threshold_crossing_interpolates(quad_traj):
    t = threshold_crossing_time(quad_traj, 2.0, threshold=4.0)  # 1/(1-2t) = 4 at t = 0.375
    assert t == pytest.approx(0.375, abs=1e-3)
    assert math.isinf(threshold_crossing_time(quad_traj, 2.0, threshold=1e6))


def test_upper_bound_constants():
    s0 = make_state(InitSpec(), 64)
    kern = make_kernel(KernelSpec("product_power", C=1.0, mu=2.0, nu=1.0))
    assert moment_upper_bound_constants(kern, s0) == (5.0, 8.0)
    # lambda = 2 makes both branches of C_lambda equal 2; M1 = 1 gives C_L = 1 for any nu
    kern0 = make_kernel(KernelSpec("product_power", C=1.0, mu=2.0, nu=0.0))
    assert moment_upper_bound_constants(kern0, s0) == (5.0, 8.0)
    # independent substitution at lambda = 1.5, M1 = 2
    s2 = make_state(InitSpec("delta_at", amplitude=1.0, s=2), 64)
    k15 = make_kernel(KernelSpec("product_power", C=0.5, mu=1.5, nu=0.5))
    c_lam = max(2**1.5 - 2, 2**0.5 * 1.5 * 0.5)
    c_l = max(2.0 ** (1.5 / 0.5), 2.0)
    C_M, C = moment_upper_bound_constants(k15, s2)
    assert C == pytest.approx(2 * c_lam * 0.5 * 2 + 2 * c_l * c_lam * 0.5, rel=1e-14)
    assert C_M == pytest.approx(2 * c_l * c_lam * 0.5 + 2**1.5, rel=1e-14)


@pytest.mark.parametrize(
    "spec, lam",
    [
        (KernelSpec("product_power", mu=1.0, nu=1.0), None),
        (KernelSpec("product_power", mu=1.0, nu=1.0), 2.5),
        (KernelSpec("product_power", mu=2.0, nu=1.0), 1.5),
        (KernelSpec("product_power", mu=2.0, nu=1.5), None),
        (KernelSpec("homogeneous_eta", eta=1.0), None),
    ],
)
def test_upper_bound_constants_reject(spec, lam):
    with pytest.raises(ValueError):
        moment_upper_bound_constants(make_kernel(spec), make_state(InitSpec(), 8), lam)


def test_verify_upper_bound():
    kern = make_kernel(KernelSpec("product_power", C=1.0, mu=1.0, nu=1.0))
    traj = integrate(make_state(InitSpec(), 128), kern, IntegratorConfig(t_end=0.5))
    rep = verify_upper_bound(traj, kern, 1.5)
    assert rep.all_satisfied and rep.satisfied[0] and rep.N == 128
    assert len(rep.times) == len(rep.simulated) == len(rep.bound_value) == len(rep.margin)
    zero = integrate(DensityState(0.0, np.zeros(9)), kern, IntegratorConfig(t_end=0.1))
    assert verify_upper_bound(zero, kern, 1.5).all_satisfied
    with pytest.raises(ValueError):
        verify_upper_bound(traj, QUAD)


def test_blowup_lower_bound_values():
    assert blowup_lower_bound(2.0, 0.5, 1.0, 0.25) == pytest.approx(4 / 3)
    assert blowup_lower_bound(1.5, 1.0, 3.0, 0.0) == 3.0
    assert math.isinf(blowup_lower_bound(2.0, 1.0, 1.0, 0.5))
    vals = blowup_lower_bound(2.0, 1.0, 1.0, np.array([0.0, 0.25, 0.6]))
    assert vals[1] == 2.0 and math.isinf(vals[2])
    for bad in ((1.0, 1.0, 1.0), (2.5, 1.0, 1.0), (2.0, 0.0, 1.0), (2.0, 1.0, 0.0)):
        with pytest.raises(ValueError):
            blowup_lower_bound(*bad, 0.1)


def test_verify_blowup_bound(quad_traj):
    rep = verify_blowup_bound(quad_traj, 2.0, 0.5)
    assert rep.all_satisfied and rep.margin[0] == 0.0
    strict = verify_blowup_bound(quad_traj, 2.0, 1.0, slack=0.02, t_max=0.35)
    assert strict.all_satisfied and strict.times[-1] == pytest.approx(0.35)


def test_blowup_truncation_bias_shrinks_with_N():
    # the bound is loose for this kernel, so the truncation bias shows up as
    # margins that grow towards their untruncated values as N increases
    kern = make_kernel(KernelSpec("product_power", C=1.0, mu=2.0, nu=1.5, C1=1.0))
    cfg = IntegratorConfig(t_end=0.3, record_every=0.01)
    margins = {}
    for N in (128, 512, 2048):
        traj = integrate(make_state(InitSpec(), N), kern, cfg)
        rep = verify_blowup_bound(traj, 1.5, 1.0)
        assert rep.all_satisfied and rep.N == N
        margins[N] = rep.margin
    assert np.all(margins[512] >= margins[128] - 1e-9) and np.all(margins[2048] >= margins[512] - 1e-9)
    gap_coarse = np.max(margins[2048] - margins[128])
    gap_fine = np.max(margins[2048] - margins[512])
    assert 0 < gap_fine < gap_coarse


def test_jensen_examples():
    lhs, rhs, holds = jensen_lower_bound(make_state(InitSpec(), 10), 4, 3.5)
    assert lhs == rhs == 1.0 and holds
    f = np.zeros(11)
    f[1] = f[10] = 1.0
    lhs, rhs, holds = jensen_lower_bound(DensityState(0, f), 2, 3.0)
    assert lhs == 1 + 10**3 and rhs == pytest.approx(11 ** -1 * 101**2)
    assert holds and lhs > rhs
    with pytest.raises(ValueError):
        jensen_lower_bound(DensityState(0, [1.0, 0.0, 0.0]), 2, 3.0)
    with pytest.raises(ValueError):
        jensen_lower_bound(make_state(InitSpec(), 4), 1, 3.0)
    with pytest.raises(ValueError):
        jensen_lower_bound(make_state(InitSpec(), 4), 2, 2.0)


@settings(max_examples=200, deadline=None)
@given(
    arrays(float, st.integers(3, 40), elements=st.floats(0.0, 1e3)),
    st.integers(2, 8),
    st.floats(2.001, 5.0),
)
def test_jensen_property(f, n, beta):
    if not f[1:].any():
        f[1] = 1.0
    assert jensen_lower_bound(DensityState(0, f), n, beta)[2]


def test_instantaneous_bound_values():
    assert instantaneous_blowup_time_bound(10, 3.0, 1.0, 1.0, 1.0, 1.0) == pytest.approx(0.1)
    assert instantaneous_blowup_time_bound(100, 3.0, 1.0, 1.0, 1.0, 1.0) == pytest.approx(0.01)
    assert instantaneous_blowup_time_bound(2, 4.0, 1.0, 1.0, 1.0, 1.0) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        instantaneous_blowup_time_bound(2, 2.0, 1.0, 1.0, 1.0, 1.0)


def test_conservation_report():
    static = integrate(make_state(InitSpec(), 8), kernel_from_table(np.zeros((9, 9))), IntegratorConfig(t_end=1.0))
    assert conservation_report(static) == (0.0, 0.0)
    traj = integrate(make_state(InitSpec(), 256), LINEAR, IntegratorConfig(t_end=1.0))
    d0, d1 = conservation_report(traj)
    assert d0 <= 1e-7 and d1 <= 1e-7


def test_conservation_quadratic_pre_gelation(quad_traj):
    sel = quad_traj.times <= 0.35
    for p in (0.0, 1.0):
        m = quad_traj.moment(p)[sel]
        assert np.max(np.abs(m - m[0])) <= 1e-6


def test_convergence_study_subcritical():
    cfg = IntegratorConfig(t_end=1.0, record_every=0.05)
    rep = convergence_study(InitSpec(), LINEAR, cfg, [128, 16, 32, 64], max_workers=2)
    assert rep.N_values == [16, 32, 64, 128] and rep.reference_N == 128
    m2 = [rep.sup_diffs[n][2] for n in rep.N_values[:-1]]
    assert m2[0] > m2[1] > m2[2] > 0
    assert not rep.sup_diffs[128].any()
    assert set(rep.stop_reasons.values()) == {"reached_t_end"}
    serial = convergence_study(InitSpec(), LINEAR, cfg, [16, 32, 64, 128], max_workers=1)
    for n in rep.N_values:
        assert np.array_equal(rep.sup_diffs[n], serial.sup_diffs[n])


def test_convergence_study_zero_kernel_and_errors():
    zero = make_kernel(KernelSpec("homogeneous_eta", C=0.0, eta=1.0))
    rep = convergence_study(InitSpec("geometric"), zero, IntegratorConfig(t_end=0.2), [8, 16])
    assert all(not d.any() for d in rep.sup_diffs.values()) or rep.sup_diffs[8][0] < 1e-15
    with pytest.raises(ValueError):
        convergence_study(InitSpec(), zero, IntegratorConfig(), [8, 8])


def test_instantaneous_probe_decreases():
    kern = make_kernel(KernelSpec("sum_power", beta=3.0, zero_receiver_row=True))
    cfg = IntegratorConfig(t_end=1.0, dt_init=1e-8, dt_min=1e-16, record_every=1e-3)
    t_star = instantaneous_gelation_probe(InitSpec("geometric", q=0.5), kern, cfg, [64, 256, 1024])
    assert t_star[1024] < t_star[256] < t_star[64]


def test_divergence_oracle_deterministic():
    a = divergence_oracle(3, 20)
    b = divergence_oracle(3, 20)
    assert a == b and all(c.passed for c in a)
