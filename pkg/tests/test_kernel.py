import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgrowth.kernel import (
    KernelError,
    KernelSpec,
    PowerFactor,
    classify_regime,
    gelation_lower_bound,
    kernel_eval,
    kernel_from_table,
    make_kernel,
    separable_terms,
)

exponent = st.floats(0.0, 2.0, allow_nan=False)
coef = st.one_of(st.just(0.0), st.floats(1e-6, 3.0))


@st.composite
def parametric_specs(draw):
    fam = draw(st.sampled_from(["product_power", "homogeneous_eta", "sum_power"]))
    zr = draw(st.booleans())
    C = draw(coef)
    if fam == "product_power":
        return KernelSpec(fam, C=C, mu=draw(exponent), nu=draw(exponent), zero_receiver_row=zr)
    if fam == "homogeneous_eta":
        return KernelSpec(fam, C=C, eta=draw(exponent), zero_receiver_row=zr)
    return KernelSpec(fam, C=C, beta=draw(st.floats(0.0, 4.0)), zero_receiver_row=zr)


def brute(spec, j, k):
    # independent scalar formula per family
    if spec.zero_receiver_row and k == 0:
        return 0.0
    if spec.family == "product_power":
        return spec.C * (j**spec.mu * k**spec.nu + j**spec.nu * k**spec.mu)
    if spec.family == "homogeneous_eta":
        if spec.eta == 0:
            return spec.C * (0.0 if j == 0 else 1.0)
        return spec.C * float(j * k) ** spec.eta
    return spec.C * (float(j) ** spec.beta + float(k) ** spec.beta)


def test_product_power_linear():
    k = make_kernel(KernelSpec("product_power", C=1.0, mu=1.0, nu=1.0))
    assert k(3, 4) == 24.0
    assert len(k.separable.terms) == 2


def test_homogeneous_eta_zero_branch():
    k = make_kernel(KernelSpec("homogeneous_eta", C=1.0, eta=0.0))
    assert k(0, 5) == 0.0
    assert k(3, 0) == 1.0
    assert k(3, 7) == 1.0


def test_sum_power_zero_row():
    k = make_kernel(KernelSpec("sum_power", C=1.0, beta=3.0, zero_receiver_row=True))
    assert k(2, 3) == 35.0
    assert k(5, 0) == 0.0


@pytest.mark.parametrize(
    "spec, jk, value",
    [
        (KernelSpec("homogeneous_eta", eta=1.0), (2, 3), 6.0),
        (KernelSpec("product_power", mu=2.0, nu=1.0), (2, 3), 30.0),
    ],
)
def test_eval_examples(spec, jk, value):
    assert kernel_eval(make_kernel(spec), *jk) == value


def test_eval_vectorized_and_errors():
    k = make_kernel(KernelSpec("homogeneous_eta", eta=1.0))
    out = kernel_eval(k, np.arange(4)[:, None], np.arange(4)[None, :])
    assert np.array_equal(out, np.outer(np.arange(4), np.arange(4)))
    with pytest.raises(KernelError):
        kernel_eval(k, -1, 2)
    t = kernel_from_table(np.ones((3, 3)))
    with pytest.raises(KernelError):
        kernel_eval(t, 3, 0)


@pytest.mark.parametrize(
    "spec",
    [
        KernelSpec("product_power", C=-1.0, mu=1.0, nu=1.0),
        KernelSpec("product_power", mu=1.0),
        KernelSpec("homogeneous_eta"),
        KernelSpec("sum_power"),
        KernelSpec("tabulated", table=np.ones((2, 3))),
        KernelSpec("tabulated", table=-np.ones((3, 3))),
        KernelSpec("tabulated"),
        KernelSpec("no_such_family"),
    ],
)
def test_make_kernel_rejects(spec):
    with pytest.raises(KernelError):
        make_kernel(spec)


def test_missing_parameter_is_named():
    with pytest.raises(KernelError, match="nu"):
        make_kernel(KernelSpec("product_power", mu=1.0))


def test_tabulated_symmetry_flag():
    m = np.array([[0.0, 1.0, 2.0], [1.0, 3.0, 4.0], [2.0, 4.0, 5.0]])
    assert make_kernel(KernelSpec("tabulated", table=m)).symmetric
    m[1, 2] = 7.0
    k = make_kernel(KernelSpec("tabulated", table=m))
    assert not k.symmetric
    assert classify_regime(k).regime == "unknown"
    assert separable_terms(k) is None


def test_symmetry_ignores_donor_row_zero():
    k = make_kernel(KernelSpec("homogeneous_eta", eta=0.0))
    assert k.symmetric and k(0, 3) != k(3, 0)
    m = np.ones((4, 4))
    m[0, 2] = 9.0
    assert kernel_from_table(m).symmetric
    m[2, 0] = 5.0
    assert kernel_from_table(m).symmetric
    m[1, 2] = 5.0
    assert not kernel_from_table(m).symmetric


def test_tabulated_zero_row_and_immutability():
    m = np.ones((4, 4))
    k = kernel_from_table(m, zero_receiver_row=True)
    assert np.all(k.matrix(3)[:, 0] == 0.0)
    assert m[1, 0] == 1.0  # caller's array untouched


def test_separable_custom():
    terms = ((PowerFactor(1.0, 1.0), PowerFactor(1.0, 0.0)), (PowerFactor(1.0, 0.0), PowerFactor(1.0, 1.0)))
    k = make_kernel(KernelSpec("separable_custom", terms=terms))
    assert k.symmetric
    assert k(2, 5) == 7.0
    assert classify_regime(k).regime == "unknown"
    lopsided = make_kernel(KernelSpec("separable_custom", terms=terms[:1]))
    assert not lopsided.symmetric


def test_separable_term_counts():
    assert len(separable_terms(make_kernel(KernelSpec("homogeneous_eta", eta=1.5))).terms) == 1
    assert len(separable_terms(make_kernel(KernelSpec("product_power", mu=2.0, nu=1.0))).terms) == 2
    assert len(separable_terms(make_kernel(KernelSpec("sum_power", beta=3.0))).terms) == 2


@settings(max_examples=60, deadline=None)
@given(parametric_specs(), st.integers(0, 10_000), st.integers(0, 10_000))
def test_eval_matches_brute_force(spec, j, k):
    kern = make_kernel(spec)
    assert kern(j, k) == pytest.approx(brute(spec, j, k), rel=1e-13, abs=0.0)


@settings(max_examples=40, deadline=None)
@given(parametric_specs())
def test_symmetry_reconstruction_zero_row(spec):
    kern = make_kernel(spec)
    sizes = np.unique(np.concatenate([np.arange(40), np.geomspace(40, 10_000, 40).astype(int)]))
    m = kern(sizes[:, None], sizes[None, :])
    assert np.array_equal(m[1:, 1:], m[1:, 1:].T)
    rec = kern.separable.reconstruct(sizes[:, None], sizes[None, :])
    assert np.allclose(rec, m, rtol=1e-12, atol=0.0)
    if spec.zero_receiver_row:
        assert np.all(m[:, 0] == 0.0)


@pytest.mark.parametrize(
    "spec, regime",
    [
        (KernelSpec("product_power", mu=1.0, nu=1.0), "global_existence"),
        (KernelSpec("product_power", mu=2.0, nu=1.0), "global_existence"),
        (KernelSpec("product_power", mu=2.0, nu=2.0, C1=0.5), "finite_gelation"),
        (KernelSpec("product_power", mu=2.0, nu=1.5, C1=1.0), "finite_gelation"),
        (KernelSpec("product_power", mu=2.0, nu=2.0, C1=5.0), "local_existence"),
        (KernelSpec("product_power", mu=1.8, nu=1.8), "local_existence"),
        (KernelSpec("product_power", mu=2.5, nu=1.0), "unknown"),
        (KernelSpec("homogeneous_eta", eta=2.0), "finite_gelation"),
        (KernelSpec("homogeneous_eta", eta=1.0), "global_existence"),
        (KernelSpec("sum_power", beta=3.0, zero_receiver_row=True), "instantaneous_gelation"),
        (KernelSpec("sum_power", beta=3.0), "unknown"),
        (KernelSpec("sum_power", beta=1.0), "global_existence"),
    ],
)
def test_classify_regime(spec, regime):
    kern = make_kernel(spec)
    assert classify_regime(kern).regime == regime
    assert classify_regime(make_kernel(spec)) == classify_regime(kern)


def test_gelation_lower_bound_constants():
    assert gelation_lower_bound(make_kernel(KernelSpec("homogeneous_eta", eta=2.0))) == (2.0, 0.5)
    k = make_kernel(KernelSpec("product_power", mu=2.0, nu=1.5, C1=1.0))
    assert gelation_lower_bound(k) == (1.5, 1.0)
    assert gelation_lower_bound(make_kernel(KernelSpec("homogeneous_eta", eta=1.0))) is None
