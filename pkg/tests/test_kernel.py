import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binjump.discretization import TorusGrid
from binjump.errors import KernelEvaluationError
from binjump.kernel import (
    ConstantKernel,
    FactorizedKernel,
    RateKernel,
    a_fields,
    bounds,
    check_conditions,
    companion_b,
    example_kernel,
    geometric_fourier_density,
    tilde_c,
    wrapped_gaussian_density,
)


@pytest.mark.parametrize("kappa", [0.0, 0.3, 1.25])
def test_constant_kernel_closed_forms(kappa):
    g = TorusGrid(1, 1.0, 6)
    k = ConstantKernel(g, 2 * kappa)
    assert tilde_c(k, 1, 2, 3) == pytest.approx(2 * kappa)
    assert np.allclose(k.ctilde, 2 * kappa)
    a1, a2 = a_fields(k)
    assert np.allclose(a1, 2 * kappa) and np.allclose(a2, 2 * kappa)
    b = bounds(k)
    assert b.c1 == pytest.approx(2 * kappa) and b.c2 == pytest.approx(2 * kappa)
    assert b.c3 == pytest.approx(2 * kappa) and b.c4 == pytest.approx(2 * kappa)
    assert b.A == pytest.approx((b.c1 + b.c2) / 2) and b.B == pytest.approx(b.c3 + b.c4)


def test_zero_rate_gives_zero_fields(g8):
    k = FactorizedKernel.with_companion(g8, 0.0, geometric_fourier_density(g8, 0.3))
    assert not np.any(k.ctilde)
    assert k.bounds.B == 0.0


def test_factorized_primed_closed_forms(ek16):
    k = ek16
    p = k.primed()
    assert np.allclose(p.ctilde, k.ctilde_primed_closed(), atol=1e-13)
    D = k.grid.difference_table()
    assert np.allclose(p.a1, (k.a1_profile / 2)[D], atol=1e-13)
    assert np.allclose(k.a1, k.a1_closed(), atol=1e-13)


def test_factorized_tensor_matches_definition(g8):
    r = np.random.default_rng(3)
    a = r.random(8) + 0.1
    b = r.random(8) + 0.1
    b = b + b[g8.negation()]
    k = FactorizedKernel.normalized(g8, 0.7, a, b)
    A, B = k.a, k.b
    c = k.tensor
    for x1, x2, y1, y2 in r.integers(0, 8, (50, 4)):
        cp = lambda u1, u2: 0.7 * A[(u1 - y1) % 8] * A[(u2 - y2) % 8] * (B[(u1 - u2) % 8] + B[(y1 - y2) % 8])  # noqa: E731
        assert c[x1, x2, y1, y2] == pytest.approx(cp(x1, x2) + cp(x2, x1))


def test_factorized_validates_inputs(g8):
    a = geometric_fourier_density(g8, 0.3)
    with pytest.raises(ValueError):
        FactorizedKernel(g8, 0.25, a, 2 * a)
    odd = a.copy()
    odd[1] += 0.5
    odd[2] -= 0.5
    with pytest.raises(ValueError):
        FactorizedKernel(g8, 0.25, a, odd)
    with pytest.raises(KernelEvaluationError):
        FactorizedKernel(g8, -1.0, a, a)


def test_example_kernel_constants(ek16):
    b = ek16.bounds
    kappa = ek16.kappa
    assert b.c4 == pytest.approx(4 * kappa, rel=1e-12)
    assert b.c1 <= 2 * kappa * ek16.b.max() + 2 * kappa * ek16.a.max() * ek16.b.max()


def test_example_kernel_flags(ek16):
    f = ek16.flags()
    assert f == {"symmetric": True, "pair_exchange_invariant": True, "translation_invariant": True}


def test_symmetric_kernel_bounds(ek16):
    b = ek16.bounds
    assert b.c1 == pytest.approx(b.c2, rel=1e-13)
    assert b.c3 == pytest.approx(b.c4, rel=1e-13)
    assert np.allclose(b.a1_field, b.a2_field, atol=1e-14)


def test_conditions_example_kernel(ek16):
    rep = check_conditions(ek16)
    assert rep.symmetric.holds and rep.dominance.holds and rep.dominance.violation <= 1e-13
    assert rep.chr.holds and rep.chrsym.holds and rep.kinetic_ok


def test_conditions_a_equals_b_reports_violation(g16):
    a = geometric_fourier_density(g16, 0.3)
    k = FactorizedKernel(g16, 0.25, a, a)
    rep = check_conditions(k)
    assert not rep.chr.holds and rep.chr.violation > 1e-3


def test_conditions_symmetric_tabulated_dominance(g8):
    r = np.random.default_rng(1)
    T = r.random((8,) * 4)
    T = T + T.transpose(2, 3, 0, 1)
    rep = check_conditions(RateKernel(g8, T))
    assert rep.symmetric.holds and rep.dominance.holds and rep.dominance.violation <= 1e-13


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=10, deadline=None)
def test_ctilde_integrates_to_a1(seed):
    g = TorusGrid(1, 1.0, 5)
    k = RateKernel(g, np.random.default_rng(seed).random((5,) * 4))
    assert np.allclose(k.ctilde.sum(axis=2) * g.cell_measure, k.a1, rtol=1e-13)


@given(st.floats(0.05, 0.45), st.floats(0.05, 2.0), st.integers(0, 15))
@settings(max_examples=10, deadline=None)
def test_translation_invariance_of_derived_fields(r, kappa, s):
    g = TorusGrid(1, 1.0, 16)
    k = FactorizedKernel.with_companion(g, kappa, geometric_fourier_density(g, r))
    sh = (np.arange(16) + s) % 16
    assert np.allclose(k.a1[np.ix_(sh, sh)], k.a1, atol=1e-14)
    assert np.allclose(k.ctilde[np.ix_(sh, sh, sh)], k.ctilde, atol=1e-14)


def test_negative_kernel_rejected(g4):
    T = np.ones((4,) * 4)
    T[0, 1, 2, 3] = -1e-3
    with pytest.raises(KernelEvaluationError):
        RateKernel(g4, T)
    T[0, 1, 2, 3] = np.nan
    with pytest.raises(KernelEvaluationError):
        RateKernel(g4, T)


def test_from_function_and_flags(g8):
    k = RateKernel.from_function(g8, lambda x1, x2, y1, y2: (1 + np.cos(2 * np.pi * (x1 - y1)[..., 0])))
    assert k.is_translation_invariant()
    assert not k.is_pair_exchange_invariant()


def test_companion_b_properties(g16):
    a = geometric_fourier_density(g16, 0.3)
    b = companion_b(g16, a)
    w = g16.cell_measure
    assert b.sum() * w == pytest.approx(1.0)
    assert np.allclose(b, b[g16.negation()])
    aab = g16.convolve(a, g16.convolve(a[g16.negation()], b))
    assert np.allclose(2 * a, b + aab, atol=1e-12)
    with pytest.raises(ValueError):
        companion_b(g16, np.roll(a, 1))


def test_densities_normalized(g16):
    for f in (geometric_fourier_density(g16, 0.4), wrapped_gaussian_density(g16, 0.1)):
        assert f.sum() * g16.cell_measure == pytest.approx(1.0)
        assert f.min() >= 0


def test_example_kernel_fields_cached(g8):
    k = example_kernel(g8)
    assert k.a1 is k.a1 and k.tensor is k.tensor
    with pytest.raises(ValueError):
        k.tensor[0, 0, 0, 0] = 1.0


def test_companion_negative_raises(g16):
    with pytest.raises(KernelEvaluationError):
        FactorizedKernel.with_companion(g16, 0.25, geometric_fourier_density(g16, 0.6))
