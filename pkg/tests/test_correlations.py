import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binjump.correlations import (
    CorrelationEvolution,
    FiniteSystemDensity,
    density_to_correlation,
    evolve_density,
    lenard_check,
    verify_duality,
)
from binjump.discretization import HierState, TorusGrid, lp_exponent, norm_K_C, pairing, random_state
from binjump.errors import HorizonError
from binjump.hierarchy import HierSolverConfig
from binjump.kernel import example_kernel
from binjump.kinetic import KineticConfig, solve_rk


@pytest.fixture(scope="module")
def sys8():
    g = TorusGrid(1, 1.0, 8)
    k = example_kernel(g)
    r = np.random.default_rng(21)
    R0 = FiniteSystemDensity.random(g, 2, r)
    G0 = random_state(g, 2, r)
    return g, k, R0, G0


def test_functional_at_time_zero(sys8):
    g, k, R0, G0 = sys8
    k0 = lp_exponent(np.full(8, 0.4), 2, g)
    ce = CorrelationEvolution(k0, k)
    fv = ce.evolve_functional(G0, 0.0)
    assert fv.value == pytest.approx(pairing(G0, k0), abs=1e-14)
    assert fv.tail_bound == 0.0


def test_functional_matches_density_oracle(sys8):
    g, k, R0, G0 = sys8
    k0 = density_to_correlation(R0)
    ce = CorrelationEvolution(k0, k, cfg=HierSolverConfig(dt=0.01))
    assert ce.closed
    for frac in (0.2, 0.6):
        t = frac * ce.T
        fv = ce.evolve_functional(G0, t)
        kt = density_to_correlation(evolve_density(R0, t, k, method="expm"))
        assert fv.tail_bound == 0.0
        assert abs(fv.value - pairing(G0, kt)) <= 1e-6


def test_duality_identity(sys8):
    g, k, R0, G0 = sys8
    T = CorrelationEvolution(density_to_correlation(R0), k).T
    for row in verify_duality(R0, G0, [0.1, 0.5 * T, 0.9 * T], k, HierSolverConfig(N_max=2, dt=0.005)):
        assert row.error <= 1e-8


def test_horizon_law_and_margin(sys8):
    g, k, _, _ = sys8
    ce = CorrelationEvolution(lp_exponent(np.full(8, 0.5), 3, g), k)
    assert ce.T == pytest.approx(1 / (k.bounds.B * 0.5))
    for t1 in (0.1, 0.4, 0.9):
        assert ce.remaining_horizon(t1) == pytest.approx(ce.T - t1)
    assert ce.margin_C(0.3) > 0
    with pytest.raises(HorizonError):
        ce.margin_C(ce.T)
    with pytest.raises(HorizonError):
        ce.margin_C(0.96 * ce.T)


def test_reconstruct_at_time_zero(sys8):
    g, k, _, _ = sys8
    k0 = random_state(g, 3, np.random.default_rng(4), role="correlation", positive=True)
    ce = CorrelationEvolution(k0, k)
    for n in (1, 2):
        lt, tail = ce.reconstruct_k(0.0, n)
        assert np.allclose(lt.values, k0.arrays[n], atol=1e-12)
        assert tail == 0.0


def test_homogeneous_poisson_invariant(sys8):
    g, k, _, _ = sys8
    k0 = lp_exponent(np.full(8, 0.45), 3, g)
    ce = CorrelationEvolution(k0, k, cfg=HierSolverConfig(dt=0.02))
    for frac in (0.2, 0.5):
        k1, _ = ce.reconstruct_k(frac * ce.T, 1)
        assert np.allclose(k1.values, 0.45, atol=1e-10)


def test_norm_decay_of_reconstructed_levels(sys8):
    g, k, _, _ = sys8
    x = g.centers()[:, 0]
    k0 = lp_exponent(0.3 + 0.1 * np.cos(2 * np.pi * x), 3, g)
    ce = CorrelationEvolution(k0, k, cfg=HierSolverConfig(dt=0.02))
    t = 0.3 * ce.T
    from binjump.discretization import C_t

    Ct = C_t(t, ce.C0, ce.B)
    base = norm_K_C(k0, ce.C0)
    for n in (1, 2):
        lt, tail = ce.reconstruct_k(t, n)
        assert np.abs(lt.values).max() * Ct**-n <= base + tail


def test_chaos_propagation_small():
    g = TorusGrid(1, 1.0, 8)
    k = example_kernel(g)
    x = g.centers()[:, 0]
    p0 = 0.3 + 0.15 * np.cos(2 * np.pi * x)
    ce = CorrelationEvolution(lp_exponent(p0, 3, g), k, cfg=HierSolverConfig(dt=0.01), eps=0.0)
    t = 0.25 * ce.T
    k1, tail1 = ce.reconstruct_k(t, 1)
    k2, tail2 = ce.reconstruct_k(t, 2)
    pt = solve_rk(p0, k, KineticConfig(C=0.5, T=t, dt_rk=t / 50)).values[-1]
    assert np.max(np.abs(k1.values - pt) / pt) <= 1e-3 + tail1
    assert np.max(np.abs(k2.values - np.outer(pt, pt)) / np.outer(pt, pt)) <= 1e-3 + tail2


# ---------------------------------------------------------------- finite systems


def test_level0_density_unchanged(sys8):
    g, k, _, _ = sys8
    arrs = (np.array(1.0), np.zeros(8), np.zeros((8, 8)))
    R = FiniteSystemDensity(HierState(g, arrs, "density"))
    out = evolve_density(R, 0.7, k)
    for a, b in zip(out.R.arrays, arrs):
        assert np.array_equal(a, b)


@pytest.mark.parametrize("method", ["rk4", "expm"])
def test_density_mass_and_positivity(sys8, method):
    g, k, R0, _ = sys8
    Rt = evolve_density(R0, 0.8, k, method=method)
    assert np.allclose(Rt.level_masses(), R0.level_masses(), atol=1e-10)
    assert min(float(a.min()) for a in Rt.R.arrays) >= -1e-12
    assert Rt.report["method"] == method


def test_density_validation(g8):
    with pytest.raises(ValueError):
        FiniteSystemDensity(HierState(g8, (np.array(0.5), np.zeros(8)), "density"))
    bad = np.zeros(8)
    bad[0] = -8.0
    bad[1] = 16.0
    with pytest.raises(ValueError):
        FiniteSystemDensity(HierState(g8, (np.array(0.0), bad), "density"))


def test_single_particle_correlation(g8, rng):
    p = rng.random(8)
    p /= p.sum() * g8.cell_measure
    R = FiniteSystemDensity(HierState(g8, (np.array(0.0), p, np.zeros((8, 8))), "density"))
    k = density_to_correlation(R)
    assert np.allclose(k.arrays[1], p)
    assert not np.any(k.arrays[2])


def test_poissonized_converges_to_product():
    g = TorusGrid(1, 1.0, 4)
    p = np.array([0.2, 0.5, 0.3, 0.4])
    errs = []
    for N in (3, 6):
        k = density_to_correlation(FiniteSystemDensity.poissonized(g, p, N))
        errs.append(max(float(np.max(np.abs(k.arrays[n] - lp_exponent(p, n, g).arrays[n]))) for n in (1, 2)))
    assert errs[1] < 1e-3 and errs[1] < errs[0] / 10


def test_fixed_number_marginal(g8, rng):
    q = rng.random(8) + 0.2
    R = FiniteSystemDensity.fixed_number(g8, q, 3)
    k = density_to_correlation(R)
    qn = q / (q.sum() * g8.cell_measure)
    assert np.allclose(k.arrays[1], 3 * qn)
    assert k.arrays[1].sum() * g8.cell_measure == pytest.approx(3.0)


# ---------------------------------------------------------------- Lenard positivity


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=15, deadline=None)
def test_lenard_poisson(seed):
    g = TorusGrid(1, 1.0, 6)
    r = np.random.default_rng(seed)
    k = lp_exponent(r.random(6), 3, g)
    assert lenard_check(k, [r.random(6) * 2 for _ in range(5)]) >= 1.0


def test_lenard_evolved_finite_system(sys8):
    g, k, R0, _ = sys8
    kt = density_to_correlation(evolve_density(R0, 0.5, k, method="expm"))
    r = np.random.default_rng(8)
    fs = [r.uniform(-1, 2, 8) for _ in range(20)] + [-np.ones(8)]
    assert lenard_check(kt, fs) >= -1e-8


def test_lenard_detects_negative_density(g8):
    k1 = np.full(8, 0.3)
    k1[2] = -1.0
    k = HierState(g8, (np.array(1.0), k1), "correlation")
    f = np.zeros(8)
    f[2] = 2.0 / g8.cell_measure
    assert lenard_check(k, [f]) < 0
    with pytest.raises(ValueError):
        lenard_check(k, [np.full(8, -2.0)])
