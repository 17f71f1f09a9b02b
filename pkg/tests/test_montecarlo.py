import math
from collections import Counter, deque

import numpy as np
import pytest
from scipy import stats

from binjump.correlations import FiniteSystemDensity, density_to_correlation, evolve_density
from binjump.discretization import TorusGrid
from binjump.kernel import RateKernel, example_kernel
from binjump.montecarlo import (
    MixtureSampler,
    ParticleState,
    TableSampler,
    detailed_balance_z,
    estimate_correlations,
    gillespie_step,
    pair_bin_flux,
    run_ensemble,
    sample_fixed_initial,
    sample_poisson_initial,
    simulate,
)


@pytest.fixture(scope="module")
def k8():
    return example_kernel(TorusGrid(1, 1.0, 8))


def test_single_particle_absorbing(k8):
    s = ParticleState(np.array([[0.3]]))
    s2, ev = gillespie_step(s, k8, np.random.default_rng(0))
    assert ev is None and s2.absorbed and math.isinf(s2.time)
    snaps, final, n = simulate(s, k8, [0.0, 5.0], np.random.default_rng(0))
    assert n == 0 and final.n == 1


def test_count_conserved_over_a_million_steps(k8):
    rng = np.random.default_rng(1)
    s = sample_fixed_initial(np.ones(8), 4, k8.grid, rng)
    sampler = MixtureSampler(k8)
    for _ in range(10**6):
        s, ev = gillespie_step(s, k8, rng, sampler)
        assert ev is not None
    assert s.n == 4
    assert np.all((s.positions >= 0) & (s.positions < 1))


def test_pair_selection_frequencies(k8):
    g = k8.grid
    cells = np.array([0, 1, 5])
    s = ParticleState((cells[:, None] + 0.5) * g.h)
    rng = np.random.default_rng(2)
    sampler = MixtureSampler(k8)
    counts = Counter()
    n = 20000
    for _ in range(n):
        _, ev = gillespie_step(s, k8, rng, sampler)
        counts[(ev[0], ev[1])] += 1
    pairs = [(0, 1), (0, 2), (1, 2)]
    rates = np.array([k8.a1[cells[i], cells[j]] for i, j in pairs])
    obs = np.array([counts[p] for p in pairs])
    assert stats.chisquare(obs, n * rates / rates.sum()).pvalue > 0.01


@pytest.mark.parametrize("pair", [(0, 0), (1, 4), (6, 2)])
def test_mixture_sampler_matches_table(k8, pair):
    Q = 8
    rng = np.random.default_rng(3)
    ms, ts = MixtureSampler(k8), TableSampler(k8)
    n = 30000
    obs = np.zeros(Q * Q)
    for _ in range(n):
        y1, y2 = ms.sample(*pair, rng)
        obs[y1 * Q + y2] += 1
    prob = np.diff(np.concatenate([[0.0], ts.cdf(*pair)]))
    assert np.allclose(prob, k8.tensor[pair].reshape(-1) * k8.grid.cell_measure**2 / k8.a1[pair])
    keep = prob * n >= 5
    exp = prob[keep] * n
    assert stats.chisquare(obs[keep], exp * obs[keep].sum() / exp.sum()).pvalue > 1e-3


def test_table_sampler_general_kernel():
    g = TorusGrid(1, 1.0, 4)
    T = np.random.default_rng(4).random((4,) * 4)
    k = RateKernel(g, T)
    rng = np.random.default_rng(5)
    ts = TableSampler(k)
    n = 20000
    obs = np.bincount([a * 4 + b for a, b in (ts.sample(1, 3, rng) for _ in range(n))], minlength=16)
    p = T[1, 3].reshape(-1) / T[1, 3].sum()
    assert stats.chisquare(obs, n * p).pvalue > 1e-3


# ---------------------------------------------------------------- initial laws


def test_poisson_initial_laws(k8):
    g = k8.grid
    rng = np.random.default_rng(6)
    assert sample_poisson_initial(np.zeros(8), g, rng).n == 0
    p0 = 8.0 + 4.0 * np.cos(2 * np.pi * g.centers()[:, 0])
    counts = np.array([np.bincount(g.cell_of(sample_poisson_initial(p0, g, rng).positions), minlength=8)
                       for _ in range(10000)])
    tot = counts.sum(axis=1)
    mass = p0.sum() * g.cell_measure
    assert abs(tot.mean() - mass) <= 3 * tot.std(ddof=1) / 100
    mean, var = counts.mean(axis=0), counts.var(axis=0, ddof=1)
    # sample variance of a Poisson count has sd about sqrt((mu + 2 mu^2) / n)
    band = 3 * np.sqrt((mean + 2 * mean**2) / 10000)
    assert np.all(np.abs(var - mean) <= band)


def test_poisson_estimates_at_time_zero(k8):
    g = k8.grid
    rho = 6.0
    ens = run_ensemble(lambda r: sample_poisson_initial(np.full(8, rho), g, r), k8, 4000, [0.0], seed=7)
    e = estimate_correlations(ens, 0.0)
    z1 = (e.k1_mean - rho) / e.k1_se
    z2 = (e.k2_mean - rho**2) / e.k2_se
    assert np.mean(np.abs(z1) <= 3) >= 0.85 and np.mean(np.abs(z2) <= 3) >= 0.95


def test_fixed_particles_against_density_oracle(k8):
    g = k8.grid
    q = 1 + 0.6 * np.cos(2 * np.pi * g.centers()[:, 0])
    ens = run_ensemble(lambda r: sample_fixed_initial(q, 3, g, r), k8, 6000, [0.0, 0.5], seed=8)
    e = estimate_correlations(ens, 0.5)
    k1 = density_to_correlation(evolve_density(FiniteSystemDensity.fixed_number(g, q, 3), 0.5, k8)).arrays[1]
    z = (e.k1_mean - k1) / e.k1_se
    assert np.max(np.abs(z)) <= 3.5
    assert np.all(ens.initial_sizes == 3) and np.all(ens.final_sizes == 3)


def test_homogeneous_poisson_time_invariance(k8):
    g = k8.grid
    ens = run_ensemble(lambda r: sample_poisson_initial(np.full(8, 6.0), g, r), k8, 2000, [0.0, 0.5, 1.0], seed=9)
    z = []
    for t in (0.5, 1.0):
        e = estimate_correlations(ens, t)
        z.append((e.k1_mean - 6.0) / e.k1_se)
    z = np.concatenate(z)
    assert stats.chi2.sf(np.sum(z**2), len(z)) > 1e-3


def test_seeded_determinism(k8):
    g = k8.grid
    init = lambda r: sample_fixed_initial(np.ones(8), 4, g, r)  # noqa: E731
    a = run_ensemble(init, k8, 20, [0.0, 1.0], seed=10, log_size=50)
    b = run_ensemble(init, k8, 20, [0.0, 1.0], seed=10, log_size=50)
    c = run_ensemble(init, k8, 20, [0.0, 1.0], seed=11, log_size=50)
    assert a.logs == b.logs and np.array_equal(a.counts, b.counts)
    assert a.logs != c.logs


def test_standard_error_scaling(k8):
    g = k8.grid
    init = lambda r: sample_poisson_initial(np.full(8, 6.0), g, r)  # noqa: E731
    ens = run_ensemble(init, k8, 4000, [0.2], seed=12)
    big = estimate_correlations(ens, 0.2).k1_se.mean()
    small = estimate_correlations(ens.subset(1000), 0.2).k1_se.mean()
    assert big / small == pytest.approx(0.5, rel=0.2)


def test_detailed_balance(k8):
    g = k8.grid
    rng = np.random.default_rng(13)
    log = deque(maxlen=None)
    s = sample_poisson_initial(np.full(8, 5.0), g, rng)
    simulate(s, k8, [30.0], rng, log=log)
    z = detailed_balance_z(pair_bin_flux([list(log)], g, n_coarse=2))
    assert len(z) > 0
    vals = np.array(list(z.values()))
    assert np.all(np.abs(vals) <= 3.5) and np.mean(np.abs(vals) <= 3) >= 0.9


def test_estimate_errors(k8):
    ens = run_ensemble(lambda r: sample_fixed_initial(np.ones(8), 2, k8.grid, r), k8, 5, [0.0, 0.5], seed=0)
    with pytest.raises(ValueError):
        estimate_correlations(ens, 1.0)
    with pytest.raises(ValueError):
        estimate_correlations(ens, 0.25)
