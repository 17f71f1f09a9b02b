"""The eight acceptance checks, shared by the test suite and ``binjump verify``.

Each check returns a :class:`CriterionResult` with the measured quantities,
so failures are reported with numbers rather than hidden.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .correlations import (
    CorrelationEvolution,
    FiniteSystemDensity,
    density_to_correlation,
    evolve_density,
    verify_duality,
)
from .discretization import TorusGrid, lp_exponent, norm_L_C, random_state, symmetrize
from .hierarchy import (
    HierSolverConfig,
    L0_bound,
    W_bound,
    apply_L0,
    apply_L0_adjoint,
    apply_W,
    semigroup_expm,
    solve_forward,
    step_semigroup,
    vlasov_convergence_study,
)
from .kernel import example_kernel
from .kinetic import DensityPath, KineticConfig, phi_map, solve_picard, solve_rk
from .montecarlo import estimate_correlations, run_ensemble, sample_fixed_initial, sample_poisson_initial


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        brief = ", ".join(f"{k}={_fmt(v)}" for k, v in self.details.items())
        return f"[{status}] {self.number}. {self.name} ({self.seconds:.1f}s): {brief}"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.3g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _timed(number, name, fn, **kw):
    t0 = time.perf_counter()
    passed, details = fn(**kw)
    return CriterionResult(number, name, bool(passed), details, time.perf_counter() - t0)


def _smooth_p0(grid, base=0.3, amp=0.15):
    x = grid.centers()[:, 0]
    return base + amp * np.cos(2 * np.pi * x / grid.L)


# ---------------------------------------------------------------- 1


def _operator_bounds(M=16, n_tensors=200, seed=1, slack=1e-10):
    g = TorusGrid(1, 1.0, M)
    k = example_kernel(g)
    rng = np.random.default_rng(seed)
    Q, w = g.n_cells, g.cell_measure
    worst = {}
    ok = True
    for n in (2, 3):
        rL = rW = 0.0
        for i in range(n_tensors):
            # mix of dense signed tensors and concentrated ones, which sit near the bound
            if i % 4 == 3:
                G = np.zeros((Q,) * n)
                G[tuple(rng.integers(0, Q, n))] = 1.0
                G = symmetrize(G)
                Gp = np.zeros((Q,) * (n - 1))
                Gp[tuple(rng.integers(0, Q, n - 1))] = 1.0
                Gp = symmetrize(Gp)
            else:
                G = symmetrize(rng.standard_normal((Q,) * n))
                Gp = symmetrize(rng.standard_normal((Q,) * (n - 1)))
            nG = np.abs(G).sum() * w**n
            rL = max(rL, np.abs(apply_L0(n, G, k)).sum() * w**n / nG)
            rW = max(rW, np.abs(apply_W(n, Gp, k)).sum() * w**n / (np.abs(Gp).sum() * w ** (n - 1)))
        bL, bW = L0_bound(n, k), W_bound(n, k)
        ok &= rL <= bL * (1 + slack) and rW <= bW * (1 + slack)
        worst[f"L0_ratio_n{n}"] = rL / bL
        worst[f"W_ratio_n{n}"] = rW / bW
    return ok, worst


# ---------------------------------------------------------------- 2


def _contraction(M=16, N_max=3, C=1.0, seed=2, dt=1 / 60, slack=1e-6, n_draws=2):
    g = TorusGrid(1, 1.0, M)
    k = example_kernel(g)
    B = k.bounds.B
    t_end = 2 / (B * C)
    rng = np.random.default_rng(seed)
    cfg = HierSolverConfig(N_max=N_max, dt=dt)
    min_margin = math.inf
    ok = True
    for _ in range(n_draws):
        G0 = random_state(g, N_max, rng)
        _, hist = solve_forward(G0, t_end, k, cfg, C=C)
        ratio = hist.weighted / hist.initial_weighted
        ok &= bool(np.all(ratio <= 1 + slack)) and len(hist.times) == 16
        min_margin = min(min_margin, float(np.min(1 - ratio[1:])))
    return ok, {"t_end": t_end, "times": 16, "min_relative_margin": min_margin}


# ---------------------------------------------------------------- 3


def _semigroup_oracle(M=8, seed=3, tol=1e-8, adj_tol=1e-12):
    g = TorusGrid(1, 1.0, M)
    k = example_kernel(g)
    rng = np.random.default_rng(seed)
    Q = g.n_cells
    worst_rk = worst_adj = 0.0
    for tau in (0.1, 0.5, 1.0, 2.0):
        G = symmetrize(rng.standard_normal((Q, Q)))
        a = step_semigroup(2, G, tau, k)
        b = semigroup_expm(2, G, tau, k)
        worst_rk = max(worst_rk, np.abs(a - b).sum() / np.abs(b).sum())
        aa = step_semigroup(2, G, tau, k, adjoint=True)
        bb = semigroup_expm(2, G, tau, k, adjoint=True)
        worst_rk = max(worst_rk, np.abs(aa - bb).sum() / np.abs(bb).sum())
    for _ in range(20):
        G = symmetrize(rng.standard_normal((Q, Q)))
        R = symmetrize(rng.standard_normal((Q, Q)))
        lhs = float(np.sum(apply_L0(2, G, k) * R))
        rhs = float(np.sum(G * apply_L0_adjoint(2, R, k)))
        worst_adj = max(worst_adj, abs(lhs - rhs) / max(1.0, abs(lhs)))
    return worst_rk <= tol and worst_adj <= adj_tol, {"rk_vs_expm_rel_l1": worst_rk, "adjointness": worst_adj}


# ---------------------------------------------------------------- 4


def _duality(M=8, N=2, n_pairs=20, seed=4, tol=1e-8, dt=0.005):
    g = TorusGrid(1, 1.0, M)
    k = example_kernel(g)
    rng = np.random.default_rng(seed)
    worst = 0.0
    cfg = HierSolverConfig(N_max=N, dt=dt)
    for _ in range(n_pairs):
        R0 = FiniteSystemDensity.random(g, N, rng)
        G0 = random_state(g, N, rng)
        T = CorrelationEvolution(density_to_correlation(R0), k).T
        times = [0.1, 0.5 * T, 0.9 * T]
        rows = verify_duality(R0, G0, times, k, cfg, method="expm")
        worst = max(worst, max(r.error for r in rows))
    return worst <= tol, {"pairs": n_pairs, "max_abs_error": worst}


# ---------------------------------------------------------------- 5


def _vlasov(M=16, N_max=3, C=1.0, seed=5, dt=1 / 120):
    g = TorusGrid(1, 1.0, M)
    k = example_kernel(g)
    B = k.bounds.B
    T = 1 / (B * C)
    rng = np.random.default_rng(seed)
    G0 = random_state(g, N_max, rng)
    eps_list = [1.0, 0.5, 0.25, 0.1, 0.05]
    rows = vlasov_convergence_study(G0, T, eps_list, k, HierSolverConfig(N_max=N_max, dt=dt), C)
    errs = [r.error for r in rows]
    decreasing = all(a > b for a, b in zip(errs, errs[1:]))
    by = dict(zip(eps_list, errs))
    ratio = by[0.05] / by[0.1]
    ok = decreasing and 0.3 <= ratio <= 0.7
    return ok, {"errors": errs, "ratio_0.05/0.1": ratio, "ratio_0.5/1": by[0.5] / by[1.0],
                "ratio_0.25/0.5": by[0.25] / by[0.5]}


# ---------------------------------------------------------------- 6


def _chaos(M=16, N_max=3, dt=0.01, tol=1e-3):
    g = TorusGrid(1, 1.0, M)
    k = example_kernel(g)
    p0 = _smooth_p0(g)
    k0 = lp_exponent(p0, N_max, g)
    ce = CorrelationEvolution(k0, k, cfg=HierSolverConfig(dt=dt), eps=0.0)
    t = 0.25 * ce.T
    k1, tail1 = ce.reconstruct_k(t, 1)
    k2, tail2 = ce.reconstruct_k(t, 2)
    pt = solve_rk(p0, k, KineticConfig(C=0.5, T=t, dt_rk=t / 100)).values[-1]
    e1 = float(np.max(np.abs(k1.values - pt) / pt))
    pp = np.outer(pt, pt)
    e2 = float(np.max(np.abs(k2.values - pp) / pp))
    ok = e1 <= tol + tail1 and e2 <= tol + tail2
    return ok, {"t": t, "err_k1": e1, "tail_k1": tail1, "err_k2": e2, "tail_k2": tail2,
                "strict_k1": e1 <= tol, "strict_k2": e2 <= tol}


# ---------------------------------------------------------------- 7


def _kinetic(M=32, C=0.5, T=1.0, seed=7, dt=1e-3, n_pairs=50):
    g = TorusGrid(1, 1.0, M)
    k = example_kernel(g)
    x = g.centers()[:, 0]
    p0 = 0.3 + 0.15 * np.cos(2 * np.pi * x) + 0.04 * np.sin(6 * np.pi * x)
    cfg = KineticConfig(C=C, T=T, dt=dt, dt_rk=0.01)
    P = solve_picard(p0, k, cfg)
    R = solve_rk(p0, k, cfg)
    lo = min(P.values.min(), R.values.min())
    hi = max(P.values.max(), R.values.max())
    bound_ok = lo >= -1e-10 and hi <= C * (1 + 1e-10)
    drift = max(float(np.max(np.abs(S.mass() - S.mass()[0]) - 1e-8 * S.times)) for S in (P, R))
    agree = max(float(np.max(np.abs(P.at(t) - R.values[j]))) for j, t in enumerate(R.times))
    ups = cfg.segment(k)
    lip_bound = 2 * C * k.bounds.B * ups
    rng = np.random.default_rng(seed)
    tt = np.linspace(0, ups, 101)
    lip = 0.0
    for _ in range(n_pairs):
        v = DensityPath(tt, rng.uniform(0, C, (len(tt), g.n_cells)), g)
        u = DensityPath(tt, rng.uniform(0, C, (len(tt), g.n_cells)), g)
        q0 = rng.uniform(0, C, g.n_cells)
        num = np.max(np.abs(phi_map(v, q0, k).values - phi_map(u, q0, k).values))
        lip = max(lip, num / np.max(np.abs(v.values - u.values)))
    const = np.full(g.n_cells, 0.4)
    st = max(float(np.max(np.abs(S.values - 0.4))) for S in
             (solve_picard(const, k, cfg), solve_rk(const, k, cfg)))
    ok = bound_ok and drift <= 0 and agree <= 1e-6 and lip <= lip_bound * 1.05 and st <= 1e-12
    return ok, {"min": lo, "max": hi, "mass_drift_excess": drift, "picard_vs_rk": agree,
                "lipschitz": lip, "lipschitz_bound": lip_bound, "stationary_dev": st}


# ---------------------------------------------------------------- 8


def _montecarlo(M=16, N=3, t=0.5, replicas=20000, seed=8, rho_h=8.0, replicas_h=4000):
    g = TorusGrid(1, 1.0, M)
    k = example_kernel(g)
    x = g.centers()[:, 0]
    q = 1 + 0.6 * np.cos(2 * np.pi * x)
    ens = run_ensemble(lambda r: sample_fixed_initial(q, N, g, r), k, replicas, [0.0, t], seed)
    est = estimate_correlations(ens, t)
    R0 = FiniteSystemDensity.fixed_number(g, q, N)
    k1 = density_to_correlation(evolve_density(R0, t, k)).arrays[1]
    z = (est.k1_mean - k1) / est.k1_se
    frac = float(np.mean(np.abs(z) <= 3))
    conserved = bool(np.all(ens.initial_sizes == ens.final_sizes) and np.all(ens.counts.sum(axis=2) == N))
    # homogeneous Poisson: k1 should stay at rho
    times = [0.0, 0.25, 0.5]
    ensh = run_ensemble(lambda r: sample_poisson_initial(np.full(g.n_cells, rho_h), g, r), k, replicas_h,
                        times, seed + 1)
    conserved &= bool(np.all(ensh.initial_sizes == ensh.final_sizes))
    pvals = []
    for s in times[1:]:
        e = estimate_correlations(ensh, s)
        zz = (e.k1_mean - rho_h) / e.k1_se
        pvals.append(float(stats.chi2.sf(np.sum(zz**2), g.n_cells)))
    ok = frac >= 0.99 and conserved and min(pvals) > 1e-3
    return ok, {"frac_|z|<=3": frac, "max_|z|": float(np.max(np.abs(z))), "count_conserved": conserved,
                "poisson_invariance_p": pvals}


CRITERIA = [
    (1, "operator bounds", _operator_bounds),
    (2, "contraction in the Banach scale", _contraction),
    (3, "semigroup and adjoint oracle", _semigroup_oracle),
    (4, "duality identity", _duality),
    (5, "Vlasov convergence", _vlasov),
    (6, "chaos propagation", _chaos),
    (7, "kinetic invariants", _kinetic),
    (8, "Monte Carlo vs exact marginals", _montecarlo),
]


def run_criterion(number: int, **kw) -> CriterionResult:
    num, name, fn = CRITERIA[number - 1]
    return _timed(num, name, fn, **kw)


def run_all(numbers=None, printer=None) -> list:
    out = []
    for num, _, _ in CRITERIA:
        if numbers and num not in numbers:
            continue
        res = run_criterion(num)
        if printer:
            printer(res.line())
        out.append(res)
    return out
