"""Correlation functions by duality, finite-system densities and positivity checks."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .discretization import (
    C_t,
    HierState,
    LevelTensor,
    horizon,
    lp_exponent,
    norm_K_C,
    norm_L_C,
    pairing,
    rho,
)
from .errors import HorizonError
from .hierarchy import HierSolverConfig, _evolve, semigroup_expm, solve_forward, solve_renormalized, step_semigroup
from .kernel import RateKernel

MARGIN = 0.05
CLIP_TOL = 1e-12


def _minimal_C0(k0: HierState) -> float:
    c = 0.0
    for n in range(1, k0.N_max + 1):
        m = float(np.max(np.abs(k0.arrays[n]), initial=0.0))
        c = max(c, m ** (1.0 / n))
    return c


@dataclass
class FunctionalValue:
    value: float
    tail_bound: float
    C: float


class CorrelationEvolution:
    """Evolution of a correlation function through the duality pairing.

    Parameters
    ----------
    k0 : HierState
        Initial correlation function (role ``"correlation"``).
    kernel : RateKernel
    C0 : float, optional
        Scale of ``k0``. Defaults to the smallest ``C`` with
        ``|k0^(n)| <= C^n`` for all represented ``n >= 1``.
    cfg : HierSolverConfig, optional
        Solver settings; ``N_max`` is taken from ``k0``.
    closed : bool, optional
        Set when ``k0`` comes from a finite system whose levels beyond
        ``N_max`` vanish, so no truncation tail is needed.
    eps : float
        Scaling of the number-preserving part; ``0`` gives the Vlasov
        evolution.
    """

    def __init__(self, k0: HierState, kernel: RateKernel, C0=None, cfg=None, closed=None, eps=1.0):
        if k0.grid != kernel.grid:
            raise ValueError("k0 and kernel live on different grids")
        self.k0 = k0
        self.kernel = kernel
        self.C0 = float(C0) if C0 is not None else _minimal_C0(k0)
        if not self.C0 > 0:
            raise ValueError("C0 must be positive; k0 has no positive levels")
        self.B = kernel.bounds.B
        self.T = horizon(self.C0, self.B)
        base = cfg or HierSolverConfig()
        self.cfg = HierSolverConfig(
            N_max=k0.N_max, dt=base.dt, substep_fraction=base.substep_fraction, n_monitor=base.n_monitor
        )
        self.closed = bool(k0.meta.get("closed", False)) if closed is None else bool(closed)
        if eps < 0:
            raise ValueError(f"eps must be >= 0, got {eps}")
        self.eps = float(eps)

    def remaining_horizon(self, t1: float) -> float:
        """Horizon left after re-basing at time ``t1``; equals ``T - t1``."""
        return horizon(C_t(t1, self.C0, self.B), self.B)

    def margin_C(self, t: float) -> float:
        """Weight ``C`` for the data so that ``rho(t, C) > C0`` strictly."""
        if t >= self.T:
            raise HorizonError(f"t = {t} is not below the horizon T = {self.T}")
        try:
            return C_t(t * (1 + MARGIN), self.C0, self.B)
        except HorizonError as e:
            raise HorizonError(f"no admissible weight at t = {t}: t(1+{MARGIN}) reaches T = {self.T}") from e

    def _tail_factor(self, t, C):
        if t == 0 or self.closed:
            return 0.0
        q = self.C0 / rho(t, C, self.B)
        N = self.k0.N_max
        return q ** (N + 1) / (1 - q)

    def evolve_functional(self, G0: HierState, t: float) -> FunctionalValue:
        """``<<G_t, k0>>`` with the truncation tail bound."""
        C = self.margin_C(t)
        if G0.N_max > self.k0.N_max and any(np.any(a) for a in G0.arrays[self.k0.N_max + 1:]):
            raise ValueError("G0 has levels above the truncation of k0")
        G0 = G0.truncated(min(G0.N_max, self.k0.N_max))
        Gt, _ = solve_renormalized(G0, t, self.eps, self.kernel, self.cfg)
        value = pairing(Gt, self.k0)
        tail = norm_K_C(self.k0, self.C0) * norm_L_C(G0, C) * self._tail_factor(t, C)
        return FunctionalValue(value, tail, C)

    def reconstruct_k(self, t: float, n: int):
        """Cell averages of ``k_t^(n)`` for ``n`` in ``{1, 2}`` (any ``n <= N_max`` works).

        Returns the level tensor and the worst tail bound over cell tuples.
        """
        if not 1 <= n <= self.k0.N_max:
            raise ValueError(f"level n = {n} must lie in 1..{self.k0.N_max}")
        C = self.margin_C(t)
        g = self.kernel.grid
        Q, w = g.n_cells, g.cell_measure
        tuples = list(itertools.combinations_with_replacement(range(Q), n))
        Bn = len(tuples)
        N = self.k0.N_max
        arrays0 = [np.zeros((Bn,) + (Q,) * m) for m in range(N + 1)]
        for b, tup in enumerate(tuples):
            perms = set(itertools.permutations(tup))
            val = math.factorial(n) / (len(perms) * w**n)
            for p in perms:
                arrays0[n][(b,) + p] = val
        final, _ = _evolve(arrays0, t, self.kernel, self.eps, self.cfg, monitor=False)
        vals = np.zeros(Bn)
        for m in range(N + 1):
            km = self.k0.arrays[m]
            s = np.tensordot(final[m], km, axes=m) if m else final[m] * km
            vals += s * w**m / math.factorial(m)
        out = np.zeros((Q,) * n)
        for b, tup in enumerate(tuples):
            for p in set(itertools.permutations(tup)):
                out[p] = vals[b]
        tail = norm_K_C(self.k0, self.C0) * C**n * self._tail_factor(t, C)
        return LevelTensor(g, out), tail


def evolve_functional(ce: CorrelationEvolution, G0: HierState, t: float) -> FunctionalValue:
    return ce.evolve_functional(G0, t)


def reconstruct_k(ce: CorrelationEvolution, t: float, n: int):
    return ce.reconstruct_k(t, n)


# ---------------------------------------------------------------- finite systems


@dataclass
class FiniteSystemDensity:
    """Density of a finite system, levels ``0..N``, nonnegative with unit total mass.

    ``report`` records clipping performed during evolution.
    """

    R: HierState
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.R.role != "density":
            self.R = self.R.with_arrays(self.R.arrays, role="density")
        mins = [float(np.min(a)) for a in self.R.arrays]
        if min(mins) < -CLIP_TOL * max(1.0, max(float(np.max(np.abs(a))) for a in self.R.arrays)):
            raise ValueError(f"density has negative entries (min {min(mins)})")
        m = self.total_mass()
        if abs(m - 1) > 1e-10:
            raise ValueError(f"density must have unit total mass, got {m!r}")

    @property
    def grid(self):
        return self.R.grid

    @property
    def N(self):
        return self.R.N_max

    def level_masses(self) -> np.ndarray:
        w = self.grid.cell_measure
        return np.array([float(np.sum(a)) * w**n / math.factorial(n) for n, a in enumerate(self.R.arrays)])

    def total_mass(self) -> float:
        return float(self.level_masses().sum())

    @classmethod
    def fixed_number(cls, grid, q, N):
        """``N`` iid particles with one-particle density ``q`` (unit mass)."""
        q = np.asarray(q, dtype=float).reshape(-1)
        q = q / (q.sum() * grid.cell_measure)
        arrs = [np.zeros((grid.n_cells,) * n) for n in range(N + 1)]
        if N == 0:
            arrs[0] = np.array(1.0)
        else:
            arrs[N] = math.factorial(N) * lp_exponent(q, N, grid).arrays[N]
        return cls(HierState(grid, tuple(arrs), "density"))

    @classmethod
    def poissonized(cls, grid, p, N):
        """Poisson law of intensity ``p`` conditioned on at most ``N`` points."""
        e = lp_exponent(p, N, grid).arrays
        w = grid.cell_measure
        Z = sum(float(np.sum(a)) * w**n / math.factorial(n) for n, a in enumerate(e))
        return cls(HierState(grid, tuple(a / Z for a in e), "density"))

    @classmethod
    def random(cls, grid, N, rng):
        """Random symmetric positive density, normalized."""
        from .discretization import random_state

        s = random_state(grid, N, rng, role="density", positive=True)
        w = grid.cell_measure
        Z = sum(float(np.sum(a)) * w**n / math.factorial(n) for n, a in enumerate(s.arrays))
        return cls(HierState(grid, tuple(a / Z for a in s.arrays), "density"))


def evolve_density(R0: FiniteSystemDensity, t: float, kernel: RateKernel, method="rk4", fraction=0.025):
    """Evolve every level by the adjoint number-preserving semigroup.

    ``method`` is ``"rk4"`` (time stepping) or ``"expm"`` (matrix exponential).
    Negative round-off above ``-1e-12`` (relative) is clipped and reported.
    """
    if method not in ("rk4", "expm"):
        raise ValueError(f"unknown method {method!r}")
    out = []
    clipped = 0
    min_seen = 0.0
    for n, a in enumerate(R0.R.arrays):
        if n < 2 or t == 0:
            out.append(a.copy())
            continue
        if method == "rk4":
            v = step_semigroup(n, a, t, kernel, fraction=fraction, adjoint=True)
        else:
            v = semigroup_expm(n, a, t, kernel, adjoint=True)
        min_seen = min(min_seen, float(v.min()))
        tol = CLIP_TOL * max(1.0, float(np.max(np.abs(v))))
        if v.min() < -tol:
            raise ArithmeticError(f"level {n} lost nonnegativity: min {v.min()}")
        neg = v < 0
        clipped += int(neg.sum())
        v = np.where(neg, 0.0, v)
        out.append(v)
    report = {"t": t, "method": method, "clipped": clipped, "min_before_clip": min_seen}
    return FiniteSystemDensity(HierState(R0.grid, tuple(out), "density"), report)


def density_to_correlation(R: FiniteSystemDensity) -> HierState:
    """``k^(n)(x) = sum_m 1/m! sum_xi R^(n+m)(x, xi) h^(dm)``; exact for a finite system."""
    N = R.N
    w = R.grid.cell_measure
    arrs = []
    for n in range(N + 1):
        acc = np.zeros((R.grid.n_cells,) * n)
        for m in range(N - n + 1):
            a = R.R.arrays[n + m]
            if m:
                a = a.sum(axis=tuple(range(n, n + m))) * w**m
            acc = acc + a / math.factorial(m)
        arrs.append(acc)
    return HierState(R.grid, tuple(arrs), "correlation", {"closed": True})


def lenard_check(k: HierState, fs) -> float:
    """Minimum of ``<<e(f), k>>`` over test functions ``f >= -1``.

    For a genuine correlation function every value is nonnegative, since
    the K-transform of ``e(f)`` is ``prod (1 + f)``.
    """
    vals = []
    for f in fs:
        f = np.asarray(f, dtype=float)
        if np.any(f < -1):
            raise ValueError(f"test function below -1 (min {f.min()})")
        G = lp_exponent(f, k.N_max, k.grid, role="quasi-observable")
        vals.append(pairing(G, k))
    return float(min(vals))


@dataclass
class DualityRow:
    t: float
    lhs: float
    rhs: float

    @property
    def error(self):
        return abs(self.lhs - self.rhs)


def verify_duality(R0: FiniteSystemDensity, G0: HierState, times, kernel, cfg: HierSolverConfig, method="expm"):
    """Compare ``<<G0, k_t>>`` from density evolution with ``<<G_t, k0>>`` from the hierarchy."""
    k0 = density_to_correlation(R0)
    cfgN = HierSolverConfig(N_max=R0.N, dt=cfg.dt, substep_fraction=cfg.substep_fraction, n_monitor=cfg.n_monitor)
    rows = []
    for t in times:
        kt = density_to_correlation(evolve_density(R0, t, kernel, method=method))
        Gt, _ = solve_forward(G0, t, kernel, cfgN)
        rows.append(DualityRow(float(t), pairing(G0, kt), pairing(Gt, k0)))
    return rows
