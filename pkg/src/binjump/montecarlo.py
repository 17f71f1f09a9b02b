"""Gillespie simulation of finite binary-jump systems on the torus.

Positions are continuum points. Rates and destination laws are exact with
respect to the tabulated kernel: a pair in cells ``(i, j)`` jumps at rate
``a1[i, j]``, lands in cells ``(k, l)`` with probability
``c[i, j, k, l] h^(2d) / a1[i, j]`` and is placed uniformly inside them.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .discretization import TorusGrid
from .kernel import FactorizedKernel, RateKernel


@dataclass
class ParticleState:
    """Finite configuration: ``positions`` has shape ``(n, d)``."""

    positions: np.ndarray
    time: float = 0.0
    absorbed: bool = False

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        self.positions = p

    @property
    def n(self) -> int:
        return len(self.positions)


# ---------------------------------------------------------------- destination samplers


class TableSampler:
    """Destination cells from the tabulated kernel, one cached table per pair of cells."""

    def __init__(self, kernel: RateKernel):
        self.kernel = kernel
        self.Q = kernel.grid.n_cells
        self._cdf = {}

    def cdf(self, i, j):
        key = (i, j)
        c = self._cdf.get(key)
        if c is None:
            row = self.kernel.tensor[i, j].reshape(-1)
            c = np.cumsum(row)
            c = c / c[-1]
            self._cdf[key] = c
        return c

    def sample(self, i, j, rng):
        idx = int(np.searchsorted(self.cdf(i, j), rng.random(), side="right"))
        idx = min(idx, self.Q * self.Q - 1)
        return divmod(idx, self.Q)


class MixtureSampler:
    """Exact mixture decomposition of the factorized kernel.

    With probability 1/2 the roles of the two particles are swapped (the
    ``c''`` half). Then the product component ``a(x1-y1) a(x2-y2) b(x1-x2)``
    or the coupled component ``a(x1-y1) a(x2-y2) b(y1-y2)`` is chosen in
    proportion to their masses ``b`` and ``a*a~*b`` at ``x1 - x2``.
    """

    def __init__(self, kernel: FactorizedKernel):
        g = kernel.grid
        self.grid = g
        self.Q = Q = g.n_cells
        w = g.cell_measure
        self.D = g.difference_table()
        self.a_cdf = np.cumsum(kernel.a * w)
        self.a_cdf /= self.a_cdf[-1]
        aab = kernel.a1_profile / (2 * kernel.kappa) - kernel.b if kernel.kappa > 0 else np.zeros(Q)
        self.p_prod = kernel.b / np.maximum(kernel.b + aab, 1e-300)
        self._coupled = {}
        self.a = kernel.a
        self.b = kernel.b
        self._neg = g.negation()

    def coupled_cdf(self, dlt):
        c = self._coupled.get(dlt)
        if c is None:
            # weight a[k1] a[k2] b[(x1-k1)-(x2-k2)] with x1 - x2 = dlt
            k1 = np.arange(self.Q)[:, None]
            k2 = np.arange(self.Q)[None, :]
            off = self.D[self.D[dlt, k1], self._neg[k2]]
            wgt = self.a[:, None] * self.a[None, :] * self.b[off]
            c = np.cumsum(wgt.reshape(-1))
            c = c / c[-1]
            self._coupled[dlt] = c
        return c

    def sample(self, i, j, rng):
        swap = rng.random() < 0.5
        x1, x2 = (j, i) if swap else (i, j)
        dlt = int(self.D[x1, x2])
        if rng.random() < self.p_prod[dlt]:
            k1 = min(int(np.searchsorted(self.a_cdf, rng.random(), side="right")), self.Q - 1)
            k2 = min(int(np.searchsorted(self.a_cdf, rng.random(), side="right")), self.Q - 1)
        else:
            idx = min(int(np.searchsorted(self.coupled_cdf(dlt), rng.random(), side="right")), self.Q * self.Q - 1)
            k1, k2 = divmod(idx, self.Q)
        # D[x, k] is the cell of x - k
        y1, y2 = int(self.D[x1, k1]), int(self.D[x2, k2])
        # c''(i, j, y1, y2) = c'(j, i, y1, y2): y1 still goes to particle i
        return y1, y2


def default_sampler(kernel: RateKernel):
    return MixtureSampler(kernel) if isinstance(kernel, FactorizedKernel) else TableSampler(kernel)


# ---------------------------------------------------------------- dynamics


def _jitter(grid: TorusGrid, cell: int, rng) -> np.ndarray:
    m = np.array(np.unravel_index(cell, (grid.M,) * grid.d), dtype=float)
    return (m + rng.random(grid.d)) * grid.h


def _pair_rates(cells, a1):
    n = len(cells)
    iu, ju = np.triu_indices(n, 1)
    return iu, ju, a1[cells[iu], cells[ju]]


def gillespie_step(s: ParticleState, k: RateKernel, rng, sampler=None, t_max=math.inf):
    """One event: exponential waiting time, pair choice by ``a1``, destination draw.

    Returns the new state and the event ``(i, j, old_cells, new_cells)`` or
    ``None``. If the next event would fall after ``t_max`` the state is
    returned with ``time = t_max``. Zero total rate marks the state absorbed.
    """
    g = k.grid
    cells = g.cell_of(s.positions)
    if s.n < 2:
        return ParticleState(s.positions.copy(), math.inf, True), None
    iu, ju, r = _pair_rates(cells, k.a1)
    total = float(r.sum())
    if total <= 0:
        return ParticleState(s.positions.copy(), math.inf, True), None
    tnew = s.time + rng.exponential(1.0 / total)
    if tnew > t_max:
        return ParticleState(s.positions.copy(), t_max), None
    c = np.cumsum(r)
    e = min(int(np.searchsorted(c, rng.random() * c[-1], side="right")), len(r) - 1)
    i, j = int(iu[e]), int(ju[e])
    sampler = sampler or default_sampler(k)
    y1, y2 = sampler.sample(int(cells[i]), int(cells[j]), rng)
    pos = s.positions.copy()
    pos[i] = _jitter(g, y1, rng)
    pos[j] = _jitter(g, y2, rng)
    return ParticleState(pos, tnew), (i, j, (int(cells[i]), int(cells[j])), (y1, y2))


def simulate(s: ParticleState, k: RateKernel, times, rng, sampler=None, log: deque | None = None):
    """Run to each of the increasing ``times``.

    Returns the cell arrays at those times, the final state and the number
    of events.
    """
    g = k.grid
    sampler = sampler or default_sampler(k)
    snaps = []
    n_events = 0
    for t in times:
        while True:
            if s.absorbed or s.time >= t:
                break
            s2, ev = gillespie_step(s, k, rng, sampler, t_max=t)
            if ev is None:
                s = ParticleState(s2.positions, t, s2.absorbed) if s2.absorbed else s2
                break
            n_events += 1
            if log is not None:
                log.append((s2.time,) + ev)
            s = s2
        snaps.append(g.cell_of(s.positions) if s.n else np.zeros(0, dtype=np.int64))
    return snaps, s, n_events


# ---------------------------------------------------------------- initial laws


def sample_poisson_initial(p0, grid: TorusGrid, rng) -> ParticleState:
    """Poisson configuration with intensity ``p0``: Poisson counts per cell, uniform placement."""
    p0 = np.asarray(p0, dtype=float).reshape(-1)
    if np.any(p0 < 0):
        raise ValueError("intensity must be nonnegative")
    counts = rng.poisson(p0 * grid.cell_measure)
    cells = np.repeat(np.arange(grid.n_cells), counts)
    pos = np.array([_jitter(grid, c, rng) for c in cells]).reshape(-1, grid.d)
    return ParticleState(pos)


def sample_fixed_initial(q, N: int, grid: TorusGrid, rng) -> ParticleState:
    """``N`` iid particles with cell probabilities proportional to ``q``."""
    q = np.asarray(q, dtype=float).reshape(-1)
    cells = rng.choice(grid.n_cells, size=N, p=q / q.sum())
    pos = np.array([_jitter(grid, c, rng) for c in cells]).reshape(-1, grid.d)
    return ParticleState(pos)


# ---------------------------------------------------------------- ensembles


@dataclass
class Ensemble:
    """Per-replica cell counts at snapshot times, shape ``(replicas, times, Q)``."""

    grid: TorusGrid
    times: np.ndarray
    counts: np.ndarray
    seed: int
    initial_sizes: np.ndarray
    final_sizes: np.ndarray
    events: np.ndarray
    logs: list = field(default_factory=list)

    @property
    def replicas(self) -> int:
        return self.counts.shape[0]

    def subset(self, r: int) -> "Ensemble":
        return Ensemble(self.grid, self.times, self.counts[:r], self.seed, self.initial_sizes[:r],
                        self.final_sizes[:r], self.events[:r])


@dataclass
class EnsembleEstimate:
    t: float
    k1_mean: np.ndarray
    k1_se: np.ndarray
    k2_mean: np.ndarray
    k2_se: np.ndarray
    replicas: int
    seed: int


def run_ensemble(initial, k: RateKernel, replicas: int, times, seed: int, sampler=None, log_size=0) -> Ensemble:
    """Simulate independent replicas with spawned seeds.

    Parameters
    ----------
    initial : callable
        ``initial(rng) -> ParticleState``.
    times : sequence of float
        Increasing snapshot times (0 allowed).
    log_size : int
        When positive, each replica keeps its last ``log_size`` events.
    """
    g = k.grid
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0):
        raise ValueError("snapshot times must be increasing")
    sampler = sampler or default_sampler(k)
    children = np.random.SeedSequence(seed).spawn(replicas)
    counts = np.zeros((replicas, len(times), g.n_cells), dtype=np.int64)
    n0 = np.zeros(replicas, dtype=np.int64)
    n1 = np.zeros(replicas, dtype=np.int64)
    nev = np.zeros(replicas, dtype=np.int64)
    logs = []
    for r, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        s = initial(rng)
        log = deque(maxlen=log_size) if log_size else None
        snaps, s, ne = simulate(s, k, times, rng, sampler, log)
        for m, cells in enumerate(snaps):
            counts[r, m] = np.bincount(cells, minlength=g.n_cells)
        n0[r] = len(snaps[0]) if len(times) else s.n
        n1[r] = s.n
        nev[r] = ne
        if log_size:
            logs.append(list(log))
    return Ensemble(g, times, counts, seed, n0, n1, nev, logs)


def estimate_correlations(ens: Ensemble, t: float) -> EnsembleEstimate:
    """Replica means and standard errors of the one- and two-point correlation functions."""
    if t > ens.times.max() + 1e-12:
        raise ValueError(f"t = {t} is beyond the simulated horizon {ens.times.max()}")
    hits = np.nonzero(np.abs(ens.times - t) < 1e-12)[0]
    if not len(hits):
        raise ValueError(f"t = {t} is not a snapshot time")
    n = ens.counts[:, hits[0], :].astype(float)
    g = ens.grid
    w = g.cell_measure
    R = n.shape[0]
    k1 = n / w
    k2 = (n[:, :, None] * n[:, None, :] - np.einsum("ra,ab->rab", n, np.eye(g.n_cells))) / w**2
    sq = math.sqrt(R)
    return EnsembleEstimate(
        t=float(t),
        k1_mean=k1.mean(axis=0),
        k1_se=k1.std(axis=0, ddof=1) / sq if R > 1 else np.full(g.n_cells, np.inf),
        k2_mean=k2.mean(axis=0),
        k2_se=k2.std(axis=0, ddof=1) / sq if R > 1 else np.full((g.n_cells,) * 2, np.inf),
        replicas=R,
        seed=ens.seed,
    )


def pair_bin_flux(logs, grid: TorusGrid, n_coarse: int = 4):
    """Counts of jumps between coarse classes of unordered cell pairs.

    A pair of cells maps to the sorted pair of coarse bins. Returns a dict
    ``{(A, B): count}`` over observed transitions.
    """
    if grid.d != 1:
        raise ValueError("pair_bin_flux is implemented for d = 1")
    width = grid.M / n_coarse
    flux = {}
    for log in logs:
        for ev in log:
            _, _, _, old, new = ev
            A = tuple(sorted(int(c // width) for c in old))
            B = tuple(sorted(int(c // width) for c in new))
            if A != B:
                flux[(A, B)] = flux.get((A, B), 0) + 1
    return flux


def detailed_balance_z(flux) -> dict:
    """``z = (n_AB - n_BA) / sqrt(n_AB + n_BA)`` for each unordered class pair."""
    out = {}
    for (A, B), nab in flux.items():
        if (B, A) in out or (A, B) in out:
            continue
        nba = flux.get((B, A), 0)
        tot = nab + nba
        out[(A, B)] = (nab - nba) / math.sqrt(tot) if tot else 0.0
    return out
