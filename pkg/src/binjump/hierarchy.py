"""Two-diagonal hierarchy for quasi-observables and its solvers.

Level ``n`` evolves by ``d/dt G^(n) = eps L0^(n) G^(n) + W^(n) G^(n-1)``.
``L0`` keeps the particle number and ``W`` feeds level ``n-1`` into
level ``n``, so truncation at any ``N_max`` is exact.

All operators accept arrays with arbitrary leading batch axes; the last
``n`` axes are the cell indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .discretization import HierState, LevelTensor, norm_L_C, rho
from .errors import GridMismatchError, PreconditionError
from .kernel import RateKernel

MAX_SUBSTEP_FRACTION = 0.1


class _Operators:
    """Per-kernel cache of reshaped kernel data and loss fields."""

    def __init__(self, kernel: RateKernel):
        self.kernel = kernel
        g = kernel.grid
        self.Q = g.n_cells
        w = g.cell_measure
        self.gain = np.ascontiguousarray(kernel.tensor.reshape(self.Q**2, self.Q**2) * w * w)
        self.gain_adj = np.ascontiguousarray(self.gain.T)
        self.ct = np.ascontiguousarray(kernel.ctilde.reshape(self.Q**2, self.Q) * w)
        self._loss = {}
        self._wloss = {}

    def _placed(self, a, n, i, j):
        shape = [1] * n
        shape[i] = shape[j] = self.Q
        return a.reshape(shape) if i < j else a.T.reshape(shape)

    def loss(self, n, adjoint):
        key = (n, adjoint)
        if key not in self._loss:
            a = self.kernel.a2 if adjoint else self.kernel.a1
            S = np.zeros((self.Q,) * n)
            for i in range(n):
                for j in range(i + 1, n):
                    S = S + self._placed(a, n, i, j)
            self._loss[key] = S
        return self._loss[key]

    def w_loss(self, n):
        # D_q(x) = sum over p != q of a1(x_p, x_q)
        if n not in self._wloss:
            a = self.kernel.a1
            out = []
            for q in range(n):
                D = np.zeros((self.Q,) * n)
                for p in range(n):
                    if p != q:
                        D = D + self._placed(a, n, p, q)
                out.append(D)
            self._wloss[n] = out
        return self._wloss[n]


def _ops(kernel: RateKernel) -> _Operators:
    ops = kernel.__dict__.get("_hier_ops")
    if ops is None:
        ops = _Operators(kernel)
        kernel.__dict__["_hier_ops"] = ops
    return ops


def _pair_contract(X, n, i, j, mat, Q):
    lead = X.ndim - n
    ai, aj = lead + i, lead + j
    Xm = np.moveaxis(X, (ai, aj), (-2, -1))
    shp = Xm.shape
    Y = (Xm.reshape(-1, Q * Q) @ mat.T).reshape(shp)
    return np.moveaxis(Y, (-2, -1), (ai, aj))


def _L0(X, n, ops: _Operators, adjoint=False):
    if n < 2:
        return np.zeros_like(X)
    mat = ops.gain_adj if adjoint else ops.gain
    out = -ops.loss(n, adjoint) * X
    for i in range(n):
        for j in range(i + 1, n):
            out += _pair_contract(X, n, i, j, mat, ops.Q)
    return out


def _W(Xprev, n, ops: _Operators):
    """Ordered-pair form of the lower-diagonal operator, level ``n-1`` -> ``n``.

    ``Xprev`` must be symmetric in its last ``n-1`` axes.
    """
    Q = ops.Q
    lead = Xprev.ndim - (n - 1)
    if n < 2:
        return np.zeros(Xprev.shape[:lead] + (Q,) * n)
    # gain: sum_y ctilde(x_p, x_q, y) G(rest, y) h^d, one contraction for all pairs
    base = (Xprev @ ops.ct.T).reshape(Xprev.shape[:-1] + (Q, Q))
    out = np.zeros(Xprev.shape[:lead] + (Q,) * n)
    D = ops.w_loss(n)
    for q in range(n):
        for p in range(n):
            if p != q:
                out += np.moveaxis(base, (-2, -1), (lead + p, lead + q))
        out -= D[q] * np.expand_dims(Xprev, lead + q)
    return out


def _unwrap(G, n, kernel):
    if isinstance(G, LevelTensor):
        if G.grid != kernel.grid:
            raise GridMismatchError(f"tensor grid {G.grid} != kernel grid {kernel.grid}")
        if G.n != n:
            raise ValueError(f"expected a level-{n} tensor, got level {G.n}")
        return G.values, True
    return np.asarray(G, dtype=float), False


def _wrap(values, kernel, as_tensor):
    return LevelTensor(kernel.grid, values) if as_tensor else values


def apply_L0(n: int, G_n, k: RateKernel):
    """Number-preserving part ``L0^(n)``; zero for ``n < 2``."""
    X, wrapped = _unwrap(G_n, n, k)
    return _wrap(_L0(X, n, _ops(k)), k, wrapped)


def apply_L0_adjoint(n: int, R_n, k: RateKernel):
    """Adjoint of ``L0^(n)`` under the level pairing: swapped-kernel gain minus ``sum a2``."""
    X, wrapped = _unwrap(R_n, n, k)
    return _wrap(_L0(X, n, _ops(k), adjoint=True), k, wrapped)


def apply_W(n: int, G_prev, k: RateKernel):
    """Lower-diagonal operator ``W^(n)`` applied to a symmetric level ``n-1`` tensor.

    Implements the symmetric ordered-pair form: for every ordered pair
    ``(p, q)`` of positions, ``sum_y ctilde(x_p, x_q, y) G(x without x_p, x_q, plus y)``
    minus ``a1(x_p, x_q) G(x without x_q)``.
    """
    if isinstance(G_prev, LevelTensor):
        if G_prev.grid != k.grid:
            raise GridMismatchError(f"tensor grid {G_prev.grid} != kernel grid {k.grid}")
        return LevelTensor(k.grid, _W(G_prev.values, n, _ops(k)))
    return _W(np.asarray(G_prev, dtype=float), n, _ops(k))


def L0_bound(n: int, k: RateKernel) -> float:
    b = k.bounds
    return n * (n - 1) / 2 * (b.c1 + b.c2)


def W_bound(n: int, k: RateKernel) -> float:
    return n * (n - 1) * k.bounds.B


# ---------------------------------------------------------------- semigroup


def n_substeps(n, tau, k, eps=1.0, fraction=0.025) -> int:
    """Number of RK4 substeps for ``exp(tau eps L0^(n))``.

    Each substep is at most ``fraction / (A n (n-1))`` in scaled time.
    """
    if not 0 < fraction <= MAX_SUBSTEP_FRACTION:
        raise ValueError(f"substep fraction must lie in (0, {MAX_SUBSTEP_FRACTION}], got {fraction}")
    A = k.bounds.A
    s = eps * tau * A * n * (n - 1)
    if n < 2 or s == 0:
        return 0
    return max(1, math.ceil(s / fraction - 1e-12))


def _rk4(X, n, ops, h, m, adjoint=False):
    L = lambda Y: _L0(Y, n, ops, adjoint)
    for _ in range(m):
        k1 = L(X)
        k2 = L(X + 0.5 * h * k1)
        k3 = L(X + 0.5 * h * k2)
        k4 = L(X + h * k3)
        X = X + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return X


def step_semigroup(n, G_n, tau, k: RateKernel, eps=1.0, fraction=0.025, adjoint=False):
    """Approximate ``exp(tau eps L0^(n)) G`` (or the adjoint) by classical RK4."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    X, wrapped = _unwrap(G_n, n, k)
    m = n_substeps(n, tau, k, eps, fraction)
    if m:
        X = _rk4(X, n, _ops(k), eps * tau / m, m, adjoint)
    else:
        X = X.copy()
    return _wrap(X, k, wrapped)


def dense_L0_matrix(n, k: RateKernel, adjoint=False) -> np.ndarray:
    """Dense matrix of ``L0^(n)`` acting on flattened level-``n`` arrays."""
    Q = k.grid.n_cells
    size = Q**n
    E = np.eye(size).reshape((size,) + (Q,) * n)
    cols = _L0(E, n, _ops(k), adjoint)
    return cols.reshape(size, size).T


def semigroup_expm(n, G_n, tau, k: RateKernel, eps=1.0, adjoint=False):
    """Matrix-exponential oracle for ``exp(tau eps L0^(n))``; practical for ``Q^n <= 4096``."""
    X, wrapped = _unwrap(G_n, n, k)
    shape = X.shape
    size = k.grid.n_cells**n
    if n < 2 or tau * eps == 0:
        return _wrap(X.copy(), k, wrapped)
    flat = X.reshape(-1, size).T
    if size <= 1024:
        Mx = dense_L0_matrix(n, k, adjoint)
        out = scipy.linalg.expm(tau * eps * Mx) @ flat
    else:
        ops = _ops(k)
        op = scipy.sparse.linalg.LinearOperator(
            (size, size),
            matvec=lambda v: _L0(v.reshape((k.grid.n_cells,) * n), n, ops, adjoint).reshape(-1),
            rmatvec=lambda v: _L0(v.reshape((k.grid.n_cells,) * n), n, ops, not adjoint).reshape(-1),
            dtype=float,
        )
        op = op * (tau * eps)
        out = np.column_stack(
            [scipy.sparse.linalg.expm_multiply(op, flat[:, c], traceA=_trace(n, k, adjoint) * tau * eps)
             for c in range(flat.shape[1])]
        )
    return _wrap(out.T.reshape(shape), k, wrapped)


def _trace(n, k, adjoint):
    # diagonal of L0: gain on the pair diagonal minus loss
    ops = _ops(k)
    Q = ops.Q
    diag_pair = np.diag(ops.gain).reshape(Q, Q)
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            total += diag_pair.sum() * Q ** (n - 2)
    return float(total - ops.loss(n, adjoint).sum())


def iterated_level2(G0: HierState, t: float, k: RateKernel) -> np.ndarray:
    """Level 2 from the iterated-kernel form ``V_{0,2}(t) G^(2) + V_{1,2}(t) G^(1)``.

    Computed with one exponential of an augmented matrix, independent of the
    recursive solver. A cross-check for small grids only.
    """
    Q = k.grid.n_cells
    L = dense_L0_matrix(2, k)
    f = _W(G0.arrays[1], 2, _ops(k)).reshape(-1)
    aug = np.zeros((Q * Q + 1, Q * Q + 1))
    aug[:-1, :-1] = L
    aug[:-1, -1] = f
    v = np.concatenate([G0.arrays[2].reshape(-1), [1.0]])
    return (scipy.linalg.expm(t * aug) @ v)[:-1].reshape(Q, Q)


# ---------------------------------------------------------------- solvers


@dataclass
class HierSolverConfig:
    """Numerical parameters of the hierarchy solvers.

    Parameters
    ----------
    N_max : int
        Truncation level.
    dt : float
        Upper bound on the Volterra time step; the grid is refined so that
        the monitoring times fall on nodes.
    substep_fraction : float
        RK4 substeps satisfy ``eps * h <= substep_fraction / (A n (n-1))``.
    n_monitor : int
        Number of uniform monitoring times in ``[0, t]``.
    eps : float
        Scaling parameter used by :func:`solve_renormalized` defaults.
    """

    N_max: int = 3
    dt: float = 0.02
    substep_fraction: float = 0.025
    n_monitor: int = 16
    eps: float = 1.0

    def __post_init__(self):
        if not (self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if int(self.N_max) < 1:
            raise ValueError(f"N_max must be >= 1, got {self.N_max}")
        if int(self.n_monitor) < 2:
            raise ValueError(f"n_monitor must be >= 2, got {self.n_monitor}")
        if not 0 < self.substep_fraction <= MAX_SUBSTEP_FRACTION:
            raise ValueError(f"substep_fraction must lie in (0, {MAX_SUBSTEP_FRACTION}]")
        if self.eps < 0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")

    def time_grid(self, t):
        """Number of intervals ``K`` and the node indices of the monitoring times."""
        base = 2 * (self.n_monitor - 1)
        if t == 0:
            return 0, np.zeros(self.n_monitor, dtype=int)
        K = base * math.ceil(t / (base * self.dt) - 1e-12)
        return K, np.arange(self.n_monitor) * (K // (self.n_monitor - 1))


@dataclass
class NormHistory:
    """Norms monitored during a solve.

    ``level_norms[m, n]`` is the ``X_n`` norm at ``times[m]`` and
    ``bounds[m, n]`` the a-priori growth bound for that level. When a weight
    ``C`` is given, ``weighted[m]`` is the norm in ``L_rho(t, C)`` and
    ``initial_weighted`` the ``L_C`` norm of the data.
    """

    times: np.ndarray
    level_norms: np.ndarray
    bounds: np.ndarray
    C: float | None = None
    weighted: np.ndarray | None = None
    initial_weighted: float | None = None

    @property
    def contraction_margin(self):
        if self.weighted is None:
            return None
        return self.initial_weighted - self.weighted

    def rows(self):
        """Rows ``(t, n, X_n-norm, bound, weighted-norm, contraction-margin)``."""
        out = []
        for m, t in enumerate(self.times):
            for n in range(self.level_norms.shape[1]):
                wn = "" if self.weighted is None else float(self.weighted[m])
                mg = "" if self.weighted is None else float(self.contraction_margin[m])
                out.append((float(t), n, float(self.level_norms[m, n]), float(self.bounds[m, n]), wn, mg))
        return out


def growth_bound(norms0, t, B):
    """A-priori bound on ``||G_t^(n)||`` from the initial level norms."""
    N = len(norms0) - 1
    out = np.zeros(N + 1)
    out[0] = norms0[0]
    for n in range(1, N + 1):
        s = 0.0
        for kk in range(1, n + 1):
            s += (
                (t * B) ** (n - kk)
                * math.factorial(n) / (math.factorial(n - kk) * math.factorial(kk))
                * math.factorial(n - 1) / math.factorial(kk - 1)
                * norms0[kk]
            )
        out[n] = s
    return out


def _evolve(arrays0, t, k, eps, cfg: HierSolverConfig, monitor=True):
    """Core recursion. ``arrays0[n]`` may carry leading batch axes.

    Returns the final arrays and, if requested, the arrays at the
    monitoring nodes (list over monitors of list over levels).
    """
    ops = _ops(k)
    N = len(arrays0) - 1
    K, mon = cfg.time_grid(t)
    mon_arrays = [[None] * (N + 1) for _ in mon]
    for m in range(len(mon)):
        for n in (0, 1):
            if n <= N:
                mon_arrays[m][n] = arrays0[n]
    final = list(arrays0[: min(N, 1) + 1])
    if K == 0:
        for n in range(2, N + 1):
            for m in range(len(mon)):
                mon_arrays[m][n] = arrays0[n]
            final.append(arrays0[n])
        return final, (np.zeros(len(mon)), mon_arrays)
    dt = t / K
    times = mon * dt
    prev = [arrays0[1]] * (K + 1) if N >= 1 else None
    for n in range(2, N + 1):
        msub = n_substeps(n, dt, k, eps, cfg.substep_fraction)
        hsub = eps * dt / msub if msub else 0.0

        def S(X):
            return _rk4(X, n, ops, hsub, msub) if msub else X

        if all(p is prev[0] for p in prev):
            f0 = _W(prev[0], n, ops)
            f = [f0] * (K + 1)
        else:
            f = [_W(p, n, ops) for p in prev]
        G = [None] * (K + 1)
        G[0] = arrays0[n]
        for j in range(0, K, 2):
            G[j + 2] = S(S(G[j] + dt / 3 * f[j]) + 4 * dt / 3 * f[j + 1]) + dt / 3 * f[j + 2]
        if n < N:
            G[1] = S(G[0] + dt / 2 * f[0]) + dt / 2 * f[1]
            for j in range(3, K, 2):
                G[j] = S(S(S(G[j - 3] + 3 * dt / 8 * f[j - 3]) + 9 * dt / 8 * f[j - 2]) + 9 * dt / 8 * f[j - 1]) \
                    + 3 * dt / 8 * f[j]
        for m, j in enumerate(mon):
            mon_arrays[m][n] = G[j]
        final.append(G[K])
        prev = G
    return final, (times, mon_arrays)


def _run(G0: HierState, t, k, eps, cfg, C=None):
    if G0.grid != k.grid:
        raise GridMismatchError(f"state grid {G0.grid} != kernel grid {k.grid}")
    if G0.role != "quasi-observable":
        raise PreconditionError(f"solvers act on quasi-observables, got role {G0.role!r}")
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    G0 = G0.padded(cfg.N_max) if G0.N_max < cfg.N_max else G0.truncated(cfg.N_max)
    final, (times, mon) = _evolve(list(G0.arrays), t, k, eps, cfg)
    w = G0.grid.cell_measure
    N = G0.N_max
    norms0 = G0.level_norms()
    lv = np.array([[np.sum(np.abs(a)) * w**n for n, a in enumerate(levels)] for levels in mon])
    bd = np.array([growth_bound(norms0, s, k.bounds.B) for s in times])
    hist = NormHistory(times=times, level_norms=lv, bounds=bd)
    if C is not None:
        B = k.bounds.B
        hist.C = C
        hist.initial_weighted = norm_L_C(G0, C)
        hist.weighted = np.array(
            [sum(rho(s, C, B) ** n / math.factorial(n) * lv[m, n] for n in range(N + 1)) for m, s in enumerate(times)]
        )
    state = HierState(G0.grid, tuple(final), "quasi-observable", {"t": t, "eps": eps})
    return state, hist, mon


def solve_forward(G0: HierState, t: float, k: RateKernel, cfg: HierSolverConfig, C=None):
    """Forward hierarchy ``L0 + W`` up to time ``t``.

    Returns
    -------
    state : HierState
        ``G_t`` truncated at ``cfg.N_max``.
    history : NormHistory
    """
    state, hist, _ = _run(G0, t, k, 1.0, cfg, C)
    return state, hist


def solve_renormalized(G0: HierState, t: float, eps: float, k: RateKernel, cfg: HierSolverConfig, C=None):
    """Renormalized hierarchy ``eps L0 + W``."""
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    state, hist, _ = _run(G0, t, k, float(eps), cfg, C)
    return state, hist


def solve_vlasov(G0: HierState, t: float, k: RateKernel, cfg: HierSolverConfig, C=None):
    """Vlasov hierarchy: only ``W``, integrated by quadrature."""
    state, hist, _ = _run(G0, t, k, 0.0, cfg, C)
    return state, hist


@dataclass
class VlasovStudyRow:
    eps: float
    error: float
    level_errors: list = field(default_factory=list)


def vlasov_convergence_study(G0: HierState, T: float, eps_list, k: RateKernel, cfg: HierSolverConfig,
                             C: float, r: float | None = None):
    """Sup-in-time distance in ``L_r`` between the ``eps`` and Vlasov solutions.

    ``r`` defaults to ``0.9 rho(T, C)`` and must satisfy ``r < rho(T, C)``.
    """
    rmax = rho(T, C, k.bounds.B)
    if r is None:
        r = 0.9 * rmax
    if not 0 < r < rmax:
        raise ValueError(f"r = {r} must lie in (0, rho(T, C) = {rmax})")
    _, _, monV = _run(G0, T, k, 0.0, cfg)
    w = G0.grid.cell_measure
    rows = []
    for eps in eps_list:
        _, _, mon = _run(G0, T, k, float(eps), cfg)
        errs = np.array([[np.sum(np.abs(a - b)) * w**n for n, (a, b) in enumerate(zip(le, lv))]
                         for le, lv in zip(mon, monV)])
        weighted = (errs * np.array([r**n / math.factorial(n) for n in range(errs.shape[1])])).sum(axis=1)
        rows.append(VlasovStudyRow(float(eps), float(weighted.max()), list(errs.max(axis=0))))
    return rows
