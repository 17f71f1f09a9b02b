"""Kinetic equation for the one-point density.

``dp/dt (x) = sum ctilde(y1, y2, x) p(y1) p(y2) - p(x) sum a1(x, y) p(y)``,
discretized on the torus grid. Two independent solvers: the Picard
integrating-factor map on short segments, and RK4 method of lines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .discretization import HierState, TorusGrid
from .errors import ContractionError, PicardConvergenceError, PreconditionError, StiffnessError
from .kernel import FactorizedKernel, RateKernel


@dataclass
class DensityPath:
    """Density ``p_t`` on a time grid; ``values[j]`` is the grid function at ``times[j]``."""

    times: np.ndarray
    values: np.ndarray
    grid: TorusGrid
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.times), self.grid.n_cells):
            raise ValueError(f"values shape {self.values.shape} does not match times and grid")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def mass(self) -> np.ndarray:
        return self.values.sum(axis=1) * self.grid.cell_measure

    def at(self, t: float) -> np.ndarray:
        """Linear interpolation in time."""
        if not self.times[0] - 1e-12 <= t <= self.times[-1] + 1e-12:
            raise ValueError(f"t = {t} outside [{self.times[0]}, {self.times[-1]}]")
        j = int(np.searchsorted(self.times, t))
        if j < len(self.times) and abs(self.times[j] - t) < 1e-12:
            return self.values[j].copy()
        j = min(max(j, 1), len(self.times) - 1)
        t0, t1 = self.times[j - 1], self.times[j]
        s = (t - t0) / (t1 - t0)
        return (1 - s) * self.values[j - 1] + s * self.values[j]

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass
class KineticConfig:
    """Parameters of the kinetic solvers.

    Parameters
    ----------
    C : float
        A-priori bound on the density.
    T : float
        Final time.
    upsilon : float, optional
        Picard segment length; defaults to ``0.9 / (2 C B)``.
    picard_tol : float
        Sup-norm stopping tolerance for the fixed-point residual.
    max_iter : int
        Iteration budget per segment.
    dt : float
        Node spacing for the Picard time grid.
    dt_rk : float
        Step for the RK path.
    rk_rtol : float
        Step-halving acceptance tolerance for the RK path.
    """

    C: float = 1.0
    T: float = 1.0
    upsilon: float | None = None
    picard_tol: float = 1e-13
    max_iter: int = 200
    dt: float = 1e-3
    dt_rk: float = 1e-2
    rk_rtol: float = 1e-9

    def __post_init__(self):
        for name in ("C", "T", "dt", "dt_rk", "picard_tol", "rk_rtol"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        if self.upsilon is not None and not self.upsilon > 0:
            raise ValueError(f"upsilon must be positive, got {self.upsilon}")

    def segment(self, kernel: RateKernel) -> float:
        B = kernel.bounds.B
        ups = self.upsilon if self.upsilon is not None else (0.9 / (2 * self.C * B) if B > 0 else self.T)
        if 2 * self.C * B * ups >= 1:
            raise ContractionError(
                f"contraction condition 2 C (c3 + c4) upsilon < 1 fails: 2*{self.C}*{B}*{ups} = {2 * self.C * B * ups}"
            )
        return ups


# ---------------------------------------------------------------- right-hand side


class _Conv:
    """Circulant matrices for the convolution form of the factorized kernel."""

    def __init__(self, k: FactorizedKernel):
        g = k.grid
        D = g.difference_table()
        w = g.cell_measure
        ab = g.convolve(k.a_tilde, k.b)
        self.Mb = k.b[D] * w
        self.Mat = k.a_tilde[D] * w
        self.Mab = ab[D] * w
        self.Ma1 = k.a1_profile[D] * w
        self.kappa = k.kappa


def _conv(k):
    c = k.__dict__.get("_kin_conv")
    if c is None:
        c = _Conv(k)
        k.__dict__["_kin_conv"] = c
    return c


def _gain_rate_direct(P, k: RateKernel):
    w = k.grid.cell_measure
    gain = np.einsum("abx,...a,...b->...x", k.ctilde, P, P) * w * w
    rate = P @ k.a1.T * w
    return gain, rate


def _gain_rate_conv(P, k: FactorizedKernel):
    c = _conv(k)
    bp = P @ c.Mb.T
    atp = P @ c.Mat.T
    gain = 2 * c.kappa * ((P * bp) @ c.Mat.T + atp * (P @ c.Mab.T))
    rate = P @ c.Ma1.T
    return gain, rate


def gain_and_rate(P, k: RateKernel, method="auto"):
    """Gain term and per-particle loss rate ``sum_y a1(x, y) p(y)``, broadcasting over leading axes."""
    P = np.asarray(P, dtype=float)
    if method == "auto":
        method = "conv" if isinstance(k, FactorizedKernel) else "direct"
    if method == "conv":
        if not isinstance(k, FactorizedKernel):
            raise PreconditionError("the convolution path needs a FactorizedKernel")
        return _gain_rate_conv(P, k)
    if method == "direct":
        return _gain_rate_direct(P, k)
    raise ValueError(f"unknown method {method!r}")


def rhs(p, k: RateKernel, method="auto") -> np.ndarray:
    """Right-hand side ``gain(p, p) - p * (a1 p)``."""
    gain, rate = gain_and_rate(p, k, method)
    return gain - np.asarray(p) * rate


def rhs_boltzmann(p, k: RateKernel, tol=1e-10) -> np.ndarray:
    """Collision form ``sum c(x, x2, y1, y2) [p(y1) p(y2) - p(x) p(x2)]``; symmetric kernels only."""
    if not k.is_symmetric(tol):
        raise PreconditionError("rhs_boltzmann requires a symmetric kernel")
    p = np.asarray(p, dtype=float)
    Q = k.grid.n_cells
    w = k.grid.cell_measure
    T = k.tensor.reshape(Q, Q, Q * Q)
    gain = (T @ np.outer(p, p).reshape(-1)).sum(axis=1) * w**3
    loss = p * ((T.sum(axis=2) @ p) * w**3)
    return gain - loss


# ---------------------------------------------------------------- Picard


def phi_map(v: DensityPath, p0, k: RateKernel, cfg: KineticConfig | None = None, method="auto") -> DensityPath:
    """Integrating-factor map on the grid of ``v``.

    ``(Phi v)_t = exp(-A_t) p0 + int_0^t exp(-(A_t - A_s)) gain(v_s) ds`` with
    ``A_t = int_0^t (a1 v_s) ds``. Using ``int_0^t exp(-(A_t - A_s)) dA_s =
    1 - exp(-A_t)`` this is evaluated as
    ``p0 + int_0^t exp(-(A_t - A_s)) [gain(v_s) - (a1 v_s) p0] ds``, both
    integrals by the trapezoid rule. The rearranged form keeps constant
    stationary data fixed exactly.
    """
    p0 = np.asarray(p0, dtype=float)
    t = v.times - v.times[0]
    dt = np.diff(t)
    gain, rate = gain_and_rate(v.values, k, method)
    A = np.concatenate([np.zeros((1, rate.shape[1])), np.cumsum(0.5 * dt[:, None] * (rate[1:] + rate[:-1]), axis=0)])
    Ashift = A - A[-1:]  # keep exponents <= 0
    g = np.exp(Ashift) * (gain - rate * p0)
    I = np.concatenate([np.zeros((1, g.shape[1])), np.cumsum(0.5 * dt[:, None] * (g[1:] + g[:-1]), axis=0)])
    out = p0 + np.exp(-Ashift) * I
    return DensityPath(v.times, out, v.grid)


def _check_initial(p0, k, C):
    p0 = np.asarray(p0, dtype=float).reshape(-1)
    if p0.shape != (k.grid.n_cells,):
        raise ValueError(f"p0 must have {k.grid.n_cells} entries")
    if p0.min() < 0 or p0.max() > C * (1 + 1e-12):
        raise ValueError(f"p0 must satisfy 0 <= p0 <= C = {C}; range is [{p0.min()}, {p0.max()}]")
    return p0


def solve_picard(p0, k: RateKernel, cfg: KineticConfig, method="auto") -> DensityPath:
    """Concatenated Picard fixed points over segments of length at most ``upsilon``."""
    p0 = _check_initial(p0, k, cfg.C)
    ups = cfg.segment(k)
    n_seg = max(1, math.ceil(cfg.T / ups - 1e-12))
    L = cfg.T / n_seg
    m = max(1, math.ceil(L / cfg.dt - 1e-12))
    local = np.linspace(0.0, L, m + 1)
    times = [np.array([0.0])]
    values = [p0[None, :]]
    iters, residuals = [], []
    start = p0
    for s in range(n_seg):
        tt = s * L + local
        v = DensityPath(tt, np.tile(start, (m + 1, 1)), k.grid)
        hist = []
        if np.any(start):
            for _ in range(cfg.max_iter):
                nv = phi_map(v, start, k, cfg, method)
                res = float(np.max(np.abs(nv.values - v.values)))
                hist.append(res)
                v = nv
                if res <= cfg.picard_tol:
                    break
            else:
                raise PicardConvergenceError(
                    f"Picard iteration did not reach {cfg.picard_tol} on segment {s} in {cfg.max_iter} steps", hist
                )
        iters.append(len(hist))
        residuals.append(hist)
        times.append(tt[1:])
        values.append(v.values[1:])
        start = v.values[-1]
    return DensityPath(
        np.concatenate(times),
        np.concatenate(values),
        k.grid,
        {"solver": "picard", "segments": n_seg, "upsilon": ups, "iterations": iters, "residuals": residuals},
    )


# ---------------------------------------------------------------- RK


def _rk4_step(p, h, k, method):
    f = lambda q: rhs(q, k, method)
    k1 = f(p)
    k2 = f(p + 0.5 * h * k1)
    k3 = f(p + 0.5 * h * k2)
    k4 = f(p + h * k3)
    return p + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def fixed_step_rk(p0, k: RateKernel, T: float, n_steps: int, method="auto") -> np.ndarray:
    """Plain RK4 with ``n_steps`` equal steps; returns ``p_T``."""
    p = np.asarray(p0, dtype=float).copy()
    h = T / n_steps
    for _ in range(n_steps):
        p = _rk4_step(p, h, k, method)
    return p


def solve_rk(p0, k: RateKernel, cfg: KineticConfig, method="auto", max_depth=10) -> DensityPath:
    """RK4 method of lines with step-halving error control.

    Each output step is compared with two half steps; the half-step result
    is kept, and steps whose estimate exceeds ``rk_rtol`` are split.
    """
    p0 = _check_initial(p0, k, cfg.C)
    n = max(1, math.ceil(cfg.T / cfg.dt_rk - 1e-12))
    h = cfg.T / n
    times = np.linspace(0.0, cfg.T, n + 1)
    vals = [p0.copy()]
    worst = 0.0
    splits = 0

    def advance(p, hh, depth):
        nonlocal worst, splits
        full = _rk4_step(p, hh, k, method)
        half = _rk4_step(_rk4_step(p, 0.5 * hh, k, method), 0.5 * hh, k, method)
        err = float(np.max(np.abs(half - full))) / 15.0
        if err <= cfg.rk_rtol * max(1.0, float(np.max(np.abs(half)))):
            worst = max(worst, err)
            return half
        if depth >= max_depth:
            raise StiffnessError(f"step rejected {max_depth} times (estimate {err:.3g})")
        splits += 1
        return advance(advance(p, 0.5 * hh, depth + 1), 0.5 * hh, depth + 1)

    p = p0.copy()
    for _ in range(n):
        p = advance(p, h, 0)
        vals.append(p)
    return DensityPath(times, np.array(vals), k.grid, {"solver": "rk4", "error_estimate": worst, "splits": splits})


def richardson_order(p0, k: RateKernel, T: float, n_steps: int, method="auto") -> float:
    """Observed order from runs with ``n``, ``2n`` and ``4n`` steps."""
    y1 = fixed_step_rk(p0, k, T, n_steps, method)
    y2 = fixed_step_rk(p0, k, T, 2 * n_steps, method)
    y4 = fixed_step_rk(p0, k, T, 4 * n_steps, method)
    return float(np.log2(np.max(np.abs(y1 - y2)) / np.max(np.abs(y2 - y4))))


# ---------------------------------------------------------------- dual operator


def w_star(k_state: HierState, kernel: RateKernel) -> HierState:
    """Dual of the lower-diagonal operator, mapping level ``m + 1`` to level ``m``.

    ``(W* k)(eta) = sum over y in eta of [sum_{u,v} ctilde(u, v, y) k(eta - y + {u, v})
    - sum_v a1(y, v) k(eta + v)]``. Output levels ``0..N_max - 1``.
    """
    g = kernel.grid
    Q, w = g.n_cells, g.cell_measure
    ct = kernel.ctilde.reshape(Q * Q, Q) * w * w
    a1 = kernel.a1 * w
    arrs = [np.array(0.0)]
    for m in range(1, k_state.N_max):
        K = k_state.arrays[m + 1]
        base = K.reshape(Q ** (m - 1), Q * Q) @ ct
        base = base.reshape((Q,) * m)
        out = np.zeros((Q,) * m)
        for i in range(m):
            out += np.moveaxis(base, -1, i)
            X = np.moveaxis(K, i, -2)
            out -= np.moveaxis((X * a1).sum(axis=-1), -1, i)
        arrs.append(out)
    return HierState(g, tuple(arrs), "correlation")


def invariants(path: DensityPath) -> list:
    """Rows ``(t, mass, min, max)`` per node."""
    m = path.mass()
    return [(float(t), float(m[j]), float(path.values[j].min()), float(path.values[j].max()))
            for j, t in enumerate(path.times)]
