"""Jump-rate kernels on the torus grid and their derived fields.

A kernel is tabulated as a 4-tensor ``c[x1, x2, y1, y2]`` over cell centres:
two particles at ``x1, x2`` jump together to ``y1, y2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .discretization import TorusGrid
from .errors import KernelEvaluationError, PreconditionError


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


def _validate(values, what="kernel"):
    bad = ~np.isfinite(values)
    if bad.any():
        cell = tuple(int(i) for i in np.argwhere(bad)[0])
        raise KernelEvaluationError(f"{what} is not finite at cell {cell}", cell)
    neg = values < 0
    if neg.any():
        cell = tuple(int(i) for i in np.argwhere(neg)[0])
        raise KernelEvaluationError(f"{what} is negative at cell {cell}: {values[cell]}", cell)


@dataclass(frozen=True)
class KernelBounds:
    """Grid suprema of the derived kernel fields.

    ``c1 = max a1``, ``c2 = max a2``, ``c3 = max_x1 sum_x2 a1 h^d`` and
    ``c4`` likewise with ``a2``. ``A = (c1 + c2) / 2`` and ``B = c3 + c4``.
    """

    c1: float
    c2: float
    c3: float
    c4: float
    a1_field: np.ndarray
    a2_field: np.ndarray

    @property
    def A(self) -> float:
        return 0.5 * (self.c1 + self.c2)

    @property
    def B(self) -> float:
        return self.c3 + self.c4


@dataclass(frozen=True)
class Verdict:
    holds: bool
    violation: float


@dataclass(frozen=True)
class ConditionReport:
    """Outcome of the structural checks of a kernel.

    ``chr`` and ``chrsym`` refer to the two one-point well-posedness
    conditions of the kinetic equation. For a factorized kernel they are
    checked on its two parts separately, otherwise on the whole kernel.
    """

    symmetric: Verdict
    dominance: Verdict
    chr: Verdict
    chrsym: Verdict
    split: bool

    @property
    def kinetic_ok(self) -> bool:
        # either the whole kernel satisfies chr, or the split does
        return (self.chr.holds and self.chrsym.holds) if self.split else (self.chr.holds or self.chrsym.holds)

    def as_dict(self) -> dict:
        return {
            name: {"holds": bool(v.holds), "violation": float(v.violation)}
            for name, v in (
                ("symmetric", self.symmetric),
                ("dominance", self.dominance),
                ("chr", self.chr),
                ("chrsym", self.chrsym),
            )
        }


class RateKernel:
    """Tabulated jump-rate kernel.

    Parameters
    ----------
    grid : TorusGrid
    values : ndarray, shape (Q, Q, Q, Q)
        Rate density ``c[x1, x2, y1, y2]``, finite and nonnegative.
    name : str, optional
    """

    kind = "tabulated"

    def __init__(self, grid: TorusGrid, values=None, name: str | None = None):
        self.grid = grid
        self.name = name or self.kind
        if values is not None:
            v = np.asarray(values, dtype=float)
            Q = grid.n_cells
            if v.shape != (Q, Q, Q, Q):
                raise ValueError(f"kernel tensor shape {v.shape}, expected {(Q,) * 4}")
            _validate(v)
            self._values = _readonly(v)

    @classmethod
    def from_function(cls, grid: TorusGrid, func, name="function") -> "RateKernel":
        """Tabulate ``func(x1, x2, y1, y2)`` on cell centres.

        ``func`` receives broadcastable arrays of shape ``(Q,1,1,1,d)`` etc.
        and must return an array broadcastable to ``(Q,)*4``.
        """
        c = grid.centers()
        Q = grid.n_cells
        x1 = c.reshape(Q, 1, 1, 1, -1)
        x2 = c.reshape(1, Q, 1, 1, -1)
        y1 = c.reshape(1, 1, Q, 1, -1)
        y2 = c.reshape(1, 1, 1, Q, -1)
        vals = np.broadcast_to(np.asarray(func(x1, x2, y1, y2), dtype=float), (Q,) * 4)
        return cls(grid, np.array(vals), name=name)

    # the tensor is built lazily by subclasses
    def _build(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def tensor(self) -> np.ndarray:
        if not hasattr(self, "_values"):
            v = self._build()
            _validate(v)
            self._values = _readonly(v)
        return self._values

    @cached_property
    def ctilde(self) -> np.ndarray:
        """``ctilde[x1, x2, y1] = sum_y2 c h^d``."""
        return _readonly(self.tensor.sum(axis=3) * self.grid.cell_measure)

    @cached_property
    def a1(self) -> np.ndarray:
        w = self.grid.cell_measure
        return _readonly(self.tensor.sum(axis=(2, 3)) * w * w)

    @cached_property
    def a2(self) -> np.ndarray:
        w = self.grid.cell_measure
        return _readonly(self.tensor.sum(axis=(0, 1)) * w * w)

    @cached_property
    def bounds(self) -> KernelBounds:
        w = self.grid.cell_measure
        a1, a2 = self.a1, self.a2
        return KernelBounds(
            c1=float(a1.max()),
            c2=float(a2.max()),
            c3=float((a1.sum(axis=1) * w).max()),
            c4=float((a2.sum(axis=1) * w).max()),
            a1_field=a1,
            a2_field=a2,
        )

    def _scale(self):
        return max(1.0, float(np.max(self.tensor)))

    def symmetry_defect(self) -> float:
        """Max of ``|c(x, y) - c(y, x)|`` under departure/arrival exchange."""
        T = self.tensor
        return float(np.max(np.abs(T - T.transpose(2, 3, 0, 1))))

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        return self.symmetry_defect() <= tol * self._scale()

    def is_pair_exchange_invariant(self, tol: float = 1e-12) -> bool:
        T = self.tensor
        d = max(np.max(np.abs(T - T.transpose(1, 0, 2, 3))), np.max(np.abs(T - T.transpose(0, 1, 3, 2))))
        return bool(d <= tol * self._scale())

    def is_translation_invariant(self, tol: float = 1e-12) -> bool:
        T = self.tensor
        g = self.grid
        # shift every argument by one cell along each axis
        for ax in range(g.d):
            step = np.zeros(g.d, dtype=np.int64)
            step[ax] = 1
            perm = g._flat(g._multi() + step)
            S = T[np.ix_(perm, perm, perm, perm)]
            if np.max(np.abs(S - T)) > tol * self._scale():
                return False
        return True

    def flags(self) -> dict:
        return {
            "symmetric": self.is_symmetric(),
            "pair_exchange_invariant": self.is_pair_exchange_invariant(),
            "translation_invariant": self.is_translation_invariant(),
        }

    def _chr_parts(self):
        """Kernels on which the two one-point conditions are checked."""
        return [(self.tensor, self.a1)], False

    def describe(self) -> dict:
        return {"kind": self.kind, "name": self.name, "grid": self.grid.describe()}


class ConstantKernel(RateKernel):
    """``c = value`` everywhere."""

    kind = "constant"

    def __init__(self, grid: TorusGrid, value: float):
        if not (np.isfinite(value) and value >= 0):
            raise KernelEvaluationError(f"constant kernel value must be finite and >= 0, got {value}")
        self.value = float(value)
        super().__init__(grid, name=f"constant({value})")

    def _build(self):
        Q = self.grid.n_cells
        return np.full((Q,) * 4, self.value)

    def describe(self):
        return {**super().describe(), "value": self.value}


def companion_b(grid: TorusGrid, a, tol: float = 1e-12) -> np.ndarray:
    """Even ``b`` with ``2a = b + a*a~*b``, so the factorized kernel meets chr with equality.

    In Fourier variables ``b^ = 2 a^ / (1 + |a^|^2)``; ``a`` must be even.
    The result is not guaranteed nonnegative; callers should check.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    if np.max(np.abs(a - a[grid.negation()])) > tol * max(1.0, np.max(np.abs(a))):
        raise PreconditionError("companion b needs an even jump density a")
    shape = (grid.M,) * grid.d
    w = grid.cell_measure
    ah = np.fft.fftn(a.reshape(shape)) * w
    bh = 2 * ah / (1 + np.abs(ah) ** 2)
    return np.real(np.fft.ifftn(bh)).reshape(-1) / w


def geometric_fourier_density(grid: TorusGrid, r: float) -> np.ndarray:
    """Even probability density whose Fourier coefficients are ``r**|k|`` per axis.

    On the unit torus in one dimension this is the wrapped Cauchy (Poisson
    kernel) density; it is strictly positive for ``0 <= r < 1``.
    """
    if not 0 <= r < 1:
        raise ValueError(f"r must lie in [0, 1), got {r}")
    M, d = grid.M, grid.d
    k = np.fft.fftfreq(M, 1.0 / M)
    hat1 = r ** np.abs(k)
    hat = hat1
    for _ in range(d - 1):
        hat = np.multiply.outer(hat, hat1)
    return np.real(np.fft.ifftn(hat)).reshape(-1) / grid.cell_measure


def wrapped_gaussian_density(grid: TorusGrid, sigma: float) -> np.ndarray:
    """Wrapped Gaussian on offsets, normalized by the discrete sum."""
    off = grid.offsets()
    g = np.exp(-0.5 * np.sum(off**2, axis=1) / sigma**2)
    return g / (g.sum() * grid.cell_measure)


class FactorizedKernel(RateKernel):
    """Kernel ``c = c' + c''`` built from jump densities.

    ``c'(x1,x2,y1,y2) = kappa a(x1-y1) a(x2-y2) [b(x1-x2) + b(y1-y2)]`` and
    ``c''(x1,x2,y1,y2) = c'(x2,x1,y1,y2)``. The densities ``a`` and ``b`` are
    sampled on offsets ``k h`` (see :meth:`TorusGrid.offsets`).

    Parameters
    ----------
    grid : TorusGrid
    kappa : float
        Positive overall rate.
    a, b : array_like, shape (Q,)
        Nonnegative densities with unit discrete mass; ``b`` even.
    tol : float
        Tolerance for the normalization and evenness checks.
    """

    kind = "factorized"

    def __init__(self, grid: TorusGrid, kappa: float, a, b, tol: float = 1e-10):
        if not (np.isfinite(kappa) and kappa >= 0):
            raise KernelEvaluationError(f"kappa must be finite and >= 0, got {kappa}")
        a = np.asarray(a, dtype=float).reshape(-1)
        b = np.asarray(b, dtype=float).reshape(-1)
        Q = grid.n_cells
        for nm, f in (("a", a), ("b", b)):
            if f.shape != (Q,):
                raise ValueError(f"{nm} must have {Q} entries, got {f.shape}")
            _validate(f, nm)
            mass = f.sum() * grid.cell_measure
            if abs(mass - 1) > tol:
                raise ValueError(f"{nm} must have unit mass, got {mass!r}")
        if np.max(np.abs(b - b[grid.negation()])) > tol * max(1.0, b.max()):
            raise ValueError("b must be even")
        self.kappa = float(kappa)
        self.a = _readonly(a)
        self.b = _readonly(b)
        super().__init__(grid, name=f"factorized(kappa={kappa})")

    @classmethod
    def normalized(cls, grid, kappa, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        w = grid.cell_measure
        return cls(grid, kappa, a / (a.sum() * w), b / (b.sum() * w))

    @classmethod
    def with_companion(cls, grid, kappa, a):
        """Pair ``a`` with :func:`companion_b`; raises if that ``b`` is negative."""
        b = companion_b(grid, a)
        if b.min() < 0:
            raise KernelEvaluationError(f"companion b is negative (min {b.min():.3g}); choose a broader a")
        return cls(grid, kappa, a, b)

    @cached_property
    def _D(self):
        return self.grid.difference_table()

    def _primed(self) -> np.ndarray:
        A = self.a[self._D]
        Bm = self.b[self._D]
        return self.kappa * (
            A[:, None, :, None] * A[None, :, None, :] * (Bm[:, :, None, None] + Bm[None, None, :, :])
        )

    def _build(self):
        cp = self._primed()
        return cp + cp.transpose(1, 0, 2, 3)

    def primed(self) -> RateKernel:
        """The part ``c'`` as a tabulated kernel."""
        return RateKernel(self.grid, self._primed(), name="c'")

    def conv(self, f, g, fft=False):
        return self.grid.convolve(f, g, fft=fft)

    @cached_property
    def a_tilde(self):
        return _readonly(self.a[self.grid.negation()])

    @cached_property
    def a1_profile(self) -> np.ndarray:
        """``a1(x1, x2) = profile(x1 - x2)`` with profile ``2 kappa (b + a*a~*b)``."""
        aab = self.conv(self.a, self.conv(self.a_tilde, self.b))
        return _readonly(2 * self.kappa * (self.b + aab))

    def a1_closed(self) -> np.ndarray:
        return self.a1_profile[self._D]

    def ctilde_primed_closed(self) -> np.ndarray:
        """``kappa a(x1-y1) [b(x1-x2) + (a*b)(x2-y1)]``, indexed ``[x1, x2, y1]``."""
        D = self._D
        ab = self.conv(self.a, self.b)
        return self.kappa * self.a[D][:, None, :] * (self.b[D][:, :, None] + ab[D][None, :, :])

    def _chr_parts(self):
        cp = self._primed()
        a1p = cp.sum(axis=(2, 3)) * self.grid.cell_measure**2
        return [(cp, a1p), (cp.transpose(1, 0, 2, 3), a1p.T)], True

    def describe(self):
        return {**super().describe(), "kappa": self.kappa}


def example_kernel(grid: TorusGrid, kappa: float = 0.25, r: float = 0.3) -> FactorizedKernel:
    """Default factorized kernel: geometric-Fourier ``a`` and its companion ``b``.

    This pair satisfies chr for ``c'`` exactly, with equality, and the kernel
    is symmetric because ``a`` is even.
    """
    return FactorizedKernel.with_companion(grid, kappa, geometric_fourier_density(grid, r))


# ---------------------------------------------------------------- operations


def tilde_c(k: RateKernel, x1: int, x2: int, y1: int) -> float:
    """Quadrature of ``c(x1, x2, y1, .)`` over the torus, at cell indices."""
    return float(k.ctilde[x1, x2, y1])


def a_fields(k: RateKernel):
    """Return ``(a1_field, a2_field)``."""
    a1, a2 = k.a1, k.a2
    _validate(a1, "a1")
    _validate(a2, "a2")
    return a1, a2


def bounds(k: RateKernel) -> KernelBounds:
    return k.bounds


def _chr_sides(T, a1, w, sym=False):
    # left side of chr at [x, y]: sum over u1, u2 of c(y, u1, x, u2)
    if sym:
        lhs = np.einsum("uyxv->xy", T) * w * w
    else:
        lhs = np.einsum("yuxv->xy", T) * w * w
    return lhs, a1


def check_conditions(k: RateKernel, tol: float = 1e-10) -> ConditionReport:
    """Check symmetry, dominance ``a2 <= a1`` and the one-point conditions.

    Violations are reported as magnitudes; the relative tolerance ``tol``
    is scaled by the largest rate involved.
    """
    w = k.grid.cell_measure
    a1, a2 = a_fields(k)
    scale = max(1.0, float(a1.max()))
    sym_v = k.symmetry_defect()
    dom_v = float(max(0.0, np.max(a2 - a1)))
    parts, split = k._chr_parts()
    if split:
        (cp, a1p), (cpp, a1pp) = parts
        l1, r1 = _chr_sides(cp, a1p, w)
        l2, r2 = _chr_sides(cpp, a1pp, w, sym=True)
    else:
        (T, a1f), = parts
        l1, r1 = _chr_sides(T, a1f, w)
        l2, r2 = _chr_sides(T, a1f, w, sym=True)
    chr_v = float(max(0.0, np.max(l1 - r1)))
    chrsym_v = float(max(0.0, np.max(l2 - r2)))
    return ConditionReport(
        symmetric=Verdict(sym_v <= tol * k._scale(), sym_v),
        dominance=Verdict(dom_v <= tol * scale, dom_v),
        chr=Verdict(chr_v <= tol * scale, chr_v),
        chrsym=Verdict(chrsym_v <= tol * scale, chrsym_v),
        split=split,
    )
