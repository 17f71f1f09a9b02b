"""Periodic grid, symmetric level tensors and the weighted norms on them.

Functions of ``n`` points are stored as dense arrays of shape ``(Q,) * n``
where ``Q = M**d`` is the number of torus cells in flattened C order.
Integrals are midpoint sums with cell measure ``h**d``.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import EnumerationLimitError, GridMismatchError, HorizonError

ROLES = ("quasi-observable", "correlation", "density")
ENUMERATION_LIMIT = 12


@dataclass(frozen=True)
class TorusGrid:
    """Uniform cell grid on the torus ``[0, L)^d``.

    Parameters
    ----------
    d : int
        Spatial dimension.
    L : float
        Side length.
    M : int
        Number of cells per side, at least 2.
    """

    d: int = 1
    L: float = 1.0
    M: int = 16

    def __post_init__(self):
        if int(self.d) < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if int(self.M) < 2:
            raise ValueError(f"M must be >= 2, got {self.M}")
        if not (self.L > 0 and math.isfinite(self.L)):
            raise ValueError(f"L must be positive and finite, got {self.L}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "L", float(self.L))

    @property
    def h(self) -> float:
        return self.L / self.M

    @property
    def cell_measure(self) -> float:
        return self.h**self.d

    @property
    def n_cells(self) -> int:
        return self.M**self.d

    @property
    def volume(self) -> float:
        return self.L**self.d

    def _multi(self) -> np.ndarray:
        # (Q, d) multi-indices in C order
        return np.array(list(np.ndindex(*(self.M,) * self.d)), dtype=np.int64).reshape(-1, self.d)

    def _flat(self, multi: np.ndarray) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.moveaxis(multi % self.M, -1, 0)), (self.M,) * self.d)

    def centers(self) -> np.ndarray:
        """Cell centers, shape ``(Q, d)``."""
        return (self._multi() + 0.5) * self.h

    def offsets(self) -> np.ndarray:
        """Displacements ``k*h`` of offset cells, wrapped into ``(-L/2, L/2]``, shape ``(Q, d)``."""
        k = self._multi()
        k = np.where(k > self.M // 2, k - self.M, k)
        return k * self.h

    def difference_table(self) -> np.ndarray:
        """Table ``D[i, j]`` = flat offset index of ``x_i - x_j`` (mod L)."""
        m = self._multi()
        return self._flat(m[:, None, :] - m[None, :, :])

    def negation(self) -> np.ndarray:
        """Flat offset index of ``-k`` for every offset ``k``."""
        return self._flat(-self._multi())

    def cell_of(self, points) -> np.ndarray:
        """Flat cell index of continuum points, shape ``(..., d)`` or ``(...)`` when ``d = 1``."""
        pts = np.asarray(points, dtype=float)
        if self.d == 1 and (pts.ndim == 0 or pts.shape[-1] != 1):
            pts = pts[..., None]
        idx = np.floor(np.mod(pts, self.L) / self.h).astype(np.int64)
        idx = np.minimum(idx, self.M - 1)
        return self._flat(idx)

    def integrate(self, f) -> float:
        return float(np.sum(f) * self.cell_measure)

    def convolve(self, f, g, fft: bool = False) -> np.ndarray:
        """Circular convolution ``(f*g)(x) = sum_y f(x - y) g(y) h^d`` on offsets.

        Plain summation is the reference; ``fft=True`` uses numpy's FFT.
        """
        f = np.asarray(f, dtype=float)
        g = np.asarray(g, dtype=float)
        if fft:
            shape = (self.M,) * self.d
            axes = tuple(range(self.d))
            spec = np.fft.rfftn(f.reshape(shape), axes=axes) * np.fft.rfftn(g.reshape(shape), axes=axes)
            out = np.fft.irfftn(spec, s=shape, axes=axes)
            return out.reshape(-1) * self.cell_measure
        D = self.difference_table()
        return f[D] @ g * self.cell_measure

    def describe(self) -> dict:
        return {"d": self.d, "L": self.L, "M": self.M}


def _check_grid(a: TorusGrid, b: TorusGrid):
    if a != b:
        raise GridMismatchError(f"grid mismatch: {a} vs {b}")


def symmetrize(values: np.ndarray, n: int | None = None) -> np.ndarray:
    """Average an array over all permutations of its last ``n`` axes."""
    values = np.asarray(values, dtype=float)
    n = values.ndim if n is None else n
    if n < 2:
        return values.copy()
    lead = values.ndim - n
    acc = np.zeros_like(values)
    perms = list(itertools.permutations(range(n)))
    for p in perms:
        acc += np.transpose(values, tuple(range(lead)) + tuple(lead + i for i in p))
    return acc / len(perms)


def is_symmetric(values: np.ndarray, atol: float = 1e-12) -> bool:
    values = np.asarray(values)
    scale = max(1.0, float(np.max(np.abs(values)))) if values.size else 1.0
    for p in itertools.permutations(range(values.ndim)):
        if np.max(np.abs(values - np.transpose(values, p)), initial=0.0) > atol * scale:
            return False
    return True


@dataclass(frozen=True, eq=False)
class LevelTensor:
    """A symmetric function of ``n`` points on the grid.

    Use :meth:`from_values` to symmetrize on write; the raw constructor
    trusts the caller.
    """

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        Q = self.grid.n_cells
        if any(s != Q for s in v.shape):
            raise ValueError(f"level tensor shape {v.shape} incompatible with {Q} cells")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_values(cls, grid: TorusGrid, values, symmetrize_: bool = True) -> "LevelTensor":
        v = np.asarray(values, dtype=float)
        return cls(grid, symmetrize(v) if symmetrize_ else v)

    @property
    def n(self) -> int:
        return self.values.ndim

    def norm(self) -> float:
        """Weighted l1 norm, the X_n norm."""
        return float(np.sum(np.abs(self.values)) * self.grid.cell_measure**self.n)

    def is_symmetric(self, atol: float = 1e-12) -> bool:
        return is_symmetric(self.values, atol)


@dataclass(frozen=True)
class FiniteConfig:
    """Finite configuration given by distinct cell indices."""

    cells: tuple

    def __post_init__(self):
        cells = tuple(int(c) for c in self.cells)
        if len(set(cells)) != len(cells):
            raise ValueError(f"configuration has repeated cells: {cells}")
        object.__setattr__(self, "cells", cells)

    def __len__(self):
        return len(self.cells)


@dataclass(frozen=True, eq=False)
class HierState:
    """Truncated sequence of level tensors, levels ``0..N_max``.

    ``arrays[0]`` is a 0-d array (the scalar level), ``arrays[n]`` has shape
    ``(Q,) * n``. Levels above ``N_max`` are zero for quasi-observables and
    densities, and unknown for correlation functions.
    """

    grid: TorusGrid
    arrays: tuple
    role: str = "quasi-observable"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}; expected one of {ROLES}")
        Q = self.grid.n_cells
        arrs = []
        for n, a in enumerate(self.arrays):
            a = np.asarray(a, dtype=float)
            if a.shape != (Q,) * n:
                raise ValueError(f"level {n} has shape {a.shape}, expected {(Q,) * n}")
            arrs.append(a)
        if not arrs:
            raise ValueError("a state needs at least level 0")
        object.__setattr__(self, "arrays", tuple(arrs))

    @classmethod
    def from_levels(cls, grid, levels: Sequence, role="quasi-observable", symmetrize_=True, meta=None):
        arrs = [np.asarray(levels[0], dtype=float).reshape(())]
        for lv in levels[1:]:
            v = lv.values if isinstance(lv, LevelTensor) else np.asarray(lv, dtype=float)
            arrs.append(symmetrize(v) if symmetrize_ else v)
        return cls(grid, tuple(arrs), role, dict(meta or {}))

    @classmethod
    def zeros(cls, grid, N_max, role="quasi-observable"):
        Q = grid.n_cells
        return cls(grid, tuple(np.zeros((Q,) * n) for n in range(N_max + 1)), role)

    @property
    def N_max(self) -> int:
        return len(self.arrays) - 1

    @property
    def level0(self) -> float:
        return float(self.arrays[0])

    @property
    def levels(self) -> list:
        return [LevelTensor(self.grid, a) for a in self.arrays[1:]]

    def level(self, n: int) -> LevelTensor:
        return LevelTensor(self.grid, self.arrays[n])

    def level_norms(self) -> np.ndarray:
        w = self.grid.cell_measure
        return np.array([np.sum(np.abs(a)) * w**n for n, a in enumerate(self.arrays)])

    def truncated(self, m: int) -> "HierState":
        return HierState(self.grid, self.arrays[: m + 1], self.role, dict(self.meta))

    def with_arrays(self, arrays, role=None) -> "HierState":
        return HierState(self.grid, tuple(arrays), role or self.role, dict(self.meta))

    def padded(self, N_max: int) -> "HierState":
        """Extend with zero levels up to ``N_max``."""
        Q = self.grid.n_cells
        extra = [np.zeros((Q,) * n) for n in range(self.N_max + 1, N_max + 1)]
        return HierState(self.grid, self.arrays + tuple(extra), self.role, dict(self.meta))


# ---------------------------------------------------------------- norms


def _level_weights(grid, N):
    w = grid.cell_measure
    return [w**n for n in range(N + 1)]


def norm_L_C(G: HierState, C: float) -> float:
    """Weighted norm ``sum_n C^n / n! * ||G^(n)||_{X_n}``."""
    if not C > 0:
        raise ValueError(f"C must be positive, got {C}")
    norms = G.level_norms()
    return float(sum(C**n / math.factorial(n) * v for n, v in enumerate(norms)))


def norm_K_C(k: HierState, C: float) -> float:
    """Weighted sup norm ``max_n max |k^(n)| C^(-n)`` over represented levels."""
    if not C > 0:
        raise ValueError(f"C must be positive, got {C}")
    return float(max(np.max(np.abs(a), initial=0.0) * C ** (-n) for n, a in enumerate(k.arrays)))


def pairing(G: HierState, k: HierState) -> float:
    """Duality pairing ``sum_n 1/n! * sum G^(n) k^(n) h^(dn)``."""
    _check_grid(G.grid, k.grid)
    for n in range(k.N_max + 1, G.N_max + 1):
        if np.any(G.arrays[n] != 0):
            raise ValueError(f"G is nonzero at level {n} but k is only given up to {k.N_max}")
    ws = _level_weights(G.grid, G.N_max)
    total = 0.0
    for n in range(min(G.N_max, k.N_max) + 1):
        total += float(np.sum(G.arrays[n] * k.arrays[n])) * ws[n] / math.factorial(n)
    return total


def lp_exponent(p, N_max: int, grid: TorusGrid, role: str = "correlation") -> HierState:
    """Product state ``e(p)(x_1..x_n) = prod_i p(x_i)`` with level 0 equal to 1."""
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.shape != (grid.n_cells,):
        raise ValueError(f"p has {p.size} entries, grid has {grid.n_cells} cells")
    if not np.all(np.isfinite(p)):
        raise ValueError("p must be finite")
    arrs = [np.array(1.0)]
    cur = np.array(1.0)
    for _ in range(N_max):
        cur = np.multiply.outer(cur, p)
        arrs.append(cur)
    return HierState(grid, tuple(arrs), role)


# ---------------------------------------------------------------- K-transform


def _k_transform_tuple(arrays, cells) -> float:
    # sum over index subsets; repeated cells are allowed here
    m = len(cells)
    total = 0.0
    for r in range(min(m, len(arrays) - 1) + 1):
        a = arrays[r]
        for sub in itertools.combinations(cells, r):
            total += float(a[sub]) if r else float(a)
    return total


def k_transform_small(G: HierState, gamma: FiniteConfig) -> float:
    """``(KG)(gamma) = sum over subconfigurations eta of G(eta)``."""
    if len(gamma) > ENUMERATION_LIMIT:
        raise EnumerationLimitError(f"|gamma| = {len(gamma)} exceeds enumeration limit {ENUMERATION_LIMIT}")
    return _k_transform_tuple(G.arrays, gamma.cells)


def k_inverse_small(F: Callable[[FiniteConfig], float], eta: FiniteConfig) -> float:
    """Alternating-sum inverse ``sum over xi in eta of (-1)^|eta \\ xi| F(xi)``."""
    if len(eta) > ENUMERATION_LIMIT:
        raise EnumerationLimitError(f"|eta| = {len(eta)} exceeds enumeration limit {ENUMERATION_LIMIT}")
    m = len(eta)
    total = 0.0
    for r in range(m + 1):
        sign = -1.0 if (m - r) % 2 else 1.0
        for sub in itertools.combinations(eta.cells, r):
            total += sign * F(FiniteConfig(sub))
    return total


# ---------------------------------------------------------------- time scale


def rho(t: float, C: float, B: float) -> float:
    """Shrinking weight ``C / (1 + B C t)``."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    return C / (1.0 + B * C * t)


def horizon(C0: float, B: float) -> float:
    """Existence horizon ``1 / (B C0)`` (infinite when ``B = 0``)."""
    if C0 <= 0:
        raise ValueError(f"C0 must be positive, got {C0}")
    return math.inf if B == 0 else 1.0 / (B * C0)


def C_t(t: float, C0: float, B: float) -> float:
    """Growing bound ``C0 / (1 - B C0 t)``, defined for ``t < horizon``."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    T = horizon(C0, B)
    if t >= T:
        raise HorizonError(f"t = {t} is not below the horizon {T}")
    return C0 / (1.0 - B * C0 * t)


# ---------------------------------------------------------------- random data


def random_state(grid, N_max, rng, role="quasi-observable", positive=False, scale=1.0) -> HierState:
    """Random symmetric state, used by tests and demos."""
    Q = grid.n_cells
    arrs = [np.asarray(rng.uniform(0, 1) if positive else rng.normal())]
    for n in range(1, N_max + 1):
        v = rng.uniform(0, 1, (Q,) * n) if positive else rng.normal(size=(Q,) * n)
        arrs.append(symmetrize(v) * scale)
    return HierState(grid, tuple(arrs), role)


# ---------------------------------------------------------------- CSV io


def write_tensor_csv(path, tensor: LevelTensor | np.ndarray, grid: TorusGrid | None = None, comment=None):
    """Write one row per multi-index in lexicographic order."""
    if isinstance(tensor, LevelTensor):
        grid, values = tensor.grid, tensor.values
    else:
        values = np.asarray(tensor, dtype=float)
    n = values.ndim
    with open(path, "w", newline="") as fh:
        fh.write(f"# d={grid.d},L={grid.L!r},M={grid.M},n={n}\n")
        if comment:
            fh.write(f"# {comment}\n")
        wr = csv.writer(fh)
        wr.writerow([f"i{j + 1}" for j in range(n)] + ["value"])
        for idx in np.ndindex(values.shape):
            wr.writerow(list(idx) + [repr(float(values[idx]))])


def read_tensor_csv(path) -> LevelTensor:
    header = {}
    rows = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("d="):
                    header = dict(kv.split("=") for kv in body.split(","))
                continue
            rows.append(line)
    if not header:
        raise ValueError(f"{path}: missing grid header")
    grid = TorusGrid(int(header["d"]), float(header["L"]), int(header["M"]))
    n = int(header["n"])
    reader = csv.reader(rows)
    next(reader)
    values = np.zeros((grid.n_cells,) * n)
    for row in reader:
        values[tuple(int(i) for i in row[:n])] = float(row[n])
    return LevelTensor(grid, values)


def save_state(directory, state: HierState):
    """Write a state as ``level_<n>.csv`` files plus ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for n in range(1, state.N_max + 1):
        write_tensor_csv(d / f"level_{n}.csv", state.arrays[n], state.grid)
    manifest = {
        "grid": state.grid.describe(),
        "N_max": state.N_max,
        "role": state.role,
        "level0": state.level0,
        "files": [f"level_{n}.csv" for n in range(1, state.N_max + 1)],
    }
    with open(d / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_state(directory) -> HierState:
    d = Path(directory)
    with open(d / "manifest.json") as fh:
        manifest = json.load(fh)
    grid = TorusGrid(**manifest["grid"])
    arrs = [np.array(manifest["level0"])]
    for name in manifest["files"]:
        lt = read_tensor_csv(os.path.join(d, name))
        _check_grid(lt.grid, grid)
        arrs.append(lt.values)
    return HierState(grid, tuple(arrs), manifest["role"])
