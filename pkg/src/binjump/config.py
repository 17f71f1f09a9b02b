"""YAML experiment configuration: schema, defaults and builders.

Schema (all sections optional, defaults shown)::

    experiment: verify          # bounds | evolve-hierarchy | correlations | verify-duality
                                # | vlasov-study | kinetic | mc | verify
    seed: 0
    grid: {d: 1, L: 1.0, M: 16}
    kernel:
      kind: factorized          # factorized | constant | tabulated
      kappa: 0.25
      a: {preset: geometric, r: 0.3}   # or {preset: gaussian, sigma: ...}, a list, or a CSV path
      b: companion                     # or a preset / list / CSV path like a
      value: 0.5                       # constant kernel only
      file: kernel.csv                 # tabulated kernel only (4-index tensor CSV)
    initial:
      kind: random              # random | product | file   (quasi-observables G0)
      scale: 1.0
      p: {preset: cosine, base: 0.3, amp: 0.15}   # product data / kinetic p0 / MC intensity
      path: state_dir                              # file: a saved HierState directory
    numerics:
      N_max: 3
      dt: 0.02
      substep_fraction: 0.025
      eps: 1.0
      eps_list: [1.0, 0.5, 0.25, 0.1, 0.05]
      t: 0.5
      C: 1.0
    kinetic: {C: 0.5, T: 1.0, dt: 0.001, dt_rk: 0.01, solver: both}
    correlations: {t_fraction: 0.25, eps: 0.0, levels: [1, 2]}
    duality: {N: 2, pairs: 5, t_fractions: [0.2, 0.5, 0.9]}
    mc: {law: fixed, N: 3, replicas: 2000, T: 0.5, snapshots: [0.0, 0.5]}
    verify: {criteria: [1, 2, 3, 4, 5, 6, 7, 8]}
"""

from __future__ import annotations

import copy
import hashlib
import json
import numbers
from pathlib import Path

import numpy as np
import yaml

from .discretization import TorusGrid, read_tensor_csv
from .errors import ConfigError
from .kernel import (
    ConstantKernel,
    FactorizedKernel,
    RateKernel,
    companion_b,
    geometric_fourier_density,
    wrapped_gaussian_density,
)

EXPERIMENTS = ("bounds", "evolve-hierarchy", "correlations", "verify-duality", "vlasov-study", "kinetic", "mc", "verify")

DEFAULTS = {
    "experiment": "verify",
    "seed": 0,
    "grid": {"d": 1, "L": 1.0, "M": 16},
    "kernel": {"kind": "factorized", "kappa": 0.25, "a": {"preset": "geometric", "r": 0.3}, "b": "companion"},
    "initial": {"kind": "random", "scale": 1.0, "p": {"preset": "cosine", "base": 0.3, "amp": 0.15}},
    "numerics": {
        "N_max": 3,
        "dt": 0.02,
        "substep_fraction": 0.025,
        "eps": 1.0,
        "eps_list": [1.0, 0.5, 0.25, 0.1, 0.05],
        "t": 0.5,
        "C": 1.0,
    },
    "kinetic": {"C": 0.5, "T": 1.0, "dt": 0.001, "dt_rk": 0.01, "solver": "both"},
    "correlations": {"t_fraction": 0.25, "eps": 0.0, "levels": [1, 2]},
    "duality": {"N": 2, "pairs": 5, "t_fractions": [0.2, 0.5, 0.9]},
    "mc": {"law": "fixed", "N": 3, "replicas": 2000, "T": 0.5, "snapshots": [0.0, 0.5]},
    "verify": {"criteria": [1, 2, 3, 4, 5, 6, 7, 8]},
}


# fields that are valid but have no default
OPTIONAL = {"kernel": ("value", "file"), "initial": ("path",)}


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for key, val in (over or {}).items():
        where = f"{path}.{key}" if path else key
        if key not in base and key not in OPTIONAL.get(path, ()):
            raise ConfigError(where, "a known field", key)
        if isinstance(base.get(key), dict) and isinstance(val, dict) and key not in ("a", "b", "p"):
            out[key] = _merge(base[key], val, where)
        else:
            out[key] = val
    return out


def _num(cfg, path, positive=False, nonneg=False, integer=False, lo=None):
    sec, key = path.split(".")
    v = cfg[sec][key]
    if isinstance(v, bool) or not isinstance(v, numbers.Real):
        raise ConfigError(path, "a number", v)
    if integer and int(v) != v:
        raise ConfigError(path, "an integer", v)
    if positive and not v > 0:
        raise ConfigError(path, "a positive number", v)
    if nonneg and v < 0:
        raise ConfigError(path, "a nonnegative number", v)
    if lo is not None and v < lo:
        raise ConfigError(path, f"a value >= {lo}", v)
    return v


def validate(cfg: dict) -> dict:
    """Check types and ranges; raise :class:`ConfigError` naming the field."""
    if cfg["experiment"] not in EXPERIMENTS:
        raise ConfigError("experiment", f"one of {EXPERIMENTS}", cfg["experiment"])
    if isinstance(cfg["seed"], bool) or not isinstance(cfg["seed"], numbers.Integral) or cfg["seed"] < 0:
        raise ConfigError("seed", "a nonnegative integer", cfg["seed"])
    _num(cfg, "grid.d", integer=True, lo=1)
    _num(cfg, "grid.L", positive=True)
    _num(cfg, "grid.M", integer=True, lo=2)
    kind = cfg["kernel"].get("kind")
    if kind not in ("factorized", "constant", "tabulated"):
        raise ConfigError("kernel.kind", "factorized | constant | tabulated", kind)
    if kind == "factorized":
        _num(cfg, "kernel.kappa", nonneg=True)
    if kind == "constant":
        if "value" not in cfg["kernel"]:
            raise ConfigError("kernel.value", "a nonnegative number", None)
        _num(cfg, "kernel.value", nonneg=True)
    if kind == "tabulated" and "file" not in cfg["kernel"]:
        raise ConfigError("kernel.file", "a CSV path", None)
    for key in ("N_max",):
        _num(cfg, f"numerics.{key}", integer=True, lo=1)
    for key in ("dt", "C", "substep_fraction"):
        _num(cfg, f"numerics.{key}", positive=True)
    if cfg["numerics"]["substep_fraction"] > 0.1:
        raise ConfigError("numerics.substep_fraction", "a value <= 0.1", cfg["numerics"]["substep_fraction"])
    _num(cfg, "numerics.t", nonneg=True)
    _num(cfg, "numerics.eps", nonneg=True)
    for key in ("C", "T", "dt", "dt_rk"):
        _num(cfg, f"kinetic.{key}", positive=True)
    if cfg["kinetic"]["solver"] not in ("picard", "rk", "both"):
        raise ConfigError("kinetic.solver", "picard | rk | both", cfg["kinetic"]["solver"])
    if cfg["initial"]["kind"] not in ("random", "product", "file"):
        raise ConfigError("initial.kind", "random | product | file", cfg["initial"]["kind"])
    if cfg["mc"]["law"] not in ("fixed", "poisson"):
        raise ConfigError("mc.law", "fixed | poisson", cfg["mc"]["law"])
    _num(cfg, "mc.replicas", integer=True, lo=2)
    _num(cfg, "mc.T", nonneg=True)
    _num(cfg, "mc.N", integer=True, lo=0)
    _num(cfg, "duality.N", integer=True, lo=1)
    _num(cfg, "duality.pairs", integer=True, lo=1)
    _num(cfg, "correlations.t_fraction", positive=True)
    if not cfg["correlations"]["t_fraction"] < 1 / 1.05:
        raise ConfigError("correlations.t_fraction", "a value below 1/1.05 of the horizon", cfg["correlations"]["t_fraction"])
    return cfg


def load_config(path=None, overrides=None) -> dict:
    """Read YAML (or take ``{}``), merge defaults and validate."""
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh) or {}
        except yaml.YAMLError as e:
            raise ConfigError("<file>", "valid YAML", str(e)) from e
        if not isinstance(raw, dict):
            raise ConfigError("<file>", "a mapping", type(raw).__name__)
    cfg = _merge(DEFAULTS, raw)
    if overrides:
        cfg = _merge(cfg, overrides)
    return validate(cfg)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


# ---------------------------------------------------------------- builders


def build_grid(cfg) -> TorusGrid:
    g = cfg["grid"]
    return TorusGrid(int(g["d"]), float(g["L"]), int(g["M"]))


def grid_function(spec, grid: TorusGrid, field: str, kind: str = "offset") -> np.ndarray:
    """Resolve a preset mapping, inline list or CSV path to a grid function."""
    if isinstance(spec, str):
        p = Path(spec)
        if not p.exists():
            raise ConfigError(field, "an existing CSV path", spec)
        v = read_tensor_csv(p)
        if v.grid != grid or v.n != 1:
            raise ConfigError(field, f"a 1-index tensor on {grid}", f"{v.n}-index on {v.grid}")
        return v.values
    if isinstance(spec, (list, tuple)):
        arr = np.asarray(spec, dtype=float).reshape(-1)
        if arr.size != grid.n_cells:
            raise ConfigError(field, f"{grid.n_cells} values", arr.size)
        return arr
    if isinstance(spec, dict):
        preset = spec.get("preset")
        if preset == "geometric":
            r = spec.get("r", 0.3)
            if not isinstance(r, numbers.Real) or not 0 <= r < 1:
                raise ConfigError(f"{field}.r", "a number in [0, 1)", r)
            return geometric_fourier_density(grid, float(r))
        if preset == "gaussian":
            s = spec.get("sigma", 0.1)
            if not isinstance(s, numbers.Real) or not s > 0:
                raise ConfigError(f"{field}.sigma", "a positive number", s)
            return wrapped_gaussian_density(grid, float(s))
        if preset == "cosine":
            base, amp = spec.get("base", 0.3), spec.get("amp", 0.15)
            x = grid.centers()[:, 0]
            return base + amp * np.cos(2 * np.pi * x / grid.L)
        if preset == "constant":
            return np.full(grid.n_cells, float(spec.get("value", 0.3)))
        raise ConfigError(f"{field}.preset", "geometric | gaussian | cosine | constant", preset)
    raise ConfigError(field, "a preset mapping, list or CSV path", spec)


def build_kernel(cfg, grid: TorusGrid) -> RateKernel:
    ks = cfg["kernel"]
    kind = ks["kind"]
    if kind == "constant":
        return ConstantKernel(grid, float(ks["value"]))
    if kind == "tabulated":
        p = Path(ks["file"])
        if not p.exists():
            raise ConfigError("kernel.file", "an existing CSV path", ks["file"])
        t = read_tensor_csv(p)
        if t.grid != grid or t.n != 4:
            raise ConfigError("kernel.file", f"a 4-index tensor on {grid}", f"{t.n}-index on {t.grid}")
        try:
            return RateKernel(grid, t.values, name=f"tabulated({p.name})")
        except ValueError as e:
            raise ConfigError("kernel.file", "finite nonnegative kernel values", str(e)) from e
    a = grid_function(ks.get("a", DEFAULTS["kernel"]["a"]), grid, "kernel.a")
    b_spec = ks.get("b", "companion")
    if b_spec == "companion":
        b = companion_b(grid, a)
        if b.min() < 0:
            raise ConfigError("kernel.b", "a nonnegative companion density (broaden a)", float(b.min()))
    else:
        b = grid_function(b_spec, grid, "kernel.b")
    try:
        return FactorizedKernel(grid, float(ks["kappa"]), a, b)
    except ValueError as e:
        raise ConfigError("kernel", "normalized nonnegative a, b with b even", str(e)) from e
