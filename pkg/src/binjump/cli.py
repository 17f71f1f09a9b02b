"""Command-line entry point ``binjump``.

Every run resolves the YAML config against the defaults, writes its
artifacts into ``<out>/<experiment>-<hash>/`` (the hash covers the resolved
config, so distinct configs never share a directory) and echoes the
resolved config in ``manifest.json``.

Exit codes: 0 when every check passes, 1 on a numerical check failure,
2 on a config or precondition error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import build_grid, build_kernel, config_hash, grid_function, load_config
from .discretization import (
    lp_exponent,
    load_state,
    random_state,
    save_state,
)
from .errors import (
    BinJumpError,
    ConfigError,
    PicardConvergenceError,
    StiffnessError,
)
from .kernel import check_conditions

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def write_csv(path, comment, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {comment}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _out_dir(cfg, out) -> Path:
    d = Path(out) / f"{cfg['experiment']}-{config_hash(cfg)}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_manifest(d: Path, cfg, status, summary):
    manifest = {"version": __version__, "seed": cfg["seed"], "config": cfg, "status": status, "summary": summary}
    with open(d / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def _rng(cfg):
    return np.random.default_rng(cfg["seed"])


def _solver_cfg(cfg, N_max=None):
    from .hierarchy import HierSolverConfig

    nm = cfg["numerics"]
    return HierSolverConfig(N_max=int(N_max or nm["N_max"]), dt=float(nm["dt"]),
                            substep_fraction=float(nm["substep_fraction"]))


def _initial_G(cfg, grid):
    ini = cfg["initial"]
    N = int(cfg["numerics"]["N_max"])
    if ini["kind"] == "random":
        return random_state(grid, N, _rng(cfg), scale=float(ini.get("scale", 1.0)))
    if ini["kind"] == "product":
        p = grid_function(ini["p"], grid, "initial.p")
        return lp_exponent(p, N, grid, role="quasi-observable")
    if "path" not in ini:
        raise ConfigError("initial.path", "a saved state directory", None)
    G = load_state(ini["path"])
    if G.grid != grid:
        raise ConfigError("initial.path", f"a state on {grid}", str(G.grid))
    return G


# ---------------------------------------------------------------- experiments


def run_bounds(cfg, d):
    from .hierarchy import L0_bound, W_bound

    grid = build_grid(cfg)
    k = build_kernel(cfg, grid)
    b = k.bounds
    rows = [("c1", b.c1), ("c2", b.c2), ("c3", b.c3), ("c4", b.c4), ("A", b.A), ("B", b.B)]
    for n in range(2, int(cfg["numerics"]["N_max"]) + 1):
        rows += [(f"L0_bound_n{n}", L0_bound(n, k)), (f"W_bound_n{n}", W_bound(n, k))]
    write_csv(d / "bounds.csv", "kernel constants: sup of the one-pair rate fields and their integrals; "
              "level operator bounds n(n-1)/2 (c1+c2) and n(n-1)(c3+c4)", ["quantity", "value"], rows)
    rep = check_conditions(k)
    write_csv(d / "conditions.csv", "structural kernel checks: verdict and worst violation on the grid",
              ["condition", "holds", "violation"],
              [(nm, int(v["holds"]), float(v["violation"])) for nm, v in rep.as_dict().items()])
    return True, {"B": b.B, "A": b.A, "kinetic_ok": rep.kinetic_ok, **k.flags()}


def run_evolve(cfg, d):
    from .hierarchy import solve_renormalized

    grid = build_grid(cfg)
    k = build_kernel(cfg, grid)
    G0 = _initial_G(cfg, grid)
    nm = cfg["numerics"]
    C = float(nm["C"])
    st, hist = solve_renormalized(G0, float(nm["t"]), float(nm["eps"]), k, _solver_cfg(cfg), C=C)
    write_csv(d / "norms.csv", "per-level L1 norm of G_t; a-priori growth bound; norm in the shrinking weight "
              "rho(t,C) = C/(1+BCt); contraction margin = initial weighted norm minus current",
              ["t", "n", "X_n-norm", "bound", "weighted-norm", "contraction-margin"], hist.rows())
    save_state(d / "state", st)
    slack = 1e-6 * hist.initial_weighted
    worst = float(hist.contraction_margin.min())
    return worst >= -slack, {"initial_weighted": hist.initial_weighted, "min_margin": worst}


def run_correlations(cfg, d):
    from .correlations import CorrelationEvolution

    grid = build_grid(cfg)
    k = build_kernel(cfg, grid)
    p = grid_function(cfg["initial"]["p"], grid, "initial.p")
    k0 = lp_exponent(p, int(cfg["numerics"]["N_max"]), grid)
    cc = cfg["correlations"]
    ce = CorrelationEvolution(k0, k, cfg=_solver_cfg(cfg), eps=float(cc["eps"]))
    t = float(cc["t_fraction"]) * ce.T
    summary = {"t": t, "T": ce.T, "C0": ce.C0}
    comment = {1: "one-point correlation k_t at cell i1 by duality with indicator data; tail = truncation bound",
               2: "two-point correlation k_t at (i1,i2) by duality with indicator data; tail = truncation bound"}
    for n in cc["levels"]:
        n = int(n)
        if not 1 <= n <= min(2, k0.N_max):
            raise ConfigError("correlations.levels", f"entries in 1..{min(2, k0.N_max)}", n)
        lt, tail = ce.reconstruct_k(t, n)
        rows = [list(idx) + [float(lt.values[idx]), tail] for idx in np.ndindex(lt.values.shape)]
        write_csv(d / f"k{n}.csv", comment[n], [f"i{j + 1}" for j in range(n)] + ["value", "tail"], rows)
        summary[f"tail_k{n}"] = tail
    return True, summary


def run_duality(cfg, d):
    from .correlations import CorrelationEvolution, FiniteSystemDensity, density_to_correlation, verify_duality

    grid = build_grid(cfg)
    k = build_kernel(cfg, grid)
    dc = cfg["duality"]
    N = int(dc["N"])
    rng = _rng(cfg)
    rows = []
    for j in range(int(dc["pairs"])):
        R0 = FiniteSystemDensity.random(grid, N, rng)
        G0 = random_state(grid, N, rng)
        T = CorrelationEvolution(density_to_correlation(R0), k).T
        times = [float(f) * T for f in dc["t_fractions"]]
        for r in verify_duality(R0, G0, times, k, _solver_cfg(cfg, N), method="expm"):
            rows.append((j, r.t, r.lhs, r.rhs, r.error))
    write_csv(d / "duality.csv", "pairing of G0 with the evolved finite-system correlation (lhs) against "
              "pairing of the evolved G_t with the initial correlation (rhs)",
              ["pair", "t", "lhs", "rhs", "abs_error"], rows)
    worst = max(r[-1] for r in rows)
    return worst <= 1e-8, {"max_abs_error": worst}


def run_vlasov(cfg, d):
    from .hierarchy import vlasov_convergence_study

    grid = build_grid(cfg)
    k = build_kernel(cfg, grid)
    G0 = _initial_G(cfg, grid)
    nm = cfg["numerics"]
    C = float(nm["C"])
    T = 1.0 / (k.bounds.B * C)
    eps_list = [float(e) for e in nm["eps_list"]]
    rows = vlasov_convergence_study(G0, T, eps_list, k, _solver_cfg(cfg), C)
    write_csv(d / "vlasov.csv", "sup over monitored times of the weighted distance between the eps-scaled "
              "and the Vlasov solution, with weight 0.9 rho(T,C)", ["eps", "error"],
              [(r.eps, r.error) for r in rows])
    errs = [r.error for r in sorted(rows, key=lambda r: -r.eps)]
    ok = all(a > b for a, b in zip(errs, errs[1:]))
    return ok, {"T": T, "errors": errs, "monotone": ok}


def run_kinetic(cfg, d):
    from .kinetic import KineticConfig, invariants, solve_picard, solve_rk

    grid = build_grid(cfg)
    k = build_kernel(cfg, grid)
    kc = cfg["kinetic"]
    C = float(kc["C"])
    p0 = grid_function(cfg["initial"]["p"], grid, "initial.p")
    kcfg = KineticConfig(C=C, T=float(kc["T"]), dt=float(kc["dt"]), dt_rk=float(kc["dt_rk"]))
    paths = {}
    if kc["solver"] in ("picard", "both"):
        paths["picard"] = solve_picard(p0, k, kcfg)
    if kc["solver"] in ("rk", "both"):
        paths["rk"] = solve_rk(p0, k, kcfg)
    main = paths.get("picard") or paths["rk"]
    write_csv(d / "p_t.csv", "density p_t solving the kinetic equation dp/dt = gain(p,p) - p loss(p)",
              ["t", "cell", "value"],
              [(float(t), i, float(main.values[j, i])) for j, t in enumerate(main.times) for i in range(grid.n_cells)])
    write_csv(d / "invariants.csv", "mass = sum of p_t times cell measure; min and max of p_t over cells",
              ["t", "mass", "min", "max"], invariants(main))
    lo, hi = float(main.values.min()), float(main.values.max())
    summary = {"solver": "picard" if "picard" in paths else "rk", "min": lo, "max": hi}
    ok = lo >= -1e-10 and hi <= C * (1 + 1e-10)
    if len(paths) == 2:
        P, R = paths["picard"], paths["rk"]
        agree = max(float(np.max(np.abs(P.at(t) - R.values[j]))) for j, t in enumerate(R.times))
        summary["picard_vs_rk"] = agree
        ok = ok and agree <= 1e-6
    return ok, summary


def run_mc(cfg, d):
    from .montecarlo import estimate_correlations, run_ensemble, sample_fixed_initial, sample_poisson_initial

    grid = build_grid(cfg)
    k = build_kernel(cfg, grid)
    mc = cfg["mc"]
    p = grid_function(cfg["initial"]["p"], grid, "initial.p")
    if np.any(p < 0):
        raise ConfigError("initial.p", "a nonnegative intensity", float(p.min()))
    times = sorted(float(s) for s in mc["snapshots"])
    if any(s < 0 or s > float(mc["T"]) for s in times):
        raise ConfigError("mc.snapshots", f"times in [0, {mc['T']}]", times)
    if mc["law"] == "fixed":
        N = int(mc["N"])
        init = lambda r: sample_fixed_initial(p, N, grid, r)  # noqa: E731
    else:
        init = lambda r: sample_poisson_initial(p, grid, r)  # noqa: E731
    ens = run_ensemble(init, k, int(mc["replicas"]), times, int(cfg["seed"]))
    r1, r2 = [], []
    for s in times:
        e = estimate_correlations(ens, s)
        r1 += [(s, i, float(e.k1_mean[i]), float(e.k1_se[i])) for i in range(grid.n_cells)]
        r2 += [(s, i, j, float(e.k2_mean[i, j]), float(e.k2_se[i, j]))
               for i in range(grid.n_cells) for j in range(grid.n_cells)]
    write_csv(d / "k1_mc.csv", "replica mean of cell counts over cell measure; se = sample std / sqrt(replicas)",
              ["t", "cell", "mean", "se"], r1)
    write_csv(d / "k2_mc.csv", "replica mean of ordered distinct-pair counts over squared cell measure; "
              "se = sample std / sqrt(replicas)", ["t", "i1", "i2", "mean", "se"], r2)
    conserved = bool(np.all(ens.initial_sizes == ens.final_sizes))
    return conserved, {"replicas": int(mc["replicas"]), "count_conserved": conserved,
                       "mean_events": float(ens.events.mean())}


def run_verify(cfg, d):
    from .acceptance import run_all

    results = run_all(list(cfg["verify"]["criteria"]), printer=print)
    write_csv(d / "verify.csv", "acceptance checks: pass flag and wall time", ["criterion", "name", "passed", "seconds"],
              [(r.number, r.name, int(r.passed), round(r.seconds, 1)) for r in results])
    return all(r.passed for r in results), {str(r.number): r.passed for r in results}


RUNNERS = {
    "bounds": run_bounds,
    "evolve-hierarchy": run_evolve,
    "correlations": run_correlations,
    "verify-duality": run_duality,
    "vlasov-study": run_vlasov,
    "kinetic": run_kinetic,
    "mc": run_mc,
    "verify": run_verify,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="binjump", description="Binary-jump hierarchy experiments")
    ap.add_argument("--version", action="version", version=f"binjump {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML config file (defaults are used for missing fields)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", default="runs", help="parent directory for run artifacts")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    over = {"experiment": args.command}
    if args.seed is not None:
        over["seed"] = args.seed
    try:
        cfg = load_config(args.config, over)
        d = _out_dir(cfg, args.out)
        ok, summary = RUNNERS[args.command](cfg, d)
    except (PicardConvergenceError, StiffnessError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_FAIL
    except (BinJumpError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    status = "pass" if ok else "fail"
    _write_manifest(d, cfg, status, summary)
    print(f"{args.command}: {status} -> {d}")
    return EXIT_OK if ok else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
