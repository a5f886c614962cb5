"""Command-line front end: ``dyrep SUBCOMMAND --config PATH [flags]``.

Exit codes: 0 when every asserted invariant holds, 1 on an invariant
violation (details in the report), 2 on input errors.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
import warnings
from fractions import Fraction

import numpy as np

from . import __version__
from . import config as cfgmod
from .exceptions import AuditWarning, DomainError, InputError
from .grid import (DyadicSystem, ancestor, goodness_probability, is_k_good, randomized_scales, realize_cube,
                   shift_ensemble)
from .haar import bessel_check, haar_basis, haar_matrix, haar_properties
from .operators import bmo_norm, haar_image_bound, l2_norm, testing_constants
from .report import emit_report, norm_table
from .representation import (SystemDecomposition, _sigma_label, estimate_norms, geometry_for, t1_aggregate,
                             verify_representation)
from .shifts import decompose_Qk, decompose_Rk, reconstruction_residual, shift_inventory, validate_shift
from .weak import a2_constant, cz_decompose, weak11_estimate, weighted_norm

SHIFT_TOL = 1e-12
HAAR_TOL = 1e-12


def _k_range(cfg: dict, lo: int) -> list[int]:
    if "k_values" in cfg:
        return [k for k in cfg["k_values"] if k >= lo]
    k_max = cfg.get("k_max", cfg["grid"]["N"] + 1)
    return list(range(lo, k_max + 1))


def _systems(cfg: dict, grid):
    return list(shift_ensemble(grid, cfg["mode"], cfg["seed"]))


def _decomposition(T, grid, sigma, cfg):
    geo = geometry_for(DyadicSystem(grid, sigma), T.mass, cfg["r"], cfg["normalization"])
    return SystemDecomposition(T, geo, cfgmod.build_omega(cfg))


def _setup(cfg, base, operator=True):
    grid = cfgmod.grid_of(cfg)
    mu = cfgmod.build_measure(cfg, base)
    T = cfgmod.build_operator(cfg, mu, base) if operator else None
    return grid, mu, T


# ------------------------------------------------------------------ commands

def cmd_verify_representation(cfg, base):
    grid, mu, T = _setup(cfg, base)
    f, g = cfgmod.pairing_functions(cfg, mu)
    rep = verify_representation(T, f, g, grid, cfg["r"], cfgmod.build_omega(cfg), cfg["mode"], cfg["seed"],
                                cfg["normalization"], cfg.get("k_max"))
    asserted = cfg["normalization"] == "measured"
    passed = rep.relative_residual <= cfg["tolerance"]
    out = {"report": rep.to_dict(), "residual_asserted": asserted, "passed": passed or not asserted}
    table = (("sigma", "total"), [(s["sigma"], s["total"]) for s in rep.per_system])
    return out, table, passed or not asserted


def cmd_haar_check(cfg, base):
    grid, mu, _ = _setup(cfg, base, operator=False)
    mass = mu.masses
    f, _ = cfgmod.pairing_functions(cfg, mu)
    massive = mass > 0
    rows, ok = [], True
    for sigma in _systems(cfg, grid):
        system = DyadicSystem(grid, sigma)
        basis = haar_basis(system, mass)
        props = [haar_properties(h, mass) for h in basis]
        H = haar_matrix(basis).reshape(len(basis), grid.n_cells)
        gram = (H * mass) @ H.T - np.eye(len(basis))
        recon = f - H.T @ (H @ (mass * f))
        f2 = float(np.dot(f * f, mass))
        bessel = max(bessel_check(f, k, system, mass) - f2 for k in (1, 2, 3))
        row = {
            "sigma": _sigma_label(sigma),
            "n_functions": len(basis),
            "support_ok": all(p["support_ok"] for p in props),
            "constant_on_children": all(p["constant_on_children"] for p in props),
            "max_abs_integral": max((abs(p["integral"]) for p in props), default=0.0),
            "max_norm_error": max((abs(p["norm2"] - 1) for p in props), default=0.0),
            "max_sup_times_l1": max((p["sup_times_l1"] for p in props), default=0.0),
            "gram_error": float(np.abs(gram).max()) if gram.size else 0.0,
            "reconstruction_error": float(np.abs(recon[massive]).max()) if massive.any() else 0.0,
            "bessel_excess": bessel,
        }
        ok &= (row["support_ok"] and row["constant_on_children"] and row["max_abs_integral"] <= HAAR_TOL
               and row["max_norm_error"] <= HAAR_TOL and row["max_sup_times_l1"] <= 2 + HAAR_TOL
               and row["gram_error"] <= HAAR_TOL and row["reconstruction_error"] <= HAAR_TOL
               and bessel <= HAAR_TOL)
        rows.append(row)
    header = tuple(rows[0]) if rows else ("sigma",)
    return {"systems": rows, "passed": bool(ok)}, (header, [tuple(r.values()) for r in rows]), bool(ok)


def cmd_goodness_stats(cfg, base):
    grid = cfgmod.grid_of(cfg)
    ideal = Fraction(1, 2**grid.d)
    systems = _systems(cfg, grid)
    out, rows, ok = {}, [], True
    for k in cfg.get("goodness_k", [2, 3]):
        cubes = []
        for level in range(1, grid.finest_level + 1):
            for cube in DyadicSystem(grid).cubes(level):
                p = goodness_probability(cube, k, "measured")
                full = len(randomized_scales(grid, level, k)) == k
                freq = sum(is_k_good(realize_cube(cube, s), k) for s in systems) / len(systems)
                if full and p != ideal:
                    ok = False
                cubes.append({"level": level, "coord": list(cube.coord), "measured": str(p),
                              "measured_value": float(p), "fully_randomized": full, "ensemble_frequency": freq})
                rows.append((k, level, " ".join(map(str, cube.coord)), str(p), float(ideal), full, freq))
        full_cubes = [c for c in cubes if c["fully_randomized"]]
        out[str(k)] = {"cubes": cubes, "fully_randomized_count": len(full_cubes),
                       "fully_randomized_all_ideal": all(c["measured"] == str(ideal) for c in full_cubes)}
    header = ("k", "level", "coord", "measured", "idealized", "fully_randomized", "ensemble_frequency")
    return ({"idealized_probability": float(ideal), "by_k": out, "passed": ok}, (header, rows), ok)


def cmd_estimate_norms(cfg, base):
    grid, mu, T = _setup(cfg, base)
    ks = _k_range(cfg, 1)
    rows = estimate_norms(T, grid, ks, cfg["r"], cfgmod.build_omega(cfg), cfg["mode"], cfg["seed"],
                          cfg["normalization"]) if ks else []
    header, table = norm_table(rows)
    return {"norms": [dict(zip(header, r)) for r in table]}, (header, table), True


def cmd_shift_decompose(cfg, base):
    grid, mu, T = _setup(cfg, base)
    ks = _k_range(cfg, 1)
    threshold = cfg["doubling_threshold"]
    rows, inventory, ok = [], {}, True
    for i, sigma in enumerate(_systems(cfg, grid)):
        dec = _decomposition(T, grid, sigma, cfg)
        for k in [s * k for k in ks for s in (1, -1)]:
            parts = [("R", decompose_Rk(dec, k), dec.R(k), dec.r + 1 if k > 0 else dec.r)]
            if abs(k) >= 2:
                parts.append(("Q", decompose_Qk(dec, k), dec.Q(k), 2 * (abs(k) + 1)))
            for name, shifts, target, expected in parts:
                res = reconstruction_residual(shifts, target)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", AuditWarning)
                    vals = [validate_shift(S, doubling_threshold=threshold, system=dec.system) for S in shifts]
                orth = max((v.residual for v in vals), default=0.0)
                const = max((v.kernel_constant for v in vals), default=0.0)
                doubling = all(v.kernel_bound_asserted for v in vals)
                ok &= len(shifts) == expected and res <= SHIFT_TOL and orth <= SHIFT_TOL
                rows.append((_sigma_label(sigma), k, name, len(shifts), expected, res, orth, const, doubling))
                if i == 0 and k > 0:
                    inventory[f"{name}[{k}]"] = shift_inventory(shifts)
    header = ("sigma", "k", "operator", "n_shifts", "expected_shifts", "reconstruction_residual",
              "max_orthogonality_residual", "max_kernel_constant", "doubling")
    results = {"rows": [dict(zip(header, r)) for r in rows], "inventory_first_system": inventory, "passed": ok}
    return results, (header, rows), ok


def cmd_t1_bound(cfg, base):
    grid, mu, T = _setup(cfg, base)
    omega = cfgmod.build_omega(cfg)
    ct, cts = testing_constants(T, mu, grid)
    image, witness = haar_image_bound(T, haar_basis(DyadicSystem(grid), mu.masses))
    ks = _k_range(cfg, 1)
    norms = estimate_norms(T, grid, ks, cfg["r"], omega, cfg["mode"], cfg["seed"], cfg["normalization"])
    para = 0.0
    for sigma in _systems(cfg, grid):
        p1, p2 = _decomposition(T, grid, sigma, cfg).paraproducts()
        para = max(para, l2_norm(p1).value, l2_norm(p2).value)
    agg = t1_aggregate(omega, norms, para)
    values = {"testing_T": ct, "testing_T_adjoint": cts, "haar_image_bound": image,
              "bmo_T1": bmo_norm(T.one(), mu, 2.0, grid), "bmo_Tadj1": bmo_norm(T.adjoint().one(), mu, 2.0, grid),
              "paraproduct_norm": para, "operator_norm": l2_norm(T).value, **agg}
    header, table = norm_table(norms)
    out = {"values": values, "norms": [dict(zip(header, r)) for r in table],
           "haar_image_witness": None if witness is None else
           {"level": witness[0].level, "coord": list(witness[0].coord), "index": witness[1]}}
    return out, (("quantity", "value"), sorted(values.items())), True


def cmd_a2_experiment(cfg, base):
    grid, mu, T = _setup(cfg, base)
    if np.ptp(mu.masses) != 0:
        raise InputError("a2-experiment needs the uniform (Lebesgue) measure")
    dec = _decomposition(T, grid, grid.zero_shift(), cfg)
    ks = _k_range(cfg, 1)
    results, rows = [], []
    for wid, w in cfgmod.build_weights(cfg, base):
        a2 = a2_constant(w, grid)
        entry = {"id": wid, "a2": a2, "by_k": {}}
        row = [wid, a2]
        for k in ks:
            shifts = decompose_Rk(dec, k)
            norm = max(weighted_norm(S.operator(), w).value for S in shifts)
            cx = max(S.complexity for S in shifts)
            entry["by_k"][str(k)] = {"shift_norm": norm, "complexity": cx, "ratio": norm / (a2 * cx),
                                     "R_norm": weighted_norm(dec.R(k), w).value}
            row += [norm, norm / (a2 * cx)]
        results.append(entry)
        rows.append(tuple(row))
    header = ("weight", "a2") + tuple(f"{n}_{k}" for k in ks for n in ("shift_norm", "ratio"))
    return {"weights": results}, (header, rows), True


def _cz_checks(cz, f, mass, system) -> dict:
    recon = float(np.abs(cz.reconstruct() - f)[mass > 0].max(initial=0.0))
    l1 = float(np.abs(f) @ mass)
    means = max((abs(float(b @ mass)) / max(1.0, float(np.abs(b) @ mass)) for b in cz.bad), default=0.0)
    disjoint = not any(J.level < I.level and ancestor(I, I.level - J.level) == J
                       for I in cz.cubes for J in cz.cubes if I is not J)
    from .measure import DiscreteMeasure
    dbl = DiscreteMeasure(system.config, mass).doubling_constant(system)
    g_sup = float(np.abs(cz.good[mass > 0]).max(initial=0.0))
    return {"reconstruction_error": recon, "max_bad_mean": means, "disjoint_maximal": disjoint,
            "omega_mass": float(mass[cz.omega].sum()), "omega_bound": l1 / cz.level,
            "good_l1": float(np.abs(cz.good) @ mass), "f_l1": l1, "good_sup": g_sup,
            "doubling_constant": dbl, "good_sup_bound": dbl * cz.level if math.isfinite(dbl) else math.inf}


def _cz_ok(c: dict) -> bool:
    return (c["reconstruction_error"] <= 1e-14 * max(1.0, c["f_l1"]) and c["max_bad_mean"] <= 1e-12
            and c["disjoint_maximal"] and c["omega_mass"] <= c["omega_bound"] * (1 + 1e-12)
            and c["good_l1"] <= c["f_l1"] * (1 + 1e-12) and c["good_sup"] <= c["good_sup_bound"] * (1 + 1e-12))


def _cz_level(cfg, f, mass):
    lam = cfg.get("cz", {}).get("lambda")
    return lam if lam is not None else 2 * float(np.abs(f) @ mass) / mass.sum()


def cmd_weak11_check(cfg, base):
    grid, mu, T = _setup(cfg, base)
    systems = _systems(cfg, grid)
    ks = _k_range(cfg, 2)
    names = ("R", "Q", "R_adj", "Q_adj")
    best = {k: dict.fromkeys(names, 0.0) for k in ks}
    for sigma in systems:
        dec = _decomposition(T, grid, sigma, cfg)
        for k in ks:
            for name, U in zip(names, (dec.R(k), dec.Q(k), dec.R(-k), dec.Q(-k))):
                best[k][name] = max(best[k][name], weak11_estimate(U, system=dec.system).value)
    ratios = {}
    for name in names:
        per_k = [best[k][name] / k for k in ks]
        lo = min(per_k, default=0.0)
        ratios[name] = (max(per_k) / lo if lo > 0 else math.inf) if per_k else None
    f = cfgmod.cz_function(cfg, mu)
    system = DyadicSystem(grid)
    cz = cz_decompose(f, _cz_level(cfg, f, mu.masses), mu, system)
    checks = _cz_checks(cz, f, mu.masses, system)
    ok = _cz_ok(checks)
    rows = [(k, *(best[k][n] for n in names), *(best[k][n] / k for n in names)) for k in ks]
    header = ("k",) + names + tuple(f"{n}_over_k" for n in names)
    out = {"estimates": [dict(zip(header, r)) for r in rows], "max_over_min_of_estimate_over_k": ratios,
           "cz_checks": checks, "passed": ok}
    return out, (header, rows), ok


def cmd_cz_decompose(cfg, base):
    grid, mu, _ = _setup(cfg, base, operator=False)
    system = DyadicSystem(grid)
    f = cfgmod.cz_function(cfg, mu)
    lam = _cz_level(cfg, f, mu.masses)
    cz = cz_decompose(f, lam, mu, system)
    checks = _cz_checks(cz, f, mu.masses, system)
    ok = _cz_ok(checks)
    cubes = []
    for J in cz.cubes:
        sel = J.cell_mask()
        m = float(mu.masses[sel].sum())
        cubes.append((J.level, " ".join(map(str, J.coord)), m, float(f[sel] @ mu.masses[sel]) / m))
    header = ("level", "coord", "mass", "average")
    return ({"lambda": lam, "cubes": [dict(zip(header, c)) for c in cubes], "checks": checks, "passed": ok},
            (header, cubes), ok)


COMMANDS = {
    "verify-representation": (cmd_verify_representation, "check the averaged representation identity"),
    "haar-check": (cmd_haar_check, "audit the measure-adapted Haar bases"),
    "goodness-stats": (cmd_goodness_stats, "exact goodness probabilities per reference cube"),
    "estimate-norms": (cmd_estimate_norms, "L2 norms of R_k and Q_k over the ensemble"),
    "shift-decompose": (cmd_shift_decompose, "split R_k and Q_k into dyadic shifts"),
    "t1-bound": (cmd_t1_bound, "testing constants, paraproducts and the aggregated bound"),
    "a2-experiment": (cmd_a2_experiment, "weighted norms of shifts against [w]_A2"),
    "weak11-check": (cmd_weak11_check, "weak-(1,1) estimates and CZ invariants"),
    "cz-decompose": (cmd_cz_decompose, "Calderon-Zygmund decomposition of a function"),
}


def _u64(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config JSON path, or bundled:NAME (env DYREP_CONFIG)")
    common.add_argument("--seed", type=_u64, help="RNG seed (env DYREP_SEED)")
    common.add_argument("--out", help="output directory (env DYREP_OUT)")
    common.add_argument("--format", choices=("json", "csv"), help="report format (env DYREP_FORMAT)")
    common.add_argument("--mode", help="exhaustive or mc:COUNT (env DYREP_MODE)")
    common.add_argument("--normalization", choices=("measured", "idealized"),
                        help="goodness weights (env DYREP_NORMALIZATION)")
    parser = argparse.ArgumentParser(prog="dyrep", description="Finitary dyadic representation experiments.")
    parser.add_argument("--version", action="version", version=f"dyrep {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", required=True)
    for name, (_, helptext) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=helptext, description=helptext)
    return parser


def run(argv=None, environ=None) -> int:
    environ = os.environ if environ is None else environ
    args = build_parser().parse_args(argv)
    source = args.config or environ.get("DYREP_CONFIG")
    try:
        if not source:
            raise InputError("no config given (use --config or DYREP_CONFIG)")
        raw, base = cfgmod.load_config(source)
        overrides = {"seed": args.seed, "mode": args.mode, "out": args.out, "format": args.format,
                     "normalization": args.normalization}
        cfg = cfgmod.resolve(raw, overrides, environ)
        func = COMMANDS[args.command][0]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AuditWarning)
            results, table, ok = func(cfg, base)
        # the output directory is where the report goes, not part of the experiment
        embedded = {**cfg, "output": {"format": cfg["output"]["format"]}}
        # built-in kernels have no diagonal value; other operators carry their own
        diagonal = "zero" if cfg["operator"]["kind"] == "kernel" else "as given"
        conventions = {"kernel_diagonal": diagonal, "goodness_normalization": cfg["normalization"],
                       "zero_mass_average": 0}
        payload = {"command": args.command, "config": embedded, "conventions": conventions, "seed": cfg["seed"],
                   "version": __version__, "exit_status": 0 if ok else 1, "results": results}
        path = emit_report(payload, cfg["output"]["dir"], args.command, cfg["output"]["format"], table)
    except (InputError, DomainError) as exc:
        print(f"dyrep: error: {exc}", file=sys.stderr)
        return 2
    print(f"{args.command}: {'ok' if ok else 'INVARIANT VIOLATION'} -> {path}")
    return 0 if ok else 1


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
