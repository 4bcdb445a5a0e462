"""Command line interface: ``ktree <command> --system PATH [options]``.

Exit codes: 0 all checks passed, 1 a check failed, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import math
import sys as _sys
import warnings
from pathlib import Path

import numpy as np

from . import boundary, completion, resistance, splitting, weights
from .kernel import (
    DEFAULT_PSD_TOL,
    DepthOverflowError,
    PreconditionError,
    SubinvarianceError,
    TowerCache,
    gram,
    is_psd,
    verify_subinvariance,
)
from .report import dumps, to_csv
from .systems import ConfigError, FiniteSystem, eigen_seed, finite_document, load_system_file, random_maps

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _check(ok: bool, value=None, tol=None) -> dict:
    return {"ok": bool(ok), "value": value, "tol": tol}


def _point(system, text, default=None):
    if text is None:
        if default is None:
            raise UsageError("a point is required")
        return default
    try:
        return system.parse_point(str(text))
    except ValueError as exc:
        raise UsageError(f"bad point {text!r}: {exc}") from None


def _list(text, cast):
    try:
        return [cast(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad list {text!r}: {exc}") from None


def _estimator(system, args):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        est = completion.InvariantCompletion(system, TowerCache(system), N_max=args.probe_depth, stall_tol=args.stall_tol)
    return est, [str(w.message) for w in caught]


# ---------------------------------------------------------------- commands


def cmd_verify(system, args):
    sample = list(system.sample_points)
    rep = verify_subinvariance(system, sample, args.tol)
    cache = TowerCache(system)
    for x in sample:
        cache.diagonals(x, args.depth)
    problems = cache.check_invariants()
    results = {"sample": sample, "lam_min": rep.lam_min, "gram_LK_minus_K": rep.gram.entries, "tower_problems": problems}
    checks = {"subinvariance": _check(rep.ok, rep.lam_min, args.tol), "tower_invariants": _check(not problems, len(problems), 1e-10)}
    return {"depth": args.depth}, results, checks


def cmd_tower(system, args):
    s = _point(system, args.s, system.sample_points[0])
    t = _point(system, args.t, s)
    cache = TowerCache(system)
    vals = cache.values(s, t, args.n)
    diag = cache.diagonals(s, args.n)
    results = {"value": vals[-1], "u_n_s": float(diag[-1])}
    table = [{"n": n, "K_n": v, "u_n_s": float(u)} for n, (v, u) in enumerate(zip(vals, diag))]
    herm = abs(cache.tower(t, s, args.n) - np.conj(vals[-1]))
    checks = {"hermitian": _check(herm <= 1e-10 * max(1.0, abs(vals[-1])), herm, 1e-10)}
    return {"n": args.n, "s": s, "t": t}, dict(results, table=table), checks


def cmd_resistance(system, args):
    s = _point(system, args.s, system.sample_points[0])
    N = args.depth if args.depth is not None else 8
    cache = TowerCache(system)
    rep = resistance.effective_resistance(system, cache, s, N)
    results = rep.to_dict()
    checks = {"sandwich": _check(rep.sandwich_ok, None, 1e-12)}
    try:
        oracle = resistance.resistance_oracle(system, cache, s, N)
    except DepthOverflowError:
        oracle = None
    results["oracle"] = oracle
    if oracle is not None:
        if math.isinf(oracle) or math.isinf(rep.R_N):
            agree = oracle == rep.R_N
            gap = 0.0 if agree else math.inf
        else:
            gap = abs(oracle - rep.R_N) / max(abs(oracle), 1e-300)
            agree = gap <= 1e-9
        checks["oracle"] = _check(agree, gap, 1e-9)
    results["table"] = results["per_level"]
    return {"depth": N, "s": s}, results, checks


def cmd_capacity(system, args):
    s = _point(system, args.s, system.sample_points[0])
    N = args.depth if args.depth is not None else 4096
    rep = resistance.capacity_series(system, None, s, N)
    results = rep.to_dict()
    results["table"] = [{"k": k, "term": t} for k, t in enumerate(rep.terms)]
    return {"depth": N, "s": s}, results, {}


def cmd_complete(system, args):
    s = _point(system, args.s, system.sample_points[0])
    t = _point(system, args.t, s)
    est, notes = _estimator(system, args)
    probes = {"s": est.probe(s).to_dict(), "t": est.probe(t).to_dict()}
    results = {"probes": probes, "warnings": notes}
    if not (est.in_xfin(s) and est.in_xfin(t)):
        results["estimate"] = None
        return {"s": s, "t": t, "probe_depth": args.probe_depth}, results, {"in_xfin": _check(False)}
    results["estimate"] = est.estimate(s, t).to_dict()
    sample = [x for x in system.sample_points if est.in_xfin(x)]
    checks = {"in_xfin": _check(True)}
    if sample:
        inv = completion.invariance_residual(system, est, sample)
        psd = is_psd(gram(est, sample), args.tol)
        results["invariance_residual"] = {"residual": inv.residual, "allowance": inv.allowance, "sample": sample}
        checks["invariance"] = _check(inv.ok, inv.residual, inv.allowance + 1e-12)
        checks["gram_psd"] = _check(psd.ok, psd.lam_min, args.tol)
    return {"s": s, "t": t, "probe_depth": args.probe_depth, "stall_tol": args.stall_tol}, results, checks


def cmd_parseval(system, args):
    est, notes = _estimator(system, args)
    if args.points:
        pts = [_point(system, p) for p in args.points.split(",")]
    else:
        pts = [_point(system, args.s, system.sample_points[0])]
    coeffs = _list(args.coeffs, complex) if args.coeffs else [1.0] * len(pts)
    if len(coeffs) != len(pts):
        raise UsageError("need one coefficient per point")
    for x in pts:
        if not est.in_xfin(x):
            return {"points": pts}, {"warnings": notes, "probe": est.probe(x).to_dict()}, {"in_xfin": _check(False)}
    f = splitting.SectionVector(tuple(pts), coeffs)
    n = args.n if args.n is not None else 4
    dp = splitting.parseval_residual(system, est, f, n)
    results = {"norm2": f.norm2(est), "residual": dp, "warnings": notes}
    checks = {"parseval": _check(dp <= 1e-8, dp, 1e-8)}
    if system.m**n <= 4096:
        enum = splitting.parseval_residual(system, est, f, n, method="enum")
        results["residual_enum"] = enum
        checks["parseval_enum"] = _check(enum <= 1e-8, enum, 1e-8)
    iso = splitting.isometry_gram_residual(system, est, pts, n)
    results["isometry_residual"] = iso
    checks["isometry"] = _check(iso <= 1e-8, iso, 1e-8)
    return {"points": pts, "coeffs": coeffs, "n": n}, results, checks


def cmd_martingale(system, args):
    if args.seed is None:
        raise UsageError("--seed is required for sampling commands")
    s = _point(system, args.s, system.sample_points[0])
    t = _point(system, args.t, s)
    N = args.depth if args.depth is not None else 10
    est, notes = _estimator(system, args)
    inputs = {"s": s, "t": t, "depth": N, "paths": args.paths, "seed": args.seed}
    for x in (s, t):
        if not est.in_xfin(x):
            return inputs, {"warnings": notes, "refused": f"point {x!r} is not in X_fin"}, {"in_xfin": _check(False)}
    try:
        run = boundary.simulate_boundary(system, est, s, t, N, args.paths, args.seed)
    except PreconditionError as exc:
        Bs = boundary.b_functional(system, est, s).to_dict()
        return inputs, {"warnings": notes, "refused": str(exc), "B_s": Bs}, {"B_certified": _check(False)}
    n_exact = min(4, N)
    steps = boundary.step_check_all(system, est, s, t, min(6, N))
    mean = boundary.mean_enumerated(system, est, s, t, min(5, N))
    sq = boundary.square_function_exact(system, est, s, t, n_exact)
    mc = boundary.square_function_mc(run)
    coc = max(
        boundary.cocycle_check(system, est, s, t, n, w[0], w[1:])["cocycle"]
        for n in range(min(N, 10))
        for w in [boundary.BoundaryPath(boundary.path_seed(args.seed, n), system.m).prefix(n + 1)]
    )
    pts = list(dict.fromkeys([s, t] + [x for x in system.sample_points if est.in_xfin(x)]))
    paths = boundary.path_checks(system, est, pts, N, min(args.paths, 1000), args.seed)
    results = dict(run.summary)
    results.update(
        {
            "B_s": run.B_s,
            "B_t": run.B_t,
            "one_step_excess": steps,
            "mean_enumerated": mean,
            "square_function_exact": sq,
            "square_function_mc": mc,
            "cocycle_residual": coc,
            "path_checks": paths,
            "warnings": notes,
        }
    )
    checks = {
        "one_step": _check(steps <= 1e-10, steps, 1e-10),
        "mean": _check(abs(mean - run.K_inf) <= 1e-10 * max(1.0, abs(run.K_inf)), abs(mean - run.K_inf), 1e-10),
        "square_function": _check(sq["residual"] <= 1e-10, sq["residual"], 1e-10),
        "cocycle": _check(coc <= 1e-12, coc, 1e-12),
        "mean_within_5se": _check(run.summary["mean_within_5se"], run.summary["z_score"], 5),
        "L2_bound": _check(run.summary["L2_bound_ok"], run.summary["second_moment_M_N"], run.summary["L2_bound"]),
        "domination": _check(paths["domination_failures"] == 0, paths["domination_failures"], 0),
        "path_gram_psd": _check(paths["psd_failures"] == 0, paths["min_relative_eigenvalue"], args.tol),
    }
    results["_csv"] = boundary.samples_csv(run)
    return inputs, results, checks


def cmd_weights(system, args):
    if not args.weight:
        raise UsageError("--weight PATH is required")
    f = weights.CylinderWeight.load(args.weight, system.m)
    s = _point(system, args.s, system.sample_points[0])
    t = _point(system, args.t, s)
    n_max = args.depth if args.depth is not None else 3
    est, notes = _estimator(system, args)
    sample = list(dict.fromkeys([s, t] + list(system.sample_points)))
    inputs = {"weight": f.to_json(), "s": s, "t": t, "depth": n_max, "sample": sample}
    bad = [x for x in sample if not est.in_xfin(x)]
    if bad:
        return inputs, {"warnings": notes, "refused": f"points {bad!r} are not in X_fin"}, {"in_xfin": _check(False)}
    J = weights.weighted_kernel(system, est, f, s, t)
    oracle = [weights.integral_oracle(system, est, f, s, t, f.depth + d) for d in range(3)]
    ogap = max(abs(o - J) / max(1.0, abs(J)) for o in oracle)
    one = weights.CylinderWeight.constant(system.m, 1.0)
    j1 = max(abs(weights.weighted_kernel(system, est, one, a, b) - est(a, b)) for a in sample for b in sample)
    shift = weights.shift_identity_check(system, est, f, sample)
    star = weights.star_weight_majorant(system, est, f, n_max, sample, args.tol)
    seed = 0 if args.seed is None else args.seed
    occ = weights.occupancy_check(system.m, max(f.depth, 1), 10**5, seed)
    results = {
        "J_f": J,
        "integral_oracle": oracle,
        "J_1_residual": j1,
        "shift_residual": shift,
        "star": star,
        "occupancy": occ,
        "warnings": notes,
    }
    checks = {
        "integral_oracle": _check(ogap <= 1e-10, ogap, 1e-10),
        "J_1": _check(j1 <= 1e-12, j1, 1e-12),
        "shift_identity": _check(shift <= 1e-10, shift, 1e-10),
        "star_orbit": _check(star["orbit_ok"], None, args.tol),
        "star_superharmonic": _check(star["superharmonic_ok"], star["superharmonic_lam_min"], args.tol),
        "occupancy": _check(occ["ok"], occ["seen"], occ["words"]),
    }
    inputs["occupancy_seed"] = seed
    return inputs, results, checks


def cmd_eigenseed(system, args):
    if system is not None:
        if system.finite is None:
            raise UsageError("eigenseed needs a finite system")
        fin = system.finite
        inputs = {"system": args.system}
    else:
        if args.p is None or args.m is None or args.seed is None:
            raise UsageError("give --system or all of --p, --m, --seed")
        fin = random_maps(args.p, args.m, np.random.default_rng(args.seed))
        inputs = {"p": args.p, "m": args.m, "seed": args.seed}
    support = _list(args.support, int) if args.support else None
    inputs.update({"iters": args.iters, "support": support})
    try:
        es = eigen_seed(FiniteSystem(fin.maps), args.iters, args.eig_tol, support)
    except PreconditionError as exc:
        return inputs, {"error": str(exc)}, {"eigen_seed": _check(False)}
    rep = verify_subinvariance(es.system.system(), list(range(es.system.p)), args.tol)
    results = {
        "rho": es.rho,
        "residual": es.residual,
        "converged": es.converged,
        "support": list(es.support),
        "rho_squared_minus_m": es.rho**2 - fin.m,
        "system": finite_document(es.system),
    }
    checks = {
        "converged": _check(es.converged, es.residual, args.eig_tol),
        "subinvariance": _check(rep.ok, rep.lam_min, args.tol),
    }
    return inputs, results, checks


COMMANDS = {
    "verify": cmd_verify,
    "tower": cmd_tower,
    "resistance": cmd_resistance,
    "capacity": cmd_capacity,
    "complete": cmd_complete,
    "parseval": cmd_parseval,
    "martingale": cmd_martingale,
    "weights": cmd_weights,
    "eigenseed": cmd_eigenseed,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ktree", description="Kernel towers on word trees: checks and reports.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--system", help="system document (JSON)", required=name != "eigenseed")
        p.add_argument("--tol", type=float, default=DEFAULT_PSD_TOL, help="relative PSD tolerance")
        p.add_argument("--out", help="write the report here instead of stdout")
        p.add_argument("--format", choices=["json", "csv"], default="json")
        p.add_argument("--s")
        p.add_argument("--t")
        p.add_argument("--seed", type=int)
        p.add_argument("--probe-depth", type=int, default=64, help="tower depth for the X_fin probe")
        p.add_argument("--stall-tol", type=float, default=1e-12)
        if name in ("verify", "resistance", "capacity", "martingale", "weights"):
            p.add_argument("--depth", type=int, default=5 if name == "verify" else None)
        if name in ("tower", "parseval"):
            p.add_argument("--n", type=int, default=0 if name == "tower" else None)
        if name == "parseval":
            p.add_argument("--points", help="comma-separated support points")
            p.add_argument("--coeffs", help="comma-separated coefficients")
        if name == "martingale":
            p.add_argument("--paths", type=int, default=1000)
        if name == "weights":
            p.add_argument("--weight", help="weight document (JSON)")
        if name == "eigenseed":
            p.add_argument("--p", type=int)
            p.add_argument("--m", type=int)
            p.add_argument("--support", help="comma-separated face support")
            p.add_argument("--iters", type=int, default=2**40)
            p.add_argument("--eig-tol", type=float, default=1e-10)
    return ap


def _validate(args):
    if args.tol <= 0 or args.stall_tol <= 0:
        raise UsageError("tolerances must be > 0")
    for name in ("depth", "n", "paths", "p", "m", "iters"):
        v = getattr(args, name, None)
        if v is not None and v < 0:
            raise UsageError(f"--{name} must be >= 0")
    if getattr(args, "paths", None) == 0:
        raise UsageError("--paths must be >= 1")
    if args.probe_depth < 2:
        raise UsageError("--probe-depth must be >= 2")


def run(argv=None) -> tuple[int, dict | None]:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return (EXIT_USAGE if exc.code else EXIT_OK), None
    try:
        _validate(args)
        system = load_system_file(args.system) if args.system else None
        inputs, results, checks = COMMANDS[args.command](system, args)
    except (UsageError, ConfigError, DepthOverflowError, FileNotFoundError) as exc:
        print(f"ktree: error: {exc}", file=_sys.stderr)
        return EXIT_USAGE, None
    except (SubinvarianceError, PreconditionError) as exc:
        print(f"ktree: check failed: {exc}", file=_sys.stderr)
        return EXIT_CHECK, None
    csv_text = results.pop("_csv", None)
    passed = all(c["ok"] for c in checks.values())
    params = {k: v for k, v in vars(args).items() if k not in ("command",)}
    report = {
        "command": args.command,
        "inputs": dict(params, **inputs),
        "results": results,
        "checks": checks,
        "passed": passed,
    }
    if args.format == "csv":
        text = csv_text if csv_text is not None else to_csv(dict(results, passed=passed))
    else:
        text = dumps(report)
    if args.out:
        Path(args.out).write_text(text)
    else:
        _sys.stdout.write(text)
    return (EXIT_OK if passed else EXIT_CHECK), report


def main(argv=None) -> int:
    return run(argv)[0]


if __name__ == "__main__":
    raise SystemExit(main())
