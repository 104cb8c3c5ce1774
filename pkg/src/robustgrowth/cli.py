"""Command-line front end.

Subcommands: ``catalog``, ``validate``, ``solve``, ``audit``, ``simulate`` and
``verify``.  Exit codes: 0 success, 2 input or validation error, 3 solver or
simulation failure, 4 verification failure.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .exceptions import ModelError, RobustGrowthError, StepRejectionOverflow
from .io import ConfigError, load_json, write_csv, write_json, write_manifest

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME, EXIT_VERIFY = 0, 2, 3, 4


class InputError(Exception):
    """Problem with the command line or the input documents."""


# ---------------------------------------------------------------- helpers

def _parse_grid(text):
    if text is None:
        return None
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError:
        raise InputError(f"--grid expects N or N,N,...; got {text!r}") from None
    if any(v < 3 for v in vals):
        raise InputError("--grid values must be at least 3")
    return vals


def _load_model(args):
    """Return ``(model, oracle, default_grid, config_path)`` from ``--model`` or ``--example``."""
    from .catalog import get_entry, model_from_config
    if bool(args.model) == bool(args.example):
        raise InputError("give exactly one of --model PATH or --example NAME")
    if args.example:
        try:
            entry = get_entry(args.example)
        except KeyError as exc:
            raise InputError(exc.args[0]) from None
        model, oracle = entry.build(eps=args.eps)
        return model, oracle, entry.grid, None
    path = Path(args.model)
    doc = load_json(path)
    if args.eps is not None:
        doc = dict(doc)
        if "domain" in doc:
            doc["domain"] = {**doc["domain"], "boundary_eps": args.eps}
        doc["eps"] = args.eps
    try:
        model = model_from_config(doc, base_dir=path.parent)
    except ModelError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: bad model document ({type(exc).__name__}: {exc})") from None
    oracle = None
    if doc.get("family") == "example":
        entry = get_entry(doc["params"]["name"])
        oracle = entry.build(eps=model.domain.boundary_eps)[1]
        return model, oracle, doc.get("grid", entry.grid), path
    return model, oracle, doc.get("grid"), path


def _solve(args):
    from .pipeline import solve_model
    model, oracle, default_grid, cfg = _load_model(args)
    grid_n = _parse_grid(args.grid) or default_grid
    solved = solve_model(model, grid_n, validate=True)
    return solved, oracle, cfg


def _sim_config(args):
    from .simulate import SimConfig
    policy = "reject" if args.policy == "reject-and-halve" else args.policy
    try:
        return SimConfig(T=args.T, dt=args.dt, n_paths=args.paths, seed=args.seed,
                         boundary_policy=policy, n_record=args.record)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _e_rows(grid, *fields):
    pts = grid.e_points.reshape(-1, grid.d)
    cols = [pts] + [np.asarray(f).reshape(len(pts), -1) for f in fields]
    return np.concatenate(cols, axis=1)


# ---------------------------------------------------------------- commands

def cmd_catalog(args, out):
    from .catalog import list_entries
    entries = list_entries()
    for e in entries:
        print(f"{e['name']:<20} grid {e['grid']:<4} eps {e['eps']:<8g} {e['description']}")
    if out:
        write_json(out / "catalog.json", entries)
    return EXIT_OK


def cmd_validate(args, out):
    from .model import build_grid, validate_model
    from .pipeline import grid_sizes
    model, _, default_grid, cfg = _load_model(args)
    grid = build_grid(model.domain, grid_sizes(model, _parse_grid(args.grid) or default_grid))
    report = validate_model(model, grid)
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<28} {c.value:.6g}  {c.detail}")
    if out:
        write_json(out / "validation.json", report.to_dict())
    if not report.passed:
        print("validation failed: " + ", ".join(report.failed()), file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def cmd_solve(args, out):
    solved, oracle, cfg = _solve(args)
    phi, grid = solved.phi, solved.grid
    names = [f"x{k + 1}" for k in range(grid.d)]
    header = names + ["phi"] + [f"theta{k + 1}" for k in range(grid.d)]
    write_csv(out / "phi.csv", header, _e_rows(grid, phi.phi, phi.grad).tolist())
    lam = {"lambda": phi.lambda_, "method": phi.method, "gradient_case": phi.gradient_case}
    if oracle is not None and oracle.lambda_truncated is not None:
        lam["lambda_closed_form_truncated"] = oracle.lambda_truncated
    if oracle is not None and oracle.lambda_exact is not None:
        lam["lambda_closed_form"] = oracle.lambda_exact
    write_json(out / "lambda.json", lam)
    diag = {"validation": solved.validation.to_dict(), "residual": phi.residual,
            "energy": phi.energy, "gauge_offset": phi.gauge_offset, "grid": list(grid.shape),
            "boundary_eps": grid.domain.boundary_eps, "solver": phi.diagnostics}
    write_json(out / "diagnostics.json", diag)
    print(f"lambda = {phi.lambda_:.12g} ({phi.method})")
    return EXIT_OK


def cmd_audit(args, out):
    from .assumptions import audit_assumptions, test_function_energies
    solved, _, cfg = _solve(args)
    report = audit_assumptions(solved.model, solved.avg, k_exponent=args.k)
    write_json(out / "audit.json", report.to_dict())
    if solved.grid.d == 1 and solved.grid.m == 1:
        tab = test_function_energies(solved.avg, tuple(args.schedule))
        write_csv(out / "energies.csv", ["n", "E_phi", "E_psi"],
                  [[r["n"], r["E_phi"], r["E_psi"]] for r in tab.to_rows()])
    c = report.concavity
    print(f"{'PASS' if c.passed else 'FAIL'}  concavity of rho (k = {c.k:g}), margin {c.margin:.3g}")
    for s in report.sweeps:
        print(f"{'PASS' if s.passed else 'FAIL'}  {s.name:<44} rel change {s.rel_change:<9.3g} "
              f"trend ratio {s.trend_ratio:.3g}")
    print("assumption audit " + ("passed" if report.passed else "flagged violations"))
    return EXIT_OK


def cmd_simulate(args, out):
    from .pipeline import worst_case
    from .simulate import (competitor_strategies, ergodic_table, estimate_growth,
                           simulate_reference, simulate_worst_case)
    cfg = _sim_config(args)
    solved, _, _ = _solve(args)
    grid, phi = solved.grid, solved.phi
    strategies = competitor_strategies(grid, phi)
    if args.measure == "worst-case":
        kmod, vsol = worst_case(solved)
        res = simulate_worst_case(solved.model, kmod, phi, vsol, cfg, strategies)
    else:
        strategies = {"theta_hat": phi.grad, **strategies}
        res = simulate_reference(solved.model, solved.drift, cfg, strategies,
                                 sample=solved.sample)
    names = [n for n in res.strategy_names]
    growth = [r.to_dict() for r in estimate_growth(res, names, phi.lambda_)] \
        if res.n_paths >= 16 else \
        [{"strategy": n, "g_hat": res.growth(n)[0], "se": res.growth(n)[1],
          "lambda": phi.lambda_, "within_tolerance": None} for n in names]
    ergodic = ergodic_table(res, solved.sample.p)
    summary = {"measure": args.measure, "config": cfg.to_dict(), "lambda": phi.lambda_,
               "method": phi.method, "grid": list(grid.shape), "growth": growth,
               "quadratic_variation_rate": {n: res.qv_rate(n) for n in names},
               "ergodic_averages": ergodic, "rejection_ratio": res.rejection_ratio}
    if "mismatch" in res.extras:
        mis = res.extras["mismatch"]
        summary["wealth_formula_mismatch"] = {"mean": float(np.mean(mis)),
                                              "max_abs": float(np.max(np.abs(mis)))}
    write_json(out / "summary.json", summary)
    rows = []
    from .simulate import marginal_on_axis, reference_bin_mass
    for coord in range(grid.d + grid.m):
        edges = res.bin_edges(coord)
        nodes, dens = marginal_on_axis(grid, solved.sample.p, coord)
        ref = reference_bin_mass(nodes, dens, edges)
        occ = res.occupation(coord)
        label = f"x{coord + 1}" if coord < grid.d else f"y{coord - grid.d + 1}"
        rows += [[label, edges[b], edges[b + 1], occ[b], ref[b]] for b in range(len(occ))]
    write_csv(out / "occupancy.csv", ["coordinate", "bin_lo", "bin_hi", "empirical", "quadrature"],
              rows)
    if res.recorded:
        rec = res.recorded
        zn = [f"x{k + 1}" for k in range(grid.d)] + [f"y{k + 1}" for k in range(grid.m)]
        header = ["path", "t"] + zn + [f"logV_{n}" for n in names]
        prow = []
        for p in range(res.n_paths):
            for i, t in enumerate(rec["t"]):
                prow.append([p, float(t), *map(float, rec["z"][p, i]),
                             *map(float, rec["logv"][p, i])])
        write_csv(out / "paths.csv", header, prow)
    for g in growth:
        print(f"{g['strategy']:<24} g = {g['g_hat']:.6f} +- {g['se']:.2g}")
    print(f"lambda = {phi.lambda_:.6f}")
    return EXIT_OK


def cmd_verify(args, out):
    from .catalog import get_entry
    from .verification import run_verification, verdict
    if not args.example:
        raise InputError("verify needs --example NAME")
    try:
        get_entry(args.example)
    except KeyError as exc:
        raise InputError(exc.args[0]) from None
    rows = run_verification(args.example, grid_n=_parse_grid(args.grid), eps=args.eps,
                            monte_carlo=not args.no_mc, T=args.T, dt=args.dt,
                            n_paths=args.paths, seed=args.seed)
    for r in rows:
        tag = r.status.upper() + ("" if r.primary else " (diagnostic)")
        print(f"{tag:<18} {r.name:<66} {r.value:<12.4g} tol {r.tolerance:<10.3g} {r.note}")
    if out:
        write_json(out / "verify.json", [r.to_dict() for r in rows])
        write_csv(out / "verify.csv", ["check", "value", "tolerance", "status", "primary", "note"],
                  [[r.name, r.value, r.tolerance, r.status, r.primary, r.note] for r in rows])
    ok = verdict(rows)
    print("verification " + ("passed" if ok else "FAILED"))
    return EXIT_OK if ok else EXIT_VERIFY


COMMANDS = {"catalog": cmd_catalog, "validate": cmd_validate, "solve": cmd_solve,
            "audit": cmd_audit, "simulate": cmd_simulate, "verify": cmd_verify}


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustgrowth",
        description="Robust growth-optimal functionally generated portfolios.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, sim=False):
        p.add_argument("--model", metavar="PATH", help="model config (JSON)")
        p.add_argument("--example", metavar="NAME", help="catalog entry name")
        p.add_argument("--grid", metavar="N[,N...]", help="nodes per axis")
        p.add_argument("--eps", type=float, help="boundary offset of the truncated box")
        p.add_argument("--out", metavar="DIR", default="out", help="output directory")
        if sim:
            p.add_argument("--T", type=float, default=2000.0, help="horizon")
            p.add_argument("--dt", type=float, default=1e-3, help="time step")
            p.add_argument("--paths", type=int, default=16, help="number of paths")
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--policy", choices=["reflect", "reject", "reject-and-halve"],
                           default="reflect", help="boundary policy")

    p = sub.add_parser("catalog", help="list builtin models")
    p.add_argument("--out", metavar="DIR", default=None)
    common(sub.add_parser("validate", help="check model inputs on the grid"))
    common(sub.add_parser("solve", help="optimal generating function and growth rate"))
    p = sub.add_parser("audit", help="numerical audit of the standing assumptions")
    common(p)
    p.add_argument("--k", type=float, default=1.0, help="exponent in the concavity check")
    p.add_argument("--schedule", type=int, nargs="+", default=[4, 8, 16, 32],
                   help="test-function indices n")
    p = sub.add_parser("simulate", help="simulate the worst-case or reference diffusion")
    common(p, sim=True)
    p.add_argument("--measure", choices=["worst-case", "reference"], default="worst-case")
    p.add_argument("--record", type=int, default=0, help="thinned samples per path in paths.csv")
    p = sub.add_parser("verify", help="run the verification suite on a catalog entry")
    common(p, sim=True)
    p.add_argument("--no-mc", action="store_true", help="skip the Monte Carlo checks")
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    out = Path(args.out) if getattr(args, "out", None) else None
    started = datetime.now(timezone.utc).isoformat()
    try:
        with warnings.catch_warnings():
            warnings.filterwarnings("ignore", message=".*TBB.*")
            code = COMMANDS[args.command](args, out)
    except (InputError, ConfigError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StepRejectionOverflow as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (RobustGrowthError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"runtime error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if out is not None and out.exists():
        cfg = getattr(args, "model", None)
        write_manifest(out, args.command, argv, cfg, getattr(args, "seed", None),
                       inputs=[cfg] if cfg else [], started=started)
    return code


if __name__ == "__main__":
    sys.exit(main())
