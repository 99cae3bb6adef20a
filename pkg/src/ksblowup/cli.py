"""Command-line entry point for the blow-up pipeline: green, critpoints, construct, verify.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings

import numpy as np

from .config import RunConfig
from .errors import NumericalFailure, ValidationError

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


def _epsilons(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad epsilon list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--output", help="output directory")
    common.add_argument("--beta", type=float)
    common.add_argument("--k", type=int, help="number of interior points")
    common.add_argument("--l", type=int, help="number of boundary points")
    common.add_argument("--weight", help="V as an expression in x1, x2")
    common.add_argument("--epsilons", type=_epsilons, help="comma separated schedule")
    common.add_argument("--p", type=float)
    common.add_argument("--delta", type=float)
    common.add_argument("--target-h", type=float, dest="target_h")
    common.add_argument("--resolution", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    common.add_argument("--dry-run", action="store_true", help="validate and print the plan only")

    p = argparse.ArgumentParser(prog="ksblowup", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("green", parents=[common], help="Robin and Green tables at the configuration points")
    g.add_argument("--heatmap", action="store_true", help="SVG of G(., xi_1)")
    c = sub.add_parser("critpoints", parents=[common], help="critical points of the reduced functional")
    c.add_argument("--mode", choices=["minimize", "stationary"], default="minimize")
    c.add_argument("--scan", type=int, default=0, help="grid size for an F landscape scan (k=1 or k=0,l=2)")
    k = sub.add_parser("construct", parents=[common], help="build the solution family over the schedule")
    k.add_argument("--locate", action="store_true", help="move the points to a critical point first")
    k.add_argument("--save-fields", action="store_true", help="write mesh and u fields")
    v = sub.add_parser("verify", parents=[common], help="epsilon sweep and acceptance report")
    v.add_argument("--gradient-check", action="store_true", help="finite-difference energy gradient at eps=0.05")
    v.add_argument("--acceptance", action="store_true", help="run the full acceptance battery")
    return p


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    return cfg.with_overrides(output=args.output, beta=args.beta, k=args.k, l=args.l, weight=args.weight,
                              epsilons=args.epsilons, p=args.p, delta=args.delta, target_h=args.target_h,
                              resolution=args.resolution, seed=args.seed)


def _write(path: str, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


# ---------------------------------------------------------------- commands

def cmd_green(cfg: RunConfig, heatmap: bool = False) -> dict:
    from .fem import write_field_csv
    from .geometry import write_mesh
    from .green import regular_part, green_eval, write_robin_table
    from .plots import heatmap_svg
    from .reduced import search_operator

    domain = cfg.domain_spec()
    conf = cfg.configuration()
    op, radii = search_operator(domain, conf, cfg.beta, cfg.resolution)
    pts = conf.points(domain)
    caches = [regular_part(op, p, r, b) for p, r, b in zip(pts, radii, conf.flags)]
    out = cfg.output
    os.makedirs(out, exist_ok=True)
    write_robin_table(os.path.join(out, "robin.csv"), caches)
    write_mesh(os.path.join(out, "mesh.txt"), op.mesh)
    for i, c in enumerate(caches):
        write_field_csv(os.path.join(out, f"H_{i}.csv"), c.H)
    if heatmap:
        n = 60
        lo, hi = op.mesh.nodes.min(axis=0), op.mesh.nodes.max(axis=0)
        xs, ys = np.linspace(lo[0], hi[0], n), np.linspace(lo[1], hi[1], n)
        X, Y = np.meshgrid(xs, ys)
        grid = np.column_stack([X.ravel(), Y.ravel()])
        inside = domain.signed_distance(grid) < -1e-9
        inside &= np.linalg.norm(grid - pts[0], axis=1) > 1e-9
        vals = np.full(len(grid), np.nan)
        vals[inside] = green_eval(caches[0], grid[inside])
        _write(os.path.join(out, "green.svg"), heatmap_svg(xs, ys, vals.reshape(n, n), "G(x, xi_1)"))
    return {"robin": [c.robin for c in caches], "points": pts.tolist(), "rho": [c.rho for c in caches]}


def cmd_critpoints(cfg: RunConfig, mode: str = "minimize", scan: int = 0) -> dict:
    from .plots import heatmap_svg
    from .reduced import boundary_pair_scan, find_critical, interior_scan, write_critical_report, write_scan_csv

    domain = cfg.domain_spec()
    conf = cfg.configuration()
    V = _weight(cfg, conf)
    res = find_critical(domain, conf, V, mode, cfg.beta, resolution=cfg.resolution)
    out = cfg.output
    os.makedirs(out, exist_ok=True)
    write_critical_report(os.path.join(out, "critical.csv"), [res])
    if scan and conf.k == 1 and conf.l == 0:
        lo, hi = np.array(domain_bounds(domain))
        xs, ys = np.linspace(lo[0], hi[0], scan), np.linspace(lo[1], hi[1], scan)
        X, Y = np.meshgrid(xs, ys)
        grid = np.column_stack([X.ravel(), Y.ravel()])
        ok = -domain.signed_distance(grid) >= conf.delta
        vals = np.full(len(grid), np.nan)
        vals[ok] = interior_scan(domain, V, grid[ok], beta=cfg.beta)
        with open(os.path.join(out, "scan.csv"), "w") as fh:
            fh.write("x1,x2,F\n")
            for (a, b), f in zip(grid[ok], vals[ok]):
                fh.write(f"{a:.12g},{b:.12g},{f:.12g}\n")
        _write(os.path.join(out, "landscape.svg"), heatmap_svg(xs, ys, vals.reshape(scan, scan), "F, one interior point"))
    elif scan and conf.k == 0 and conf.l == 2:
        s, F = boundary_pair_scan(domain, V, scan, cfg.beta)
        write_scan_csv(os.path.join(out, "scan.csv"), s, F)
        _write(os.path.join(out, "landscape.svg"), heatmap_svg(s, s, F.T, "F, two boundary points"))
    return {"config": res.config.vector().tolist(), "F": res.value, "gradient_norm": res.gradient_norm,
            "stability": res.stability, "hessian_eigenvalues": res.hessian_eigenvalues.tolist(),
            "iterations": res.iterations}


def domain_bounds(domain) -> tuple:
    if domain.shape in ("unit_disk", "annulus"):
        r = 1.0 if domain.shape == "unit_disk" else domain.r_out
        return (-r, -r), (r, r)
    v = domain.polygon_vertices
    return tuple(v.min(axis=0)), tuple(v.max(axis=0))


def _weight(cfg: RunConfig, conf):
    if not cfg.singular:
        return cfg.weight_function()
    from .reduced import search_operator
    return cfg.weight_function(search_operator(cfg.domain_spec(), conf, cfg.beta, cfg.resolution)[0])


def cmd_construct(cfg: RunConfig, locate: bool = False, save_fields: bool = False) -> dict:
    from .ansatz import build_state, configuration_mesh
    from .fem import write_field_csv
    from .geometry import write_mesh
    from .reduced import find_critical, reduced_functional
    from .reduction import (assemble_solution, expansion_constant, reduced_energy, solve_phi_fixed_point)
    from .verify import _clean, concentration_tests

    if not cfg.epsilons:
        raise ValidationError("empty schedule")
    domain = cfg.domain_spec()
    conf = cfg.configuration()
    V = _weight(cfg, conf)
    if locate:
        conf = find_critical(domain, conf, V, "minimize", cfg.beta, resolution=cfg.resolution).config
    pts = conf.points(domain)
    out = cfg.output
    os.makedirs(out, exist_ok=True)
    runs = []
    for eps in cfg.epsilons:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            op, r0, bd = configuration_mesh(domain, pts, eps, V, cfg.beta, boundary=conf.flags)
            state = build_state(op, pts, bd, eps, V, r0)
        res = solve_phi_fixed_point(state, p=cfg.p)
        sol = assemble_solution(state, res, seed=cfg.seed, tests=concentration_tests())
        m = state.mass_number
        F = reduced_functional(conf, state.greens, V)
        E = reduced_energy(state, res.phi.values)
        runs.append({
            "epsilon": eps, "lambda": sol.lam, "lambda_target": 4 * math.pi * m, "phi_norm": res.phi_norm,
            "contraction": res.contraction_estimate, "iterations": res.iterations,
            "radius_estimate": res.radius_estimate, "energy": E, "F": F,
            "energy_residual": E + 8 * math.pi * m * math.log(eps) - (expansion_constant(m) - 0.5 * F),
            "weak_residual": sol.weak_residual,
            "c_coefficients": {f"{i},{j}": v for (i, j), v in sorted(sol.coefficients.items())},
            "concentration": {k: list(v) for k, v in sorted(sol.concentration.items())},
            "taus": state.taus.tolist(), "nodes": state.mesh.n_nodes,
        })
        if save_fields:
            tag = f"{eps:g}"
            write_mesh(os.path.join(out, f"mesh_eps{tag}.txt"), state.mesh)
            write_field_csv(os.path.join(out, f"u_eps{tag}.csv"), sol.u)
    result = {"points": pts.tolist(), "k": conf.k, "l": conf.l, "runs": runs}
    _write(os.path.join(out, "construct.json"), json.dumps(_clean(result), indent=2, sort_keys=True) + "\n")
    return result


def cmd_verify(cfg: RunConfig, jobs: int = 1, gradient_check: bool = False, acceptance: bool = False):
    from .verify import criteria_csv, report_json, sweep, write_report

    if acceptance:
        from .checks import acceptance as run_all
        rows = run_all(jobs)
        os.makedirs(cfg.output, exist_ok=True)
        _write(os.path.join(cfg.output, "report.csv"), criteria_csv(rows))
        return rows
    report = sweep(cfg, jobs=jobs, gradient_check=gradient_check)
    write_report(report, cfg.output)
    return report


# ---------------------------------------------------------------- main

def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.dry_run:
            plan = {"command": args.command, "jobs": args.jobs, **cfg.plan()}
            print(json.dumps(plan, indent=2, sort_keys=True))
            return EXIT_OK
        if args.command == "green":
            res = cmd_green(cfg, args.heatmap)
            print(json.dumps(res, indent=2))
        elif args.command == "critpoints":
            res = cmd_critpoints(cfg, args.mode, args.scan)
            print(json.dumps(res, indent=2))
        elif args.command == "construct":
            res = cmd_construct(cfg, args.locate, args.save_fields)
            for r in res["runs"]:
                print(f"eps={r['epsilon']:g} lambda={r['lambda']:.6g} (target {r['lambda_target']:.6g}) "
                      f"phi={r['phi_norm']:.3e} contraction={r['contraction']:.3f}")
        else:
            res = cmd_verify(cfg, args.jobs, args.gradient_check, args.acceptance)
            rows = res if isinstance(res, list) else res.criteria
            for r in sorted(rows, key=lambda r: r.id):
                print(f"criterion {r.id:2d} {'PASS' if r.passed else 'FAIL'}  {r.name}: {r.value}")
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
