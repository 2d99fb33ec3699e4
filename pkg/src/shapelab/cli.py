"""Command-line entry point.

Subcommands: eigen (solve on the configured geometry), optimize (full run
into a run directory), diagnose (boundary-point audits of a run), audit
(quasi-minimality and perimeter/co-area of a run), oracle (closed-form
reference values), render (field to PGM).  Runs are plain directories —
config copy, binary fields, reports, and a digest manifest — so diagnose
and audit can re-derive everything deterministically without re-optimizing.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.  The
``--threads N`` flag is accepted on every subcommand as a worker hint; all
numeric kernels here are sequential, so results never depend on it.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .diagnostics import (blowup_audit, classify_point, density_theta,
                          harnack_quotient_audit, make_chart,
                          nondegeneracy_audit, optimality_residual,
                          perimeter_estimate, quasimin_audit,
                          refine_boundary_points, weiss_monotonicity_audit)
from .eigensolve import eigenfunction_field, solve_lowest
from .errors import (BadParams, DegenerateField, EmptyBoundary, NearZeroU1,
                     OutOfChart, ParseError, SchemaError, ShapeLabError,
                     TooFewSamples)
from .freeboundary import distance_field, extract_boundary, segment_midpoints
from .grid import Field, gradient_field
from .io import (RunConfig, parse_config, read_field, render_heatmap,
                 write_config, write_field, write_manifest, write_report)
from .operator import assemble_mass
from .optimizer import (ShapeState, components_audit, objective, optimize,
                        penalized_stiffness, relaxed_volume,
                        threshold_components)
from .oracle import optimal_ball, rectangle_eigenvalues


class _Usage(Exception):
    """Bad invocation or bad input files; maps to exit code 2."""


# --------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shapelab",
        description="Spectral shape optimization laboratory.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="worker count hint; results do not depend on it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eigen", parents=[common],
                       help="solve the lowest eigenpairs for a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("optimize", parents=[common],
                       help="run the shape optimization into a run directory")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("diagnose", parents=[common],
                       help="boundary-point audits of a finished run")
    p.add_argument("--run", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--points", type=int, default=20,
                       help="number of boundary points to sample")
    group.add_argument("--point", default=None, metavar="X,Y",
                       help="diagnose the boundary point nearest to X,Y")
    p.add_argument("--no-refine", action="store_true",
                   help="skip cone-vertex refinement for blow-up probes")

    p = sub.add_parser("audit", parents=[common],
                       help="quasi-minimality and perimeter audits of a run")
    p.add_argument("--run", required=True)
    p.add_argument("--trials", type=int, default=30)

    p = sub.add_parser("oracle", parents=[common],
                       help="closed-form reference values")
    p.add_argument("--case", required=True, choices=["square", "rect", "disk"])
    p.add_argument("--lambda", dest="lam", type=float, default=500.0)

    p = sub.add_parser("render", parents=[common],
                       help="render a stored field to a PGM image")
    p.add_argument("--field", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--component", type=int, default=0)
    return parser


def run(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        if code is None:
            return 0
        return code if isinstance(code, int) else 2
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be a positive integer", file=sys.stderr)
        return 2
    handlers = {"eigen": _cmd_eigen, "optimize": _cmd_optimize,
                "diagnose": _cmd_diagnose, "audit": _cmd_audit,
                "oracle": _cmd_oracle, "render": _cmd_render}
    try:
        return handlers[args.command](args)
    except _Usage as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ShapeLabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


# --------------------------------------------------------------------------
# shared loading helpers (input problems are usage errors, exit 2)


def _load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise _Usage(f"cannot read config {path}: {exc}") from exc
    try:
        return parse_config(text)
    except (ParseError, SchemaError) as exc:
        raise _Usage(f"{path}: {exc}") from exc


def _ensure_out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise _Usage(f"cannot create output directory {out}: {exc}") from exc
    return out


def _load_run(run_dir):
    run = Path(run_dir)
    rc = _load_config(run / "config.json")
    try:
        doc = json.loads((run / "state.json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise _Usage(f"cannot read {run / 'state.json'}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise _Usage(f"{run / 'state.json'}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "eps" not in doc:
        raise _Usage(f"{run / 'state.json'}: missing run state (key 'eps')")
    grid = rc.build_grid()
    cf = rc.build_coefficients(grid)
    try:
        phi = read_field(run / "phi.ssf", grid)
        chi = read_field(run / "chi.ssf", grid)
    except ShapeLabError as exc:
        raise _Usage(str(exc)) from exc
    return run, rc, grid, cf, phi, chi, doc


def _resolve_state(rc: RunConfig, grid, cf, phi, eps: float) -> ShapeState:
    """Re-solve the eigenbasis of a stored run state (deterministic)."""
    k_op = penalized_stiffness(grid, cf, phi, eps)
    m_op = assemble_mass(grid, cf)
    basis = solve_lowest(k_op, m_op, rc.k, tol=1e-8, seed=rc.seed)
    return ShapeState(phi=phi, eps=eps, lam_penalty=rc.lam, k=rc.k,
                      basis=basis, cf=cf, solver_tol=1e-8)


def _regen_manifest(run: Path) -> None:
    names = sorted(p.name for p in run.iterdir()
                   if p.is_file() and p.name != "manifest.json")
    write_manifest(run, names)


# --------------------------------------------------------------------------
# eigen


def _cmd_eigen(args) -> int:
    rc = _load_config(args.config)
    out = _ensure_out_dir(args.out)
    grid = rc.build_grid()
    cf = rc.build_coefficients(grid)
    phi0 = rc.build_phi0(grid)
    eps = grid.h ** 2 / 4.0 if rc.eps_min == "auto" else float(rc.eps_min)
    k_op = penalized_stiffness(grid, cf, phi0, eps)
    m_op = assemble_mass(grid, cf)
    basis = solve_lowest(k_op, m_op, rc.k, tol=1e-8, seed=rc.seed)
    u = eigenfunction_field(m_op, basis)
    write_config(rc.effective, out / "config.json")
    write_field(u, out / "U.ssf")
    write_report({
        "lambdas": basis.lambdas,
        "lambda_next": basis.lambda_next,
        "residuals": basis.residuals,
        "method": basis.method,
        "k": rc.k,
        "eps": eps,
        "volume_relaxed": relaxed_volume(phi0),
    }, out / "report.json")
    write_manifest(out, ["config.json", "U.ssf", "report.json"])
    print("lambdas: " + " ".join(format(v, ".12g") for v in basis.lambdas))
    return 0


# --------------------------------------------------------------------------
# optimize


def _cmd_optimize(args) -> int:
    rc = _load_config(args.config)
    out = _ensure_out_dir(args.out)
    grid = rc.build_grid()
    cf = rc.build_coefficients(grid)
    phi0 = rc.build_phi0(grid)
    state = optimize(grid, cf, rc.optimizer_options(), phi0)
    j_final = objective(state)
    cmap = threshold_components(state.phi, 0.5, basis=state.basis, cf=cf)
    comp = components_audit(cmap, rc.k, grid)
    if cmap.eigen_content is not None:
        comp["eigen_content"] = cmap.eigen_content
    boundary = extract_boundary(cmap.chi, 0.5)
    m_op = assemble_mass(grid, cf)
    u = eigenfunction_field(m_op, basis=state.basis)
    mask = cmap.chi.values[0] > 0.5
    bary = grid.node_coords()[mask].mean(axis=0)

    write_config(rc.effective, out / "config.json")
    write_field(state.phi, out / "phi.ssf")
    write_field(cmap.chi, out / "chi.ssf")
    write_field(u, out / "U.ssf")
    write_report({
        "eps": state.eps,
        "k": rc.k,
        "Lambda": rc.lam,
        "objective": j_final,
        "lambdas": state.basis.lambdas,
        "lambda_next": state.basis.lambda_next,
        "volume": relaxed_volume(state.phi),
        "objective_history": [[int(i), float(j), float(e)]
                              for i, j, e in state.objective_history],
    }, out / "state.json")
    write_report({
        "objective": j_final,
        "lambdas": state.basis.lambdas,
        "volume": relaxed_volume(state.phi),
        "eps_final": state.eps,
        "iterations": len(state.objective_history),
        "components": comp,
        "barycenter": bary,
        "n_boundary_points": int(boundary.points.shape[0]),
    }, out / "report.json")
    write_manifest(out, ["config.json", "phi.ssf", "chi.ssf", "U.ssf",
                         "state.json", "report.json"])
    print(f"objective {j_final:.10g}  volume {relaxed_volume(state.phi):.10g}  "
          f"components {comp['count']}")
    return 0


# --------------------------------------------------------------------------
# diagnose


def _parse_point(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise _Usage(f"--point expects X,Y; got {text!r}")
    try:
        x, y = float(parts[0]), float(parts[1])
    except ValueError as exc:
        raise _Usage(f"--point expects numbers; got {text!r}") from exc
    if not (math.isfinite(x) and math.isfinite(y)):
        raise _Usage(f"--point coordinates must be finite; got {text!r}")
    return x, y


def _probe_radii(rc: RunConfig, chart, h: float):
    """(density radii or None for the library default, weiss radii)."""
    if rc.radii == "auto":
        hi = min(16.0 * h, 0.45 * chart.r_valid)
        hi = max(hi, 2.5 * h)
        return None, np.geomspace(2.0 * h, hi, 8)
    r_min, r_max, count = rc.radii
    return np.linspace(r_min, r_max, count), np.geomspace(r_min, r_max, count)


_POINT_ERRORS = (OutOfChart, TooFewSamples, DegenerateField, NearZeroU1)


def _diagnose_point(rc: RunConfig, cf, u, chi, grad, raw_pt, ref_pt):
    h = u.grid.h
    block: dict = {"point": [float(raw_pt[0]), float(raw_pt[1])],
                   "point_refined": [float(ref_pt[0]), float(ref_pt[1])]}
    try:
        chart = make_chart(cf, tuple(raw_pt))
        theta_radii, weiss_radii = _probe_radii(rc, chart, h)
        est = density_theta(chi, chart, theta_radii, quad=rc.quad)
        block["density"] = {"theta0": est.theta0, "radii": est.radii,
                            "values": est.values, "slope": est.slope}
        block["classification"] = classify_point(est.theta0, rc.delta_tol)
        block["weiss"] = weiss_monotonicity_audit(
            u, chi, chart, weiss_radii, rc.lam, cf.deltaA, quad=rc.quad,
            grad=grad)
    except _POINT_ERRORS as exc:
        block["error"] = f"{type(exc).__name__}: {exc}"
        return block
    try:
        chart_ref = make_chart(cf, tuple(ref_pt))
        hi = min(8.0 * h, 0.45 * chart_ref.r_valid)
        if hi <= 2.0 * h * 1.0001:
            raise OutOfChart("chart too small for blow-up radii")
        block["blowup"] = blowup_audit(u, chart_ref, np.geomspace(hi, 2.0 * h, 4))
    except _POINT_ERRORS as exc:
        block["blowup"] = {"error": f"{type(exc).__name__}: {exc}"}
    if u.ncomp >= 2:
        try:
            chart_r = min(12.0 * h, 0.45 * chart.r_valid)
            block["harnack"] = harnack_quotient_audit(
                u, chi, tuple(raw_pt), chart_r, seed=rc.seed)
        except _POINT_ERRORS as exc:
            block["harnack"] = {"error": f"{type(exc).__name__}: {exc}"}
    return block


def _cmd_diagnose(args) -> int:
    if args.point is None and args.points < 1:
        raise _Usage(f"--points must be positive, got {args.points}")
    run, rc, grid, cf, phi, chi, doc = _load_run(args.run)
    state = _resolve_state(rc, grid, cf, phi, float(doc["eps"]))
    m_op = assemble_mass(grid, cf)
    u = eigenfunction_field(m_op, state.basis)
    grad = gradient_field(u)
    boundary = extract_boundary(chi, 0.5)
    probes = segment_midpoints(boundary, grid)
    refined = probes if args.no_refine else refine_boundary_points(u, probes)
    inside = np.nonzero(probes.inside_d)[0]
    if inside.size == 0:
        raise EmptyBoundary("no boundary points inside the box margin")
    pts = probes.points
    if args.point is not None:
        target = _parse_point(args.point)
        dist2 = ((pts[inside] - np.asarray(target)) ** 2).sum(axis=1)
        chosen = inside[[int(np.argmin(dist2))]]
    else:
        order = inside[np.lexsort((pts[inside, 0], pts[inside, 1]))]
        take = min(args.points, order.size)
        sel = np.unique(np.round(np.linspace(0, order.size - 1, take)).astype(int))
        chosen = order[sel]

    blocks = [_diagnose_point(rc, cf, u, chi, grad,
                              probes.points[idx], refined.points[idx])
              for idx in chosen]
    n_regular = sum(1 for b in blocks if b.get("classification") == "Regular")
    classified = [b for b in blocks if "classification" in b]
    theta_devs = [abs(b["density"]["theta0"] - 0.5) for b in classified]
    h_pairs = [b["blowup"] for b in blocks
               if isinstance(b.get("blowup"), dict) and "H" in b["blowup"]]
    h_drops = [float(blk["H"][-1]) < float(blk["H"][0]) for blk in h_pairs]

    report: dict = {
        "n_points": len(blocks),
        "n_regular": n_regular,
        "n_singular": len(classified) - n_regular,
        "mean_abs_theta_dev": (float(np.mean(theta_devs)) if theta_devs
                               else float("nan")),
        "frac_homogeneity_decreasing": (float(np.mean(h_drops)) if h_drops
                                        else float("nan")),
        "points": blocks,
        "nondegeneracy": nondegeneracy_audit(
            u, chi, distance_field(grid, boundary), probes, cf),
    }
    if rc.lam > 0:
        d_in = None if rc.d_in == "auto" else float(rc.d_in)
        report["optimality"] = optimality_residual(
            u, probes, cf, rc.lam, d_in=d_in, grad=grad)
    write_report(report, run / "diagnostics.json")
    _regen_manifest(run)
    print(f"diagnosed {len(blocks)} boundary points: {n_regular} regular, "
          f"{len(classified) - n_regular} singular")
    return 0


# --------------------------------------------------------------------------
# audit


def _cmd_audit(args) -> int:
    if args.trials < 10:
        raise _Usage(f"--trials must be at least 10, got {args.trials}")
    run, rc, grid, cf, phi, chi, doc = _load_run(args.run)
    state = _resolve_state(rc, grid, cf, phi, float(doc["eps"]))
    qa = quasimin_audit(state, trials=args.trials, seed=rc.seed)
    m_op = assemble_mass(grid, cf)
    u = eigenfunction_field(m_op, state.basis)
    mag_max = float(np.sqrt((u.values ** 2).sum(axis=0)).max())
    t0 = 0.2 * mag_max
    t_values = [t0 / 2 ** i for i in range(4)]
    profiles = [perimeter_estimate(u, t) for t in t_values]
    write_report({
        "quasimin": qa,
        "trials": args.trials,
        "perimeter": {
            "t_values": t_values,
            "per0": profiles[0]["per0"],
            "p_avg": [p["p_avg"] for p in profiles],
            "profiles": profiles,
        },
    }, run / "audit.json")
    _regen_manifest(run)
    print(f"min quasi-minimality margin {qa['min_margin']:.6g} over "
          f"{args.trials} trials; perimeter {profiles[0]['per0']:.6g}")
    return 0


# --------------------------------------------------------------------------
# oracle / render


def _cmd_oracle(args) -> int:
    if args.case == "disk":
        if not (args.lam > 0 and math.isfinite(args.lam)):
            raise _Usage(f"--lambda must be positive and finite, got {args.lam}")
        ball = optimal_ball(args.lam)
        print(f"case disk  Lambda = {args.lam:.17g}")
        print(f"R_star = {ball.radius:.17g}")
        print(f"J_star = {ball.objective:.17g}")
        print(f"lambda1 = {ball.lambda1:.17g}")
        print(f"volume = {ball.volume:.17g}")
        return 0
    sides = (1.0, 1.0) if args.case == "square" else (1.0, 0.5)
    vals = rectangle_eigenvalues(sides[0], sides[1], 4)
    print(f"case {args.case}  sides = {sides[0]:g} x {sides[1]:g}")
    for i, v in enumerate(vals, start=1):
        print(f"lambda{i} = {v:.17g}")
    return 0


def _cmd_render(args) -> int:
    try:
        field = read_field(Path(args.field))
    except ShapeLabError as exc:
        raise _Usage(str(exc)) from exc
    try:
        render_heatmap(field, args.component, Path(args.out))
    except BadParams as exc:
        raise _Usage(str(exc)) from exc
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    main()
