"""Command-line entry points: solve, residual evaluation, simulation,
and verification, with bit-stable CSV/JSON artifacts.

Exit codes: 0 success, 1 solver failure (best iterate still written when
available), 2 configuration or usage error.  All outputs embed the config
hash and the seed so results can be reproduced byte for byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import control as ctl
from .config import load_config
from .errors import (ConfigError, GradcapError, MaxIterationsExceeded,
                     ValidationError)
from .geometry import SolutionField
from .hjb import HjbOptions, hjb_residual, solve_hjb
from .nidd import SolverOptions, solve_nidd
from .operators import interior_gradient


def _worker_cap():
    raw = os.environ.get("GRADCAP_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        raise ValidationError("GRADCAP_THREADS", f"not an integer: {raw!r}")
    if cap < 1:
        raise ValidationError("GRADCAP_THREADS", "must be >= 1")
    return cap


def _fmt(x):
    return f"{float(x):.17g}"


def write_field_csv(path, spec, fld, residual_per_node=None):
    grid = spec.grid
    pts = grid.interior_points()
    u = fld.interior_vector()
    grads = interior_gradient(grid, spec.problem.grad_ops(), u)
    grad_norm = np.linalg.norm(grads, axis=1)
    if residual_per_node is None:
        residual_per_node = np.zeros_like(u)
    coords = ["x"] if grid.dim == 1 else ["x", "y"]
    lines = [f"# config_hash={spec.config_hash}",
             "node_index," + ",".join(coords) + ",u,grad_norm,residual"]
    for row, flat in enumerate(grid.interior_flat):
        cols = [str(int(flat))]
        cols += [_fmt(c) for c in pts[row]]
        cols += [_fmt(u[row]), _fmt(grad_norm[row]),
                 _fmt(residual_per_node[row])]
        lines.append(",".join(cols))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field_csv(path, spec):
    grid = spec.grid
    with open(path, "r", encoding="utf-8") as fh:
        line = fh.readline()
        while line.startswith("#"):
            line = fh.readline()
        header = line.strip().split(",")
        try:
            i_node = header.index("node_index")
            i_u = header.index("u")
        except ValueError as exc:
            raise ValidationError("field", f"{path}: missing column") from exc
        full = np.zeros(int(np.prod(grid.shape)))
        seen = 0
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) < len(header):
                continue
            full[int(parts[i_node])] = float(parts[i_u])
            seen += 1
    if seen != grid.n_interior:
        raise ValidationError(
            "field", f"{path}: {seen} rows but grid has "
            f"{grid.n_interior} interior nodes (wrong config?)")
    return SolutionField(grid, full.reshape(grid.shape))


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _solver_options(spec, warm=None):
    base = spec.solver_options
    return SolverOptions(**{**base.__dict__, "initial": warm})


def cmd_solve_nidd(args):
    spec = load_config(args.config)
    opts = _solver_options(spec)
    try:
        rep = solve_nidd(spec.problem, args.eps, opts)
        exit_code = 0
    except MaxIterationsExceeded as exc:
        rep = exc.report
        exit_code = 1
        print(f"warning: {exc}", file=sys.stderr)
    res = hjb_residual(spec.problem, rep.solution)
    write_field_csv(args.out, spec, rep.solution,
                    res["per_node"]["complementarity"])
    if args.report:
        _write_json(args.report, {
            "config_hash": spec.config_hash,
            "eps": rep.eps,
            "iterations": rep.iterations,
            "residual_sup": rep.residual_sup,
            "final_update_norm": rep.final_update_norm,
            "bound_C1": rep.bound_C1,
            "min_value": rep.min_value,
            "max_value": rep.max_value,
            "grad_sup": rep.grad_sup,
            "converged": rep.converged,
            "worker_cap": _worker_cap(),
        })
    if args.dump_matrix:
        from scipy.io import mmwrite
        mmwrite(args.dump_matrix, spec.problem.matrix().gamma_matrix())
    return exit_code


def cmd_solve_hjb(args):
    spec = load_config(args.config)
    opts = HjbOptions(nidd=_solver_options(spec))
    try:
        rep = solve_hjb(spec.problem, spec.eps_schedule, opts)
        exit_code = 0
    except MaxIterationsExceeded as exc:
        nidd_rep = exc.report
        res = hjb_residual(spec.problem, nidd_rep.solution)
        write_field_csv(args.out, spec, nidd_rep.solution,
                        res["per_node"]["complementarity"])
        print(f"error: {exc}", file=sys.stderr)
        return 1
    res = hjb_residual(spec.problem, rep.solution)
    write_field_csv(args.out, spec, rep.solution,
                    res["per_node"]["complementarity"])
    if args.report:
        _write_json(args.report, {
            "config_hash": spec.config_hash,
            "eps_trace": rep.eps_trace,
            "residual_pde_pos": rep.residual_pde_pos,
            "residual_grad_pos": rep.residual_grad_pos,
            "complementarity": rep.complementarity,
            "active_set_fraction": rep.active_set_fraction,
            "grad_sup": rep.grad_sup,
            "bound_C1": rep.bound_C1,
            "iterations_total": rep.iterations_total,
            "worker_cap": _worker_cap(),
        })
    return exit_code


def cmd_residual(args):
    spec = load_config(args.config)
    fld = read_field_csv(args.field, spec)
    res = hjb_residual(spec.problem, fld)
    payload = {
        "config_hash": spec.config_hash,
        "pde_pos": res["pde_pos"],
        "grad_pos": res["grad_pos"],
        "complementarity": res["complementarity"],
        "active_set_fraction": res["active_set_fraction"],
    }
    if args.out:
        _write_json(args.out, payload)
    else:
        print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _sde_params(spec):
    if spec.q is None:
        raise ValidationError("q", "simulation requires a discount q")
    sde = spec.sde
    try:
        return ctl.sde_from_problem(
            spec.problem, spec.q,
            dt=sde.get("dt", 1e-3),
            t_max=sde.get("t_max"),
            jump_truncation=sde.get("jump_truncation", 1e-3),
            levy=spec.levy)
    except ValueError as exc:
        raise ValidationError("sde", str(exc)) from exc


def _parse_x0(values, dim):
    pts = []
    for chunk in values:
        vals = [float(v) for v in chunk.split(",")]
        if len(vals) != dim:
            raise ValidationError("x0", f"expected {dim} coordinates")
        pts.append(np.array(vals))
    return pts


def cmd_simulate(args):
    spec = load_config(args.config)
    params = _sde_params(spec)
    x0 = _parse_x0(args.x0, spec.grid.dim)[0]
    if args.policy == "penalized":
        if not args.field or args.eps is None:
            raise ValidationError(
                "policy", "penalized policy needs --field and --eps")
        fld = read_field_csv(args.field, spec)
        policy = ctl.penalized_policy(fld, args.eps, spec.coeffs.g)
        est = ctl.estimate_penalized_value(params, policy, x0, args.paths,
                                           args.seed)
    elif args.policy == "null":
        est = ctl.estimate_penalized_value(params, ctl.NullControl(), x0,
                                           args.paths, args.seed)
    elif args.policy == "constant":
        direction = [float(v) for v in args.direction.split(",")] \
            if args.direction else [1.0] * spec.grid.dim
        policy = ctl.ConstantRate(n=tuple(direction), rate=args.rate)
        est = ctl.estimate_penalized_value(params, policy, x0, args.paths,
                                           args.seed)
    else:
        raise ValidationError("policy", f"unknown policy {args.policy!r}")
    payload = {
        "config_hash": spec.config_hash,
        "policy": args.policy,
        "x0": [float(v) for v in np.atleast_1d(x0)],
        "mean": est.mean,
        "stderr": est.stderr,
        "n_paths": est.n_paths,
        "seed": est.seed,
        "dt": est.dt,
        "discarded_bias_bound": est.discarded_bias_bound,
        "max_rate_observed": est.max_rate_observed,
    }
    _write_json(args.out, payload)
    return 0


def cmd_verify(args):
    spec = load_config(args.config)
    params = _sde_params(spec)
    fld = read_field_csv(args.field, spec)
    x0_list = _parse_x0(args.x0, spec.grid.dim)
    if args.mode == "penalized":
        if args.eps is None:
            raise ValidationError("eps", "penalized mode needs --eps")
        rep = ctl.verify_value_equality(
            spec.problem, fld, "penalized", x0_list, args.paths, args.seed,
            params=params, eps=args.eps)
    elif args.mode == "singular":
        controls = [ctl.SingularControlSpec(n=(1.0,) * spec.grid.dim,
                                            rate=0.0)]
        for rate in args.rate_controls:
            controls.append(ctl.SingularControlSpec(
                n=(1.0,) * spec.grid.dim, rate=float(rate)))
            controls.append(ctl.SingularControlSpec(
                n=(-1.0,) + (0.0,) * (spec.grid.dim - 1), rate=float(rate)))
        rep = ctl.verify_value_equality(
            spec.problem, fld, "singular", x0_list, args.paths, args.seed,
            params=params, controls=controls)
    else:
        raise ValidationError("mode", f"unknown mode {args.mode!r}")
    payload = {
        "config_hash": spec.config_hash,
        "mode": args.mode,
        "entries": rep.entries,
        "all_pass": rep.all_pass,
        "seed": args.seed,
        "n_paths": args.paths,
    }
    _write_json(args.out, payload)
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="gradcap",
        description="Gradient-constrained HJB solver for jump-diffusions "
                    "with Monte Carlo verification")
    sub = p.add_subparsers(dest="command", required=True)

    sn = sub.add_parser("solve-nidd", help="solve the penalized problem "
                        "at one eps")
    sn.add_argument("--config", required=True)
    sn.add_argument("--eps", type=float, required=True)
    sn.add_argument("--out", required=True)
    sn.add_argument("--report")
    sn.add_argument("--dump-matrix")
    sn.set_defaults(func=cmd_solve_nidd)

    sh = sub.add_parser("solve-hjb", help="run the eps-continuation")
    sh.add_argument("--config", required=True)
    sh.add_argument("--out", required=True)
    sh.add_argument("--report")
    sh.set_defaults(func=cmd_solve_hjb)

    rs = sub.add_parser("residual", help="re-evaluate residuals of a "
                        "stored field")
    rs.add_argument("--config", required=True)
    rs.add_argument("--field", required=True)
    rs.add_argument("--out")
    rs.set_defaults(func=cmd_residual)

    sm = sub.add_parser("simulate", help="Monte Carlo cost estimate")
    sm.add_argument("--config", required=True)
    sm.add_argument("--policy", required=True,
                    choices=["penalized", "null", "constant"])
    sm.add_argument("--field")
    sm.add_argument("--eps", type=float)
    sm.add_argument("--x0", action="append", required=True)
    sm.add_argument("--paths", type=int, default=10000)
    sm.add_argument("--seed", type=int, default=42)
    sm.add_argument("--rate", type=float, default=0.0)
    sm.add_argument("--direction")
    sm.add_argument("--out", required=True)
    sm.set_defaults(func=cmd_simulate)

    vf = sub.add_parser("verify", help="value-equality / suboptimality "
                        "verification")
    vf.add_argument("--config", required=True)
    vf.add_argument("--mode", required=True,
                    choices=["penalized", "singular"])
    vf.add_argument("--field", required=True)
    vf.add_argument("--eps", type=float)
    vf.add_argument("--x0", action="append", required=True)
    vf.add_argument("--paths", type=int, default=10000)
    vf.add_argument("--seed", type=int, default=42)
    vf.add_argument("--rate-controls", nargs="*", default=["0.25"])
    vf.add_argument("--out", required=True)
    vf.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _worker_cap()
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except GradcapError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
