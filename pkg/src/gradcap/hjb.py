"""eps-continuation driver for the gradient-constrained equation.

Solves the penalized problem along a decreasing eps schedule with warm
starts, enforcing that successive solutions do not increase beyond a
discretization-sized slack, and reports complementarity residuals of the
limiting max-form equation on the final field.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (GridMismatch, MaxIterationsExceeded,
                     MonotonicityViolation)
from .nidd import SolverOptions, _gradient_sq, solve_nidd

DEFAULT_EPS_SCHEDULE = (0.5, 0.25, 0.1, 0.05, 0.02, 0.01)


@dataclass
class HjbOptions:
    nidd: SolverOptions = field(default_factory=SolverOptions)
    mono_tol_factor: float = 1e-6
    mono_grid_slack: float = 10.0
    stop_on_stagnation: bool = True
    stagnation_rtol: float = 0.02
    activity_tol: float = None
    max_substeps: int = 4  # geometric refinements of a failing eps step


@dataclass
class HjbReport:
    solution: object
    eps_trace: list
    residual_pde_pos: float
    residual_grad_pos: float
    complementarity: float
    active_set_fraction: float
    grad_sup: float
    bound_C1: float
    iterations_total: int
    nidd_reports: list


def hjb_residual(problem, fld, activity_tol=None):
    """Node-wise residuals of max{Gamma u - h, |Du| - g} = 0.

    Returns sup of the positive parts of both branches, the complementarity
    defect sup |min(h - Gamma u, g - |Du|)| (zero exactly when both
    constraints hold and one is tight), and a per-node breakdown.
    """
    grid = problem.grid
    if fld.grid is not grid and not fld.grid.same_as(grid):
        raise GridMismatch("field lives on a different grid than the problem")
    if activity_tol is None:
        activity_tol = max(1e-6, 5.0 * grid.h)
    u_int = fld.interior_vector()
    gamma = problem.matrix().gamma_matrix()
    h_int = problem.h_interior()
    g_int = problem.g_interior()
    grad_sq, _ = _gradient_sq(problem, u_int)
    grad_norm = np.sqrt(grad_sq)
    r1 = gamma @ u_int - h_int
    r2 = grad_norm - g_int
    comp = np.minimum(-r1, -r2)
    active = r2 >= -activity_tol
    return {
        "pde_pos": float(np.max(np.maximum(r1, 0.0), initial=0.0)),
        "grad_pos": float(np.max(np.maximum(r2, 0.0), initial=0.0)),
        "complementarity": float(np.max(np.abs(comp), initial=0.0)),
        "active_set_fraction": float(np.mean(active)) if active.size else 0.0,
        "per_node": {
            "node_index": grid.interior_flat.copy(),
            "pde_residual": r1,
            "grad_residual": r2,
            "complementarity": comp,
            "active": active,
        },
    }


def solve_hjb(problem, eps_schedule=None, opts=None):
    """Warm-started continuation over a strictly decreasing eps schedule."""
    opts = opts or HjbOptions()
    schedule = tuple(eps_schedule if eps_schedule is not None
                     else DEFAULT_EPS_SCHEDULE)
    arr = np.asarray(schedule, dtype=float)
    if arr.size == 0 or np.any(arr <= 0) or np.any(arr >= 1) \
            or np.any(np.diff(arr) >= 0):
        raise ValueError("eps schedule must be strictly decreasing in (0,1)")

    h2 = problem.grid.h ** 2
    trace = []
    reports = []
    prev = None
    prev_res = None
    total_iter = 0

    def solve_with_substeps(eps, eps_prev, warm, depth=0):
        """Retry a failing continuation step through intermediate eps."""
        nonlocal total_iter
        nidd_opts = SolverOptions(**{**opts.nidd.__dict__, "initial": warm})
        try:
            rep = solve_nidd(problem, float(eps), nidd_opts)
        except MaxIterationsExceeded:
            if depth >= opts.max_substeps or eps_prev is None:
                raise
            mid = float(np.sqrt(eps_prev * eps))
            rep_mid = solve_with_substeps(mid, eps_prev, warm, depth + 1)
            rep = solve_with_substeps(eps, mid, rep_mid.solution, depth + 1)
        total_iter += rep.iterations
        return rep

    for k, eps in enumerate(arr):
        eps_prev = float(arr[k - 1]) if k else None
        rep = solve_with_substeps(float(eps), eps_prev, prev)
        sup_update = 0.0
        mono = 0.0
        if prev is not None:
            diff = rep.solution.values - prev.values
            sup_update = float(np.max(np.abs(diff)))
            mono = float(np.max(diff))
            mono_tol = opts.mono_tol_factor * (1.0 + rep.max_value) \
                + opts.mono_grid_slack * h2
            if mono > mono_tol:
                raise MonotonicityViolation(
                    f"u^eps increased by {mono:.3e} (> {mono_tol:.3e}) "
                    f"between eps={arr[k-1]:g} and eps={eps:g}; the schedule "
                    "is too aggressive or the grid too coarse")
        trace.append({"eps": float(eps), "sup_update": sup_update,
                      "monotonicity_violation": mono})
        reports.append(rep)
        prev = rep.solution

        res = hjb_residual(problem, prev, opts.activity_tol)
        # a residual plateau only marks the discretization floor once the
        # penalty has left its blend zone at the worst node (arg >= 2 eps)
        # or never activates at all; in between, smaller eps still helps
        grad_sq, _ = _gradient_sq(problem, prev.interior_vector())
        arg_max = float(np.max(grad_sq - problem.g_interior() ** 2,
                               initial=-1.0))
        armed = arg_max <= 0.0 or arg_max >= 2.0 * eps
        if opts.stop_on_stagnation and prev_res is not None and k >= 1 \
                and armed:
            # residuals at the solver floor jitter multiplicatively, so the
            # relative change is measured against an absolute floor too
            h_scale = float(np.max(np.abs(problem.h_interior()), initial=0.0))
            floor = 1e-8 * (1.0 + h_scale)
            rel = abs(prev_res["complementarity"] - res["complementarity"]) \
                / max(prev_res["complementarity"], res["complementarity"],
                      floor)
            rel_g = abs(prev_res["grad_pos"] - res["grad_pos"]) \
                / max(prev_res["grad_pos"], res["grad_pos"], floor)
            if rel < opts.stagnation_rtol and rel_g < opts.stagnation_rtol:
                prev_res = res
                break
        prev_res = res

    final = hjb_residual(problem, prev, opts.activity_tol)
    return HjbReport(
        solution=prev,
        eps_trace=trace,
        residual_pde_pos=final["pde_pos"],
        residual_grad_pos=final["grad_pos"],
        complementarity=final["complementarity"],
        active_set_fraction=final["active_set_fraction"],
        grad_sup=reports[-1].grad_sup,
        bound_C1=reports[-1].bound_C1,
        iterations_total=total_iter,
        nidd_reports=reports,
    )
