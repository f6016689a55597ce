"""Penalized nonlinear Dirichlet solver.

The nonlinear problem couples the discrete operator with the penalty of the
gradient-constraint defect.  The solver iterates the linearization map
w -> u solving  gamma u = h - psi_eps(|D w|^2 - g^2)  with damping; when the
penalty stiffens (psi' ~ 1/eps) beyond what a damped fixed point can
contract, it switches to a damped Newton iteration on the same smooth
residual.  Either way the runtime diagnostics check the a priori sandwich
0 <= u <= C1 and record the gradient sup.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (BoundViolation, GridMismatch, InnerDivergence,
                     MaxIterationsExceeded, NotApplicable, SingularSystem)
from .geometry import SolutionField
from .operators import interior_gradient
from .penalty import PenaltyFn


@dataclass
class SolverOptions:
    tol_update_factor: float = 1e-8
    tol_res_factor: float = 1e-6
    max_iter: int = 500
    damping: float = 0.7
    inner_tol: float = 1e-12
    inner_max_iter: int = 20000
    newton_fallback: bool = True
    fold_nonlocal: bool = False
    sandwich_tol: float = 1e-8
    initial: object = None  # warm start SolutionField


@dataclass
class NiddReport:
    solution: SolutionField
    iterations: int
    final_update_norm: float
    residual_sup: float
    bound_C1: float
    min_value: float
    max_value: float
    grad_sup: float
    eps: float
    converged: bool = True


def _as_interior(matrix, rhs):
    if isinstance(rhs, SolutionField):
        return rhs.interior_vector()
    rhs = np.asarray(rhs, dtype=float)
    if rhs.size != matrix.grid.n_interior:
        raise ValueError("rhs length does not match interior node count")
    return rhs.copy()


def solve_linear_dirichlet(matrix, rhs, opts=None):
    """Solve gamma u = rhs at interior nodes with u = 0 elsewhere.

    The nonlocal part is lagged by default: factorize the local M-matrix
    plus the jump mass once, then fix-point on the gather term.  The lag
    contracts at rate max_i D_i / (c_i + D_i) < 1; if contraction is not
    observed the iteration aborts with a spectral estimate.  Setting
    fold_nonlocal solves the assembled system directly instead.
    """
    opts = opts or SolverOptions()
    rhs_vec = _as_interior(matrix, rhs)
    scale = float(np.max(np.abs(rhs_vec))) if rhs_vec.size else 0.0
    if scale == 0.0:
        return SolutionField.zeros(matrix.grid)

    has_jumps = matrix.jump_gather.nnz > 0
    if opts.fold_nonlocal or not has_jumps:
        try:
            u = matrix.gamma_solver().solve(rhs_vec)
        except RuntimeError as exc:
            raise SingularSystem(str(exc)) from exc
    elif matrix.lag_contraction_bound() <= 0.7:
        try:
            lu = matrix.local_solver()
        except RuntimeError as exc:
            raise SingularSystem(str(exc)) from exc
        J = matrix.jump_gather
        u = lu.solve(rhs_vec)
        prev_update = np.inf
        stall = 0
        for _ in range(opts.inner_max_iter):
            u_new = lu.solve(rhs_vec + J @ u)
            update = float(np.max(np.abs(u_new - u)))
            u = u_new
            if update <= opts.inner_tol * scale:
                break
            if update >= prev_update:
                stall += 1
                if stall >= 5:
                    raise InnerDivergence(
                        "nonlocal lag failed to contract",
                        spectral_estimate=_lag_spectral_estimate(lu, J))
            else:
                stall = 0
            prev_update = update
        else:
            raise InnerDivergence(
                "nonlocal lag exhausted its iteration budget",
                spectral_estimate=_lag_spectral_estimate(lu, J))
    else:
        # heavy jump mass: the lag would contract too slowly, so solve the
        # assembled system by Krylov iteration preconditioned with the
        # cheap banded factorization of (local + jump mass)
        lu = matrix.local_solver()
        gamma = matrix.gamma_matrix()
        precond = spla.LinearOperator(gamma.shape, matvec=lu.solve)
        u, info = spla.gmres(gamma, rhs_vec, M=precond, rtol=1e-13, atol=0.0,
                             restart=80, maxiter=400)
        if info != 0:
            u = matrix.gamma_solver().solve(rhs_vec)

    res = np.max(np.abs(matrix.apply_gamma_vec(u) - rhs_vec))
    if res > 1e-10 * scale:
        u = matrix.gamma_solver().solve(rhs_vec)
        res = np.max(np.abs(matrix.apply_gamma_vec(u) - rhs_vec))
        if res > 1e-10 * scale:
            raise SingularSystem(
                f"linear residual {res:.3e} above 1e-10 * |rhs|")
    return SolutionField.from_interior_vector(matrix.grid, u)


def _lag_spectral_estimate(lu, J, iters=20, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.standard_normal(J.shape[0])
    y /= np.linalg.norm(y)
    rho = np.nan
    for _ in range(iters):
        y = lu.solve(J @ y)
        nrm = np.linalg.norm(y)
        if nrm == 0:
            return 0.0
        rho = nrm
        y /= nrm
    return float(rho)


def _gradient_sq(problem, u_int):
    grads = interior_gradient(problem.grid, problem.grad_ops(), u_int)
    return np.sum(grads * grads, axis=1), grads


def _residual_vec(problem, gamma, pf, u_int, h_int, g_int, clamp):
    grad_sq, _ = _gradient_sq(problem, u_int)
    arg = np.maximum(grad_sq - g_int**2, clamp)
    return gamma @ u_int + pf.psi(arg) - h_int


def solve_nidd(problem, eps, opts=None):
    """Solve the penalized problem at one eps; returns a NiddReport.

    Damped fixed-point iteration on the linearization map, with an
    automatic switch to damped Newton on the same residual when the fixed
    point stops contracting (the penalty slope grows like 1/eps, which no
    fixed damping can absorb for small eps).
    """
    opts = opts or SolverOptions()
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    pf = PenaltyFn(eps)
    grid = problem.grid
    mat = problem.matrix()
    gamma = mat.gamma_matrix()
    h_int = problem.h_interior()
    g_int = problem.g_interior()
    clamp = -(float(np.max(g_int)) ** 2 + 1.0)

    h_scale = float(np.max(np.abs(h_int))) if h_int.size else 0.0
    tol_res = opts.tol_res_factor * (1.0 + h_scale)

    # C1 from the linear problem gamma v = h
    v_lin = solve_linear_dirichlet(mat, h_int, opts)
    bound_c1 = float(np.max(v_lin.values)) if h_scale > 0 else 0.0

    if opts.initial is not None:
        if opts.initial.grid is not grid \
                and not opts.initial.grid.same_as(grid):
            raise GridMismatch("warm start lives on a different grid")
        u = opts.initial.interior_vector()
    else:
        u = np.zeros(grid.n_interior)

    def T(w):
        grad_sq, _ = _gradient_sq(problem, w)
        arg = np.maximum(grad_sq - g_int**2, clamp)
        rhs = h_int - pf.psi(arg)
        return solve_linear_dirichlet(mat, rhs, opts).interior_vector()

    def newton_step(w, res_vec, lam=0.0):
        grad_sq, grads = _gradient_sq(problem, w)
        arg = np.maximum(grad_sq - g_int**2, clamp)
        slope = 2.0 * pf.psi_prime(arg)
        jac = gamma.copy()
        for k, G in enumerate(problem.grad_ops()):
            jac = jac + sp.diags(slope * grads[:, k]) @ G
        if lam > 0.0:
            jac = jac + lam * sp.diags(np.abs(jac.diagonal()) + 1.0)
        try:
            return spla.splu(jac.tocsc()).solve(-res_vec)
        except RuntimeError:
            reg = 1e-8 * (1.0 + np.abs(jac.diagonal()).max())
            return spla.splu(
                (jac + reg * sp.eye(jac.shape[0])).tocsc()).solve(-res_vec)

    omega = opts.damping
    res_vec = _residual_vec(problem, gamma, pf, u, h_int, g_int, clamp)
    res = float(np.max(np.abs(res_vec)))
    update = np.inf
    mode = "picard"
    iterations = 0
    stall = 0
    slow_newton = 0
    newton_lam = 0.0
    merit_window = []
    best_res = res
    best_u = u.copy()

    while iterations < opts.max_iter:
        u_scale = 1.0 + float(np.max(np.abs(u))) if u.size else 1.0
        tol_update = opts.tol_update_factor * u_scale
        if update <= tol_update and res <= tol_res:
            break
        iterations += 1

        if mode == "picard":
            tu = T(u)
            u_try = (1.0 - omega) * u + omega * tu
            res_try_vec = _residual_vec(problem, gamma, pf, u_try,
                                        h_int, g_int, clamp)
            res_try = float(np.max(np.abs(res_try_vec)))
            if res_try > res:
                omega *= 0.5
                stall += 1
                if opts.newton_fallback and (omega < 0.02 or stall > 12):
                    mode = "newton"
                continue
            update = float(np.max(np.abs(u_try - u)))
            crawl = res_try > 0.9 * res
            u, res_vec, res = u_try, res_try_vec, res_try
            if res < best_res:
                best_res = res
                best_u = u.copy()
            stall = stall + 1 if crawl else 0
            # hand over to Newton when the fixed point decays too slowly
            if opts.newton_fallback and res > tol_res \
                    and (stall >= 5 or update < 1e-14):
                mode = "newton"
        else:
            # Levenberg-damped Newton with a non-monotone line search: the
            # penalty curvature near the free-boundary rim makes a strictly
            # monotone search zigzag, so steps may pass if they stay below
            # the recent merit window while the best iterate is tracked.
            merit = float(np.linalg.norm(res_vec))
            merit_window.append(merit)
            del merit_window[:-6]
            window_cap = max(merit_window)
            accepted = False
            for _ in range(8):
                delta = newton_step(u, res_vec, newton_lam)
                for alpha in (1.0, 0.5, 0.25, 0.125):
                    u_try = u + alpha * delta
                    res_try_vec = _residual_vec(problem, gamma, pf, u_try,
                                                h_int, g_int, clamp)
                    merit_try = float(np.linalg.norm(res_try_vec))
                    if merit_try < window_cap:
                        accepted = True
                        break
                if accepted:
                    break
                newton_lam = max(newton_lam * 10.0, 1e-4)
                if newton_lam > 1e8:
                    break
            if not accepted:
                break
            newton_lam = newton_lam / 5.0 if merit_try < merit \
                else min(max(newton_lam, 1e-4) * 10.0, 1e8)
            if newton_lam < 1e-10:
                newton_lam = 0.0
            # fail fast on creeping progress so continuation can sub-step
            slow_newton = slow_newton + 1 if merit_try > 0.99 * merit else 0
            if slow_newton > 40:
                break
            update = float(np.max(np.abs(u_try - u)))
            u, res_vec = u_try, res_try_vec
            res = float(np.max(np.abs(res_vec)))
            if res < best_res:
                best_res = res
                best_u = u.copy()

    if best_res < res:
        # non-monotone exploration can end off the best iterate seen
        u, res = best_u, best_res
    grad_sq, _ = _gradient_sq(problem, u)
    report = NiddReport(
        solution=SolutionField.from_interior_vector(grid, u),
        iterations=iterations,
        final_update_norm=float(update) if np.isfinite(update) else 0.0,
        residual_sup=res,
        bound_C1=bound_c1,
        min_value=float(np.min(u)) if u.size else 0.0,
        max_value=float(np.max(u)) if u.size else 0.0,
        grad_sup=float(np.sqrt(np.max(grad_sq))) if u.size else 0.0,
        eps=eps,
    )
    u_scale = 1.0 + abs(report.max_value)
    if not (update <= opts.tol_update_factor * u_scale and res <= tol_res):
        report.converged = False
        raise MaxIterationsExceeded(
            f"no convergence in {opts.max_iter} iterations "
            f"(residual {res:.3e}, update {update:.3e})", report=report)

    if report.min_value < -opts.sandwich_tol or \
            report.max_value > bound_c1 + opts.sandwich_tol:
        raise BoundViolation(
            f"solution range [{report.min_value:.3e}, {report.max_value:.3e}] "
            f"violates [0, C1={bound_c1:.6e}] beyond {opts.sandwich_tol}")
    return report


def comparison_check(problem, eps, phi, eta, tol=None, premise_tol=None):
    """Order check for a (super, sub) pair of the penalized problem.

    phi must satisfy the relation with <= h node-wise and eta with >= h;
    inputs failing the premise raise NotApplicable with the first bad node.
    When the premise holds, returns whether max(phi - eta) <= tol.
    """
    pf = PenaltyFn(eps)
    gamma = problem.matrix().gamma_matrix()
    h_int = problem.h_interior()
    g_int = problem.g_interior()
    clamp = -(float(np.max(g_int)) ** 2 + 1.0)
    h_scale = float(np.max(np.abs(h_int))) if h_int.size else 0.0
    if premise_tol is None:
        premise_tol = 1e-8 * (1.0 + h_scale)
    if tol is None:
        tol = 1e-8 * (1.0 + h_scale)

    phi_v = phi.interior_vector()
    eta_v = eta.interior_vector()
    r_phi = _residual_vec(problem, gamma, pf, phi_v, h_int, g_int, clamp)
    r_eta = _residual_vec(problem, gamma, pf, eta_v, h_int, g_int, clamp)
    bad_super = np.flatnonzero(r_phi > premise_tol)
    if bad_super.size:
        raise NotApplicable(
            f"phi is not a super-solution at interior node {bad_super[0]} "
            f"(defect {r_phi[bad_super[0]]:.3e})", node_index=int(bad_super[0]))
    bad_sub = np.flatnonzero(r_eta < -premise_tol)
    if bad_sub.size:
        raise NotApplicable(
            f"eta is not a sub-solution at interior node {bad_sub[0]} "
            f"(defect {r_eta[bad_sub[0]]:.3e})", node_index=int(bad_sub[0]))
    max_violation = float(np.max(phi_v - eta_v)) if phi_v.size else 0.0
    return {"ok": bool(max_violation <= tol), "max_violation": max_violation}
