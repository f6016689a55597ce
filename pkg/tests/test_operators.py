import numpy as np
import pytest

from conftest import empty_quadrature
from gradcap.errors import EllipticityViolation
from gradcap.geometry import Ball, Box, SolutionField, build_grid
from gradcap.levy import CompoundPoisson, build_quadrature, constant_density
from gradcap.nidd import solve_linear_dirichlet
from gradcap.operators import (Coefficients, apply_Gamma, apply_I, apply_L,
                               assemble_linear_system,
                               bracket_identity_residual)
from gradcap.problem import Problem

S1 = constant_density(1.0)


def grid1d(h=0.25):
    return build_grid(Box(lo=(-1,), hi=(1,)), h)


def test_apply_L_quadratic_exact():
    g = grid1d()
    co = Coefficients.from_constants(1, a=1.0, b=0.0, c=0.0)
    u = SolutionField.from_function(g, lambda p: p[0] ** 2)
    out = apply_L(co, u).interior_vector()
    assert np.allclose(out, -2.0, atol=1e-12)


def test_apply_L_constants():
    g = grid1d()
    co = Coefficients.from_constants(1, a=2.0, b=1.0, c=4.0)
    u = SolutionField.from_function(g, lambda p: 7.0)
    assert np.allclose(apply_L(co, u).interior_vector(), 28.0, atol=1e-12)


def test_apply_L_upwind_exact_on_linear():
    g = grid1d()
    co = Coefficients.from_constants(1, a=1.0, b=3.0, c=0.0)
    u = SolutionField.from_function(g, lambda p: p[0])
    assert np.allclose(apply_L(co, u).interior_vector(), 3.0, atol=1e-12)


def atom_quad():
    return build_quadrature(CompoundPoisson(atoms=(((0.5,), 2.0),)), 0.1, 2.0)


def test_apply_I_single_atom_values():
    g = grid1d()
    u = SolutionField.from_function(g, lambda p: p[0])
    vals = apply_I(S1, atom_quad(), u).interior_vector()
    x = g.interior_points().ravel()
    at = dict(zip(np.round(x, 10), vals))
    assert at[0.0] == pytest.approx(1.0, abs=1e-14)            # 2 (0.5 - 0)
    assert at[0.75] == pytest.approx(-1.5, abs=1e-14)          # escapes: 2 (0 - 0.75)


def test_apply_I_constant_no_escape():
    g = grid1d()
    u = SolutionField.from_function(g, lambda p: 3.0)
    vals = apply_I(S1, atom_quad(), u).interior_vector()
    x = g.interior_points().ravel()
    no_escape = x + 0.5 < 1.0
    assert np.allclose(vals[no_escape], 0.0, atol=1e-14)


def test_apply_Gamma_hand_value():
    g = grid1d()
    co = Coefficients.from_constants(1, a=1.0, b=0.0, c=1.0)
    u = SolutionField.from_function(g, lambda p: p[0] ** 2)
    vals = apply_Gamma(co, S1, atom_quad(), u).interior_vector()
    x = g.interior_points().ravel()
    at = dict(zip(np.round(x, 10), vals))
    # -u'' + c u - I u = -2 + 0 - 2 (0.25 - 0) at the origin
    assert at[0.0] == pytest.approx(-2.5, abs=1e-13)


def test_apply_Gamma_constants_no_escape():
    g = grid1d()
    co = Coefficients.from_constants(1, a=1.0, b=0.5, c=2.0)
    u = SolutionField.from_function(g, lambda p: 3.0)
    vals = apply_Gamma(co, S1, atom_quad(), u).interior_vector()
    x = g.interior_points().ravel()
    no_escape = x + 0.5 < 1.0
    assert np.allclose(vals[no_escape], 6.0, atol=1e-13)


def symbolic_gamma(x, a, b, c, atoms):
    """Oracle for u*(x) = cos(pi x / 2) on (-1, 1) with zero extension."""
    u = lambda y: np.where(np.abs(y) < 1.0, np.cos(np.pi * y / 2.0), 0.0)
    lu = a * (np.pi / 2) ** 2 * np.cos(np.pi * x / 2) \
        - b * np.pi / 2 * np.sin(np.pi * x / 2) + c * np.cos(np.pi * x / 2)
    iu = sum(m * (u(x + z) - u(x)) for z, m in atoms)
    return lu - iu


@pytest.mark.parametrize("b", [0.0, 1.0])
def test_manufactured_gamma_consistency_under_refinement(b):
    atoms = (((0.5,), 2.0), ((-1.5,), 1.0))
    quad = build_quadrature(CompoundPoisson(atoms=atoms), 0.1, 2.0)
    errs = []
    for h in (1 / 16, 1 / 32, 1 / 64):
        g = build_grid(Box(lo=(-1,), hi=(1,)), h)
        co = Coefficients.from_constants(1, a=1.0, b=b, c=1.0)
        u = SolutionField.from_function(g, lambda p: np.cos(np.pi * p[0] / 2))
        got = apply_Gamma(co, S1, quad, u).interior_vector()
        x = g.interior_points().ravel()
        want = symbolic_gamma(x, 1.0, b, 1.0,
                              [(z[0], m) for z, m in atoms])
        errs.append(np.max(np.abs(got - want)))
    # first order at least; second order when the drift vanishes
    assert errs[0] / errs[1] >= (1.6 if b else 3.4)
    assert errs[1] / errs[2] >= (1.6 if b else 3.4)


def test_bracket_identity_residual_cases():
    g = grid1d()
    quad = atom_quad()
    rng = np.random.default_rng(0)
    zero = SolutionField.zeros(g)
    anyf = SolutionField.from_interior_vector(g,
                                              rng.standard_normal(g.n_interior))
    ones = SolutionField.from_function(g, lambda p: 1.0)
    assert bracket_identity_residual(S1, quad, zero, anyf) <= 1e-14
    assert bracket_identity_residual(S1, quad, anyf, ones) <= 1e-12
    for _ in range(20):
        w = SolutionField.from_interior_vector(
            g, rng.standard_normal(g.n_interior))
        v = SolutionField.from_interior_vector(
            g, rng.standard_normal(g.n_interior))
        scale = np.max(np.abs(w.values)) * np.max(np.abs(v.values)) \
            * quad.total_mass
        assert bracket_identity_residual(S1, quad, w, v) <= 1e-12 * scale


def test_assemble_tridiagonal_rows():
    g = build_grid(Box(lo=(-1,), hi=(1,)), 0.5)
    co = Coefficients.from_constants(1, a=1.0, b=0.0, c=1.0)
    M = assemble_linear_system(co, S1, empty_quadrature(1), g)
    dense = M.gamma_matrix().toarray()
    assert np.allclose(np.diag(dense), 9.0)
    assert np.allclose(np.diag(dense, 1), -4.0)
    assert np.allclose(np.diag(dense, -1), -4.0)


def test_assemble_atom_contributions():
    g = build_grid(Box(lo=(-1,), hi=(1,)), 0.5)
    co = Coefficients.from_constants(1, a=1.0, b=0.0, c=1.0)
    M = assemble_linear_system(co, S1, atom_quad(), g)
    dense = M.gamma_matrix().toarray()
    # diagonal gains the atom mass 2; row of node -0.5 gets -2 at node 0
    assert np.allclose(np.diag(dense), 11.0)
    assert dense[0, 1] == pytest.approx(-6.0)  # -4 (diffusion) - 2 (jump)


def test_matrix_matvec_equivalence():
    g = grid1d()
    co = Coefficients.from_constants(1, a=1.3, b=0.7, c=2.0)
    quad = atom_quad()
    M = assemble_linear_system(co, S1, quad, g)
    rng = np.random.default_rng(7)
    for _ in range(20):
        vec = rng.standard_normal(g.n_interior)
        fld = SolutionField.from_interior_vector(g, vec)
        direct = apply_Gamma(co, S1, quad, fld).interior_vector()
        scale = max(1.0, np.max(np.abs(direct)))
        assert np.max(np.abs(M.apply_gamma_vec(vec) - direct)) <= 1e-12 * scale


def test_m_matrix_structure():
    g = build_grid(Ball(center=(0.0, 0.0), radius=1.0), 0.2)
    co = Coefficients.from_constants(
        2, a=np.array([[1.0, 0.4], [0.4, 1.0]]), b=(0.5, -0.3), c=1.5)
    M = assemble_linear_system(co, S1, empty_quadrature(2), g)
    local = M.local_part.toarray()
    off = local - np.diag(np.diag(local))
    assert off.max() <= 1e-12
    c_vals = co.c(g.interior_points())
    slack = np.diag(local) - np.abs(off).sum(axis=1) - c_vals
    assert slack.min() >= -1e-10


def test_ellipticity_violation_raised():
    g = build_grid(Ball(center=(0.0, 0.0), radius=1.0), 0.2)
    co = Coefficients.from_constants(
        2, a=np.array([[1.0, 1.2], [1.2, 1.0]]), b=0.0, c=1.0, theta=0.1)
    with pytest.raises(EllipticityViolation):
        assemble_linear_system(co, S1, empty_quadrature(2), g)


def test_discrete_comparison_via_monotone_inverse():
    g = grid1d(0.125)
    co = Coefficients.from_constants(1, a=1.0, b=0.4, c=1.0)
    prob = Problem(g, co, S1, atom_quad())
    rng = np.random.default_rng(1)
    f1 = rng.uniform(0.0, 1.0, g.n_interior)
    f2 = f1 + rng.uniform(0.0, 1.0, g.n_interior)
    u1 = solve_linear_dirichlet(prob.matrix(), f1).interior_vector()
    u2 = solve_linear_dirichlet(prob.matrix(), f2).interior_vector()
    assert np.all(u1 <= u2 + 1e-12)


def test_cross_derivative_consistency_2d():
    # -tr[a D^2 u] for u = x y has exact cross stencil on the diagonal pair
    g = build_grid(Box(lo=(-1, -1), hi=(1, 1)), 0.25)
    co = Coefficients.from_constants(
        2, a=np.array([[1.0, 0.5], [0.5, 1.0]]), b=0.0, c=0.0)
    u = SolutionField.from_function(g, lambda p: p[0] * p[1])
    out = apply_L(co, u).interior_vector()
    # u_xx = u_yy = 0, u_xy = 1 -> -2 a12 u_xy = -1
    assert np.allclose(out, -1.0, atol=1e-12)
