"""Numerical problem container shared by the solver modules.

Bundles the grid, coefficient fields, jump density, and quadrature rule, and
caches the assembled operator and gradient stencils, which are reused across
Picard sweeps and the whole eps-continuation.
"""

from __future__ import annotations

from .operators import assemble_linear_system, build_gradient_ops


class Problem:
    def __init__(self, grid, coeffs, s, quad):
        self.grid = grid
        self.coeffs = coeffs
        self.s = s
        self.quad = quad
        self._matrix = None
        self._grad_ops = None
        self._h_int = None
        self._g_int = None

    def matrix(self):
        if self._matrix is None:
            self._matrix = assemble_linear_system(
                self.coeffs, self.s, self.quad, self.grid)
        return self._matrix

    def grad_ops(self):
        if self._grad_ops is None:
            self._grad_ops = build_gradient_ops(self.grid)
        return self._grad_ops

    def h_interior(self):
        if self._h_int is None:
            self._h_int = self.coeffs.h(self.grid.interior_points())
        return self._h_int.copy()

    def g_interior(self):
        if self._g_int is None:
            self._g_int = self.coeffs.g(self.grid.interior_points())
        return self._g_int.copy()
