"""Smooth one-sided penalty family and its Legendre transform.

The penalty is psi_eps(r) = H(r / eps) with H the cumulative integral of a
fixed C-infinity smooth-step profile eta: H(y) = 0 for y <= 0, H(y) = y - 1
for y >= 2, and a strictly convex blend in between.  Writing the whole family
through one profile makes psi_eps automatically non-increasing in eps at
every r >= 0, which the eps-continuation relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import PchipInterpolator
from scipy.special import expit

_TABLE_POINTS = 8193
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0  # 0.618...


def blend(t):
    """Smooth step: 0 for t <= 0, 1 for t >= 2, strictly increasing between."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    out[t >= 2.0] = 1.0
    mid = (t > 0.0) & (t < 2.0)
    tm = t[mid]
    out[mid] = expit(1.0 / (2.0 - tm) - 1.0 / tm)
    return out


def blend_deriv(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    mid = (t > 0.0) & (t < 2.0)
    tm = t[mid]
    g = 1.0 / tm - 1.0 / (2.0 - tm)
    # eta' = (1/t^2 + 1/(2-t)^2) * eta * (1 - eta), always >= 0
    out[mid] = (1.0 / tm**2 + 1.0 / (2.0 - tm) ** 2) * expit(-g) * expit(g)
    return out


def _build_cumulative():
    y = np.linspace(0.0, 2.0, _TABLE_POINTS)
    vals = blend(y)
    cum = cumulative_simpson(vals, x=y, initial=0.0)
    # the odd-point Simpson correction can dip a hair below zero where the
    # integrand is still flat at double-precision scale; restore monotone
    # nonnegativity before interpolating
    cum = np.maximum.accumulate(np.maximum(cum, 0.0))
    cum /= cum[-1]  # the profile integrates to 1 exactly by symmetry
    return PchipInterpolator(y, cum)


_H = _build_cumulative()

# dense uniform table + linear interpolation for the Monte Carlo hot path;
# resolution 2/2^17 keeps the value error below 1e-10
_H_FAST_Y = np.linspace(0.0, 2.0, 2**17 + 1)
_H_FAST_V = _H(_H_FAST_Y)


def _psi_fast(eps, r):
    """Linear-table variant of psi for vectorized inner loops."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    lin = r >= 2.0 * eps
    out[lin] = (r[lin] - eps) / eps
    mid = (r > 0.0) & ~lin
    out[mid] = np.interp(r[mid] / eps, _H_FAST_Y, _H_FAST_V)
    return out


@dataclass(frozen=True)
class PenaltyFn:
    """One member of the penalty family; eps in (0, 1)."""

    eps: float

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise ValueError("eps must lie in (0, 1)")

    def psi(self, r):
        r = np.asarray(r, dtype=float)
        scalar = r.ndim == 0
        r = np.atleast_1d(r)
        out = np.zeros_like(r)
        lin = r >= 2.0 * self.eps
        out[lin] = (r[lin] - self.eps) / self.eps
        mid = (r > 0.0) & ~lin
        out[mid] = _H(r[mid] / self.eps)
        return float(out[0]) if scalar else out

    def psi_prime(self, r):
        r = np.asarray(r, dtype=float)
        scalar = r.ndim == 0
        r = np.atleast_1d(r)
        out = np.zeros_like(r)
        lin = r >= 2.0 * self.eps
        out[lin] = 1.0 / self.eps
        mid = (r > 0.0) & ~lin
        out[mid] = blend(r[mid] / self.eps) / self.eps
        return float(out[0]) if scalar else out

    def psi_double_prime(self, r):
        r = np.asarray(r, dtype=float)
        scalar = r.ndim == 0
        r = np.atleast_1d(r)
        out = np.zeros_like(r)
        mid = (r > 0.0) & (r < 2.0 * self.eps)
        out[mid] = blend_deriv(r[mid] / self.eps) / self.eps**2
        return float(out[0]) if scalar else out

    def legendre(self, g_at_x, eta_norm):
        """sup_{m >= 0} { m * eta_norm - psi(m^2 - g^2) } by golden section.

        The objective is concave in m (psi composed with m^2 is convex), so
        a single golden-section bracket suffices.  The bracket cap extends
        past both the penalty activation point and the stationary point
        eta * eps / 2 of the linear branch.
        """
        val = self.legendre_batch(np.array([g_at_x]), np.array([eta_norm]))
        return float(val[0])

    def legendre_batch(self, g_arr, eta_arr, fast=False):
        """Vectorized legendre over matching arrays of g(x) and |eta|.

        fast=True swaps the cumulative-profile evaluation for a dense
        linear table (value error ~1e-10), which the path integrator uses.
        """
        g = np.asarray(g_arr, dtype=float)
        eta = np.asarray(eta_arr, dtype=float)
        if np.any(eta < 0) or np.any(g < 0):
            raise ValueError("legendre requires g >= 0 and eta_norm >= 0")
        hi = g + eta * self.eps / 2.0 + np.sqrt(self.eps * (eta * self.eps + 1.0)) + 1.0
        lo = np.zeros_like(hi)
        psi_eval = (lambda r: _psi_fast(self.eps, r)) if fast else self.psi

        def objective(m):
            return m * eta - psi_eval(m * m - g * g)

        span = float(np.max(hi))
        n_iter = max(1, int(np.ceil(np.log(span / 1e-8) / np.log(1.0 / _GOLDEN))))
        for _ in range(n_iter):
            x1 = hi - _GOLDEN * (hi - lo)
            x2 = lo + _GOLDEN * (hi - lo)
            take_left = objective(x1) > objective(x2)
            hi = np.where(take_left, x2, hi)
            lo = np.where(take_left, lo, x1)
        best = objective(0.5 * (lo + hi))
        # m = 0 is always feasible and gives 0; zero effort costs exactly 0
        return np.where(eta == 0.0, 0.0, np.maximum(best, 0.0))


def psi(pf, r):
    return pf.psi(r)


def psi_prime(pf, r):
    return pf.psi_prime(r)


def psi_double_prime(pf, r):
    return pf.psi_double_prime(r)


def legendre(pf, g_at_x, eta_norm):
    return pf.legendre(g_at_x, eta_norm)
