"""Controlled jump-diffusion simulation and Monte Carlo cost estimation.

The state follows an Euler-Maruyama discretization of
    dX = -(drift_eff(X) + n * rate) dt + sigma(X) dW + dZ,
where Z is the uncompensated jump part sampled above a truncation level and
drift_eff folds the mean of the small jumps into the drift (legitimate under
bounded variation).  Paths stop at the first state outside the open domain
or at the horizon cap; the discount makes the cap bias negligible.

Cost conventions: absolutely continuous policies pay the conjugate penalty
of their push rate on top of the running cost; singular test controls pay
the constraint-weight along the push segment (Gauss-Legendre along the
straight displacement) plus the same running cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PushOutsideAdmissible, StartOutsideDomain
from .geometry import interp_weights
from .levy import bounded_variation_error_bound, sample_jumps
from .penalty import PenaltyFn

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)
# mapped to [0, 1]
_GL01_NODES = 0.5 * (_GL_NODES + 1.0)
_GL01_WEIGHTS = 0.5 * _GL_WEIGHTS

_BATCH = 2048
_CHUNK_STEPS = 1024


@dataclass
class SdeParams:
    """Dynamics, discount, and cost data for the simulation engine.

    `drift` is the raw drift of the compensated-jump form; the engine always
    uses effective_drift = drift + int_{|z|<1} z nu(dz) together with
    uncompensated jump sampling, which describes the same process.  The
    noise dimension equals the state dimension (sigma maps to (n, d, d)).
    """

    domain: object
    drift: object            # X (n,d) -> (n,d)
    sigma: object            # X (n,d) -> (n,d,m)
    q: float
    h_cost: object           # X (n,d) -> (n,)
    g_cost: object           # X (n,d) -> (n,)
    levy: object = None
    jump_truncation: float = 1e-3
    t_max: float = 14.0
    dt: float = 1e-3
    growth_const: float = None

    def __post_init__(self):
        if not self.q > 0:
            raise ValueError("discount q must be positive")
        if not self.dt > 0 or not self.t_max > 0:
            raise ValueError("dt and t_max must be positive")
        d = self.domain.dim
        if self.levy is not None:
            self._jump_mean = np.asarray(self.levy.small_jump_mean(1.0),
                                         dtype=float)
        else:
            self._jump_mean = np.zeros(d)

    def effective_drift(self, X):
        return np.asarray(self.drift(X), dtype=float) + self._jump_mean

    def spot_check_growth(self, rng=None, n=64, radius=10.0):
        """Sample the declared linear-growth/Lipschitz constant on random
        point pairs; returns the worst observed quotients."""
        rng = rng or np.random.default_rng(0)
        d = self.domain.dim
        X = rng.uniform(-radius, radius, size=(n, d))
        Y = rng.uniform(-radius, radius, size=(n, d))
        bX = np.asarray(self.drift(X), dtype=float)
        bY = np.asarray(self.drift(Y), dtype=float)
        sX = np.asarray(self.sigma(X), dtype=float)
        sY = np.asarray(self.sigma(Y), dtype=float)
        growth = np.max(
            (np.sum(sX**2, axis=(1, 2)) + np.sum(bX**2, axis=1))
            / (1.0 + np.sum(X**2, axis=1)))
        diff = (np.sum((sX - sY) ** 2, axis=(1, 2))
                + np.sum((bX - bY) ** 2, axis=1))
        lip = np.max(diff / np.maximum(np.sum((X - Y) ** 2, axis=1), 1e-300))
        worst = float(max(growth, lip))
        if self.growth_const is not None and worst > self.growth_const + 1e-9:
            raise ValueError(
                f"observed growth/Lipschitz quotient {worst:.3e} exceeds "
                f"declared constant {self.growth_const:.3e}")
        return worst


def _matrix_sqrt_batched(A):
    """Symmetric PSD square root of a stack of small matrices."""
    w, V = np.linalg.eigh(A)
    w = np.maximum(w, 0.0)
    return np.einsum("nij,nj,nkj->nik", V, np.sqrt(w), V)


def sde_from_problem(problem, q, dt=1e-3, t_max=None, jump_truncation=1e-3,
                     levy=None):
    """Derive simulation parameters from the operator coefficients.

    Valid only in the constant-discount unit-density regime: c must equal
    the constant q at every node and the jump density must be identically 1,
    which is when the operator is the generator of the simulated process
    (diffusion a = sigma sigma^T / 2, drift b equal to the effective drift).
    """
    grid = problem.grid
    pts = grid.interior_points()
    c_vals = problem.coeffs.c(pts)
    if np.max(np.abs(c_vals - q)) > 1e-10 * (1.0 + abs(q)):
        raise ValueError("simulation requires c constant and equal to q")
    probe = pts[:: max(1, len(pts) // 16)]
    zs = [np.full(grid.dim, 0.3), np.full(grid.dim, -0.7)]
    for z in zs:
        if np.max(np.abs(problem.s.eval(probe, z) - 1.0)) > 1e-12:
            raise ValueError("simulation requires jump density s identically 1")
    if t_max is None:
        t_max = 14.0 / q

    coeffs = problem.coeffs

    def sigma_fn(X):
        return _matrix_sqrt_batched(2.0 * np.asarray(coeffs.a(X), dtype=float))

    mean = (np.asarray(levy.small_jump_mean(1.0), dtype=float)
            if levy is not None else np.zeros(grid.dim))

    def drift_fn(X):
        # PDE drift coefficient is the effective (uncompensated-form) drift
        return np.asarray(coeffs.b(X), dtype=float) - mean

    return SdeParams(domain=grid.domain, drift=drift_fn, sigma=sigma_fn,
                     q=q, h_cost=coeffs.h, g_cost=coeffs.g, levy=levy,
                     jump_truncation=jump_truncation, t_max=t_max, dt=dt)


class NullControl:
    """No pushes at all."""

    def rate_and_direction(self, X):
        n = np.zeros_like(X)
        if n.shape[1] > 0:
            n[:, 0] = 1.0
        return np.zeros(X.shape[0]), n


@dataclass
class ConstantRate:
    """Fixed direction and constant absolutely continuous push rate.

    eps identifies the penalized class the control belongs to; it sets the
    conjugate effort price charged by estimate_penalized_value.
    """

    n: tuple
    rate: float
    eps: float = None

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.n, dtype=float))
        nrm = np.linalg.norm(v)
        if nrm == 0:
            raise ValueError("direction must be nonzero")
        object.__setattr__(self, "n", tuple(v / nrm))
        if self.rate < 0:
            raise ValueError("rate must be nonnegative")

    def rate_and_direction(self, X):
        n = np.broadcast_to(np.array(self.n), X.shape).copy()
        return np.full(X.shape[0], float(self.rate)), n


class PenalizedFeedback:
    """Feedback control read off a penalized solution field.

    Pushes along the interpolated gradient with rate
    2 psi'(|grad u|^2 - g^2) |grad u|; zero wherever the penalty or the
    gradient vanishes.  The rate and its conjugate effort price are
    tabulated at the lattice nodes once and interpolated along paths, so
    the running cost stays consistent with the simulated push to the same
    interpolation order as the policy itself.
    """

    def __init__(self, fld, eps, g_fn):
        self.field = fld
        self.eps = float(eps)
        self.g_fn = g_fn
        self.pf = PenaltyFn(eps)
        grid = fld.grid
        self.grid = grid
        self._grad_tables = _lattice_gradient(grid, fld.values)
        pts = grid.points()
        grad_nodes = np.column_stack([t.ravel() for t in self._grad_tables])
        norm = np.linalg.norm(grad_nodes, axis=1)
        g_nodes = np.asarray(g_fn(pts), dtype=float)
        rate_nodes = 2.0 * self.pf.psi_prime(norm**2 - g_nodes**2) * norm
        price_nodes = self.pf.legendre_batch(g_nodes, rate_nodes)
        self._rate_table = rate_nodes.reshape(grid.shape)
        self._price_table = price_nodes.reshape(grid.shape)

    def gradient_at(self, X):
        grid = self.grid
        cols, wts = interp_weights(grid, X)
        out = np.empty((X.shape[0], grid.dim))
        for k, table in enumerate(self._grad_tables):
            out[:, k] = np.sum(table.ravel()[cols] * wts, axis=1)
        return out

    def rate_and_direction(self, X):
        g = self.gradient_at(X)
        norm = np.linalg.norm(g, axis=1)
        cols, wts = interp_weights(self.grid, X)
        rate = np.maximum(
            np.sum(self._rate_table.ravel()[cols] * wts, axis=1), 0.0)
        n = np.zeros_like(g)
        n[:, 0] = 1.0
        nz = norm > 0
        n[nz] = g[nz] / norm[nz, None]
        return rate, n

    def effort_price(self, X):
        """Interpolated conjugate-penalty running cost of the push."""
        cols, wts = interp_weights(self.grid, X)
        return np.maximum(
            np.sum(self._price_table.ravel()[cols] * wts, axis=1), 0.0)


def _lattice_gradient(grid, values):
    """Central-difference gradient tables on the full lattice.

    One-sided at the lattice hull; values beyond the hull are zero by the
    extension convention, and the interpolated tables feed the feedback
    policy at arbitrary interior states.
    """
    tables = []
    v = values
    h = grid.h
    for axis in range(grid.dim):
        gk = np.zeros_like(v)
        sl_all = [slice(None)] * grid.dim

        def ax(s):
            out = list(sl_all)
            out[axis] = s
            return tuple(out)

        gk[ax(slice(1, -1))] = (v[ax(slice(2, None))]
                                - v[ax(slice(None, -2))]) / (2 * h)
        gk[ax(0)] = (v[ax(1)] - v[ax(0)]) / h
        gk[ax(-1)] = (v[ax(-1)] - v[ax(-2)]) / h
        tables.append(gk)
    return tables


def penalized_policy(u_eps, eps, g_field):
    """Feedback policy induced by a converged penalized solution."""
    return PenalizedFeedback(u_eps, eps, g_field)


@dataclass
class CostEstimate:
    mean: float
    stderr: float
    n_paths: int
    seed: int
    discarded_bias_bound: float
    dt: float
    max_rate_observed: float = 0.0

    def tolerance(self, drift_sup):
        """Acceptance half-width 3 stderr + 2 dt (|drift| + 1) + jump bias."""
        return (3.0 * self.stderr + 2.0 * self.dt * (drift_sup + 1.0)
                + self.discarded_bias_bound)


@dataclass
class Path:
    times: np.ndarray
    states: np.ndarray
    exited: bool
    exit_time: float
    cost: float = 0.0


@dataclass
class SingularControlSpec:
    """Open-loop test control: continuous rate plus optional pushes.

    rate may be a float or a callable of time; pushes are (time, direction,
    size) triples applied at the containing step with the exact push time in
    the discount factor.  Push sizes must be nonnegative (the cumulative
    intensity is nondecreasing).
    """

    n: tuple = (1.0,)
    rate: object = 0.0
    pushes: tuple = ()

    def __post_init__(self):
        for t, _, dz in self.pushes:
            if dz < 0:
                raise ValueError("push sizes must be nonnegative")
            if t <= 0:
                raise ValueError("push times must be positive")

    def rate_at(self, t):
        return float(self.rate(t)) if callable(self.rate) else float(self.rate)


def _path_jumps(params, seed_rng):
    if params.levy is None:
        return []
    return sample_jumps(params.levy, params.jump_truncation, params.t_max,
                        seed_rng)


def _simulate_batch(params, seeds, x0, policy=None, singular=None,
                    record=False):
    """Advance one batch of paths to exit or horizon; returns costs.

    policy: absolutely continuous feedback (penalized running cost).
    singular: SingularControlSpec (constraint-weight running cost + pushes).
    Exactly one of the two must be given.

    Each path owns one generator seeded with its entry of `seeds`; it
    yields that path's jumps first and diffusion increments afterwards, so
    per-path results do not depend on how paths are batched together.
    """
    d = params.domain.dim
    n = len(seeds)
    dt = params.dt
    n_steps = int(np.ceil(params.t_max / dt))
    sqrt_dt = np.sqrt(dt)
    pfq = None
    if policy is not None and not isinstance(policy, PenalizedFeedback):
        eps_pol = getattr(policy, "eps", None)
        if eps_pol is not None:
            pfq = PenaltyFn(eps_pol)
        elif not isinstance(policy, NullControl):
            raise ValueError(
                "absolutely continuous test controls need an eps to price "
                "their effort")

    push_times = sorted(p[0] for p in singular.pushes) if singular else []
    rngs = [np.random.default_rng(int(s)) for s in seeds]
    jump_step, jump_path, jump_size = [], [], []
    for i, rng in enumerate(rngs):
        for t_j, z in _path_jumps(params, rng):
            if push_times and t_j in push_times:
                raise PushOutsideAdmissible(
                    f"push requested at jump time t={t_j}")
            # a jump in (k dt, (k+1) dt] lands at the end of step k
            k_j = min(int(np.ceil(t_j / dt)) - 1, n_steps - 1)
            jump_step.append(max(k_j, 0))
            jump_path.append(i)
            jump_size.append(z)
    if jump_step:
        order = np.lexsort((np.arange(len(jump_step)), jump_step))
        jump_step = np.asarray(jump_step)[order]
        jump_path = np.asarray(jump_path)[order]
        jump_size = np.asarray(jump_size)[order]
    else:
        jump_step = np.zeros(0, dtype=int)
        jump_path = np.zeros(0, dtype=int)
        jump_size = np.zeros((0, d))
    jump_ptr = 0

    push_list = sorted(singular.pushes, key=lambda p: p[0]) if singular else []

    x0 = np.asarray(x0, dtype=float)
    if not params.domain.contains(x0):
        raise StartOutsideDomain(f"x0={x0} is not inside the domain")
    x = np.tile(x0, (n, 1))
    cost = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    exit_times = np.full(n, params.t_max)
    max_rate = 0.0

    normals = np.empty((n, min(_CHUNK_STEPS, n_steps), d))
    for i, rng in enumerate(rngs):
        normals[i] = rng.standard_normal(normals.shape[1:])
    chunk_base = 0

    traj_t, traj_x = ([0.0], [x[0].copy()]) if record else (None, None)

    for k in range(n_steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        t = k * dt
        if k - chunk_base >= _CHUNK_STEPS:
            chunk_base = k
            width = min(_CHUNK_STEPS, n_steps - k)
            for i in idx:
                normals[i, :width] = rngs[i].standard_normal((width, d))
        xa = x[idx]

        # running cost at the left endpoint
        disc = np.exp(-params.q * t)
        h_vals = np.asarray(params.h_cost(xa), dtype=float)
        if policy is not None:
            rate, n_dir = policy.rate_and_direction(xa)
            if rate.size:
                max_rate = max(max_rate, float(np.max(rate)))
            run = h_vals
            if isinstance(policy, PenalizedFeedback):
                run = h_vals + policy.effort_price(xa)
            elif pfq is not None:
                # zero effort costs exactly zero; only price active pushes
                pos = rate > 0.0
                if np.any(pos):
                    g_vals = np.asarray(params.g_cost(xa[pos]), dtype=float)
                    run = h_vals.copy()
                    run[pos] += pfq.legendre_batch(g_vals, rate[pos],
                                                   fast=True)
        else:
            r = singular.rate_at(t)
            n_dir = np.broadcast_to(
                np.asarray(singular.n, dtype=float), xa.shape).copy()
            rate = np.full(xa.shape[0], r)
            max_rate = max(max_rate, r)
            run = h_vals + np.asarray(params.g_cost(xa), dtype=float) * rate
        cost[idx] += disc * run * dt

        # Euler step: drift (including the control push) plus diffusion
        drift = params.effective_drift(xa) + n_dir * rate[:, None]
        sig = np.asarray(params.sigma(xa), dtype=float)
        xi = normals[idx, k - chunk_base]
        x[idx] = xa - drift * dt \
            + np.einsum("nij,nj->ni", sig, xi) * sqrt_dt

        # jumps scheduled in (t, t+dt], applied at step end as own events
        t_next = (k + 1) * dt
        while jump_ptr < jump_step.size and jump_step[jump_ptr] == k:
            p = jump_path[jump_ptr]
            if alive[p]:
                x[p] = x[p] + jump_size[jump_ptr]
            jump_ptr += 1

        # singular pushes scheduled in this step (never at a jump time)
        if singular:
            for t_push, n_push, dz in push_list:
                if t < t_push <= t_next:
                    n_push = np.asarray(n_push, dtype=float)
                    n_push = n_push / np.linalg.norm(n_push)
                    xa2 = x[idx]
                    seg = xa2[:, None, :] \
                        - _GL01_NODES[None, :, None] * (dz * n_push)[None, None, :]
                    g_seg = np.asarray(
                        params.g_cost(seg.reshape(-1, d)), dtype=float
                    ).reshape(xa2.shape[0], -1)
                    line = g_seg @ _GL01_WEIGHTS
                    cost[idx] += np.exp(-params.q * t_push) * dz * line
                    x[idx] = xa2 - dz * n_push[None, :]

        inside = params.domain.contains_batch(x[idx])
        gone = idx[~inside]
        if gone.size:
            alive[gone] = False
            exit_times[gone] = t_next
        if record:
            traj_t.append(t_next)
            traj_x.append(x[0].copy())
            if not alive[0]:
                break

    result = {
        "cost": cost,
        "exited": ~alive,
        "exit_times": exit_times,
        "max_rate": max_rate,
    }
    if record:
        result["path"] = Path(times=np.array(traj_t),
                              states=np.array(traj_x),
                              exited=bool(~alive[0]),
                              exit_time=float(exit_times[0]),
                              cost=float(cost[0]))
    return result


def simulate_path(params, policy, x0, seed):
    """Single trajectory under an absolutely continuous policy."""
    out = _simulate_batch(params, [seed], x0, policy=policy, record=True)
    return out["path"]


def _bias_bound(params):
    if params.levy is None:
        return 0.0
    return bounded_variation_error_bound(
        params.levy, params.jump_truncation, params.t_max)


def _estimate(params, x0, n_paths, base_seed, policy=None, singular=None):
    costs = np.empty(n_paths)
    max_rate = 0.0
    for start in range(0, n_paths, _BATCH):
        idx = np.arange(start, min(start + _BATCH, n_paths))
        out = _simulate_batch(params, base_seed + idx, x0,
                              policy=policy, singular=singular)
        costs[idx] = out["cost"]
        max_rate = max(max_rate, out["max_rate"])
    mean = float(np.mean(costs))
    stderr = float(np.std(costs, ddof=1) / np.sqrt(n_paths)) \
        if n_paths > 1 else 0.0
    return CostEstimate(mean=mean, stderr=stderr, n_paths=n_paths,
                        seed=int(base_seed),
                        discarded_bias_bound=_bias_bound(params),
                        dt=params.dt, max_rate_observed=max_rate)


def estimate_penalized_value(params, policy, x0, n_paths, base_seed):
    """Discounted running cost + conjugate-penalty effort cost, averaged."""
    return _estimate(params, x0, n_paths, base_seed, policy=policy)


def estimate_singular_value(params, control_path_spec, x0, n_paths,
                            base_seed):
    """Discounted running cost + constraint-weight control cost, averaged."""
    return _estimate(params, x0, n_paths, base_seed,
                     singular=control_path_spec)


@dataclass
class VerificationReport:
    entries: list
    all_pass: bool


def _drift_sup(params, policy, grid_pts):
    drift = params.effective_drift(grid_pts)
    base = float(np.max(np.linalg.norm(drift, axis=1)))
    if policy is not None:
        rate, _ = policy.rate_and_direction(grid_pts)
        base += float(np.max(rate))
    return base


def verify_value_equality(problem, fld, mode, x0_list, n_paths, base_seed,
                          params=None, eps=None, controls=None):
    """Monte Carlo cross-check of the PDE value.

    mode="penalized": simulate the optimal feedback of the penalized
    problem and require |MC - field(x0)| within the CI + discretization
    budget at every start point.

    mode="singular": every supplied admissible test control must cost at
    least field(x0) minus the same budget (one-sided dominance; the
    attaining controls are out of scope).
    """
    if params is None:
        raise ValueError("params (SdeParams) is required")
    pts = problem.grid.interior_points()
    entries = []
    if mode == "penalized":
        if eps is None:
            raise ValueError("penalized mode requires eps")
        policy = penalized_policy(fld, eps, problem.coeffs.g)
        drift_sup = _drift_sup(params, policy, pts)
        for x0 in x0_list:
            est = estimate_penalized_value(params, policy, x0, n_paths,
                                           base_seed)
            ref = fld.value_extended(x0)
            tol = est.tolerance(drift_sup)
            entries.append({
                "x0": list(np.atleast_1d(x0)),
                "mc_mean": est.mean, "stderr": est.stderr,
                "field_value": ref, "tolerance": tol,
                "diff": est.mean - ref,
                "max_rate_observed": est.max_rate_observed,
                "pass": bool(abs(est.mean - ref) <= tol),
            })
    elif mode == "singular":
        if not controls:
            raise ValueError("singular mode requires test controls")
        drift_sup = _drift_sup(params, None, pts)
        for spec in controls:
            extra = spec.rate_at(0.0) if not callable(spec.rate) else 0.0
            for x0 in x0_list:
                est = estimate_singular_value(params, spec, x0, n_paths,
                                              base_seed)
                ref = fld.value_extended(x0)
                tol = est.tolerance(drift_sup + extra)
                entries.append({
                    "x0": list(np.atleast_1d(x0)),
                    "control": repr(spec),
                    "mc_mean": est.mean, "stderr": est.stderr,
                    "field_value": ref, "tolerance": tol,
                    "margin": est.mean - ref + tol,
                    "pass": bool(est.mean >= ref - tol),
                })
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return VerificationReport(entries=entries,
                              all_pass=all(e["pass"] for e in entries))
