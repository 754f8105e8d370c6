"""Duhamel mild-equation solvers and Laplace-functional exponents.

The evolution equation behind every Laplace functional here is

    dv/dt = (1/2) Laplacian v - v^2,    v(0) = initial datum,

whose mild (Duhamel) form is v(r) = S_r f - int_0^r S_{r-h} v(h)^2 dh.
Time marching uses the one-step Duhamel recursion with a
predictor-corrector treatment of the quadratic term:

    predictor:  v~      = S_D v(r) - D * S_D(v(r)^2)
    corrector:  v(r+D)  = S_D v(r) - (D/2) * [S_D(v(r)^2) + v~^2]

The per-step semigroup action S_D is realized by an implicit trapezoidal
(Crank-Nicolson) step of the radial heat operator on a finite-volume grid.
That discretization conserves the radial mass functional exactly and, unlike
re-interpolating a quadrature kernel every step, adds no spurious diffusion
when thousands of steps are chained; the kernel-quadrature route from
``sbmlab.semigroup`` is kept as the independent residual check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from sbmlab.errors import (
    BlowupError,
    DomainError,
    EnvironmentGapError,
    SolverError,
    UnsupportedDimensionError,
)
from sbmlab.radial import RadialGrid, RadialTestFunction, unit_sphere_area
from sbmlab.semigroup import (
    DEFAULT_QUADRATURE,
    GridProfile,
    SemigroupQuadrature,
    apply_semigroup,
    semigroup_values,
)


def scaling_norm(t: float, d: int) -> float:
    """CLT norming a_d(t): sqrt(t) for d >= 4, t^(3/4) for d = 3."""
    if t <= 0:
        raise DomainError("time must be positive")
    if d >= 4:
        return math.sqrt(t)
    if d == 3:
        return t ** 0.75
    raise UnsupportedDimensionError(f"no norming defined for d={d}")


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the mild-equation time march."""

    dt: float | None = None          # None: min(0.05, horizon/400)
    n_r: int = 512                   # 256 leaves ~1.3% spatial error at long horizons
    r_max: float | None = None       # None: 6*sqrt(horizon + sigma^2) + 6*sigma
    picard_iters: int = 2
    tolerance: float = 2e-2          # residual threshold, relative to ||f_t||
    scheme: str = "time_march_predictor_corrector"
    theta_cap: float = 0.5
    clip_fail_fraction: float = 1e-3

    def __post_init__(self):
        if self.dt is not None and self.dt <= 0:
            raise DomainError("dt must be positive")
        if self.tolerance <= 0:
            raise DomainError("tolerance must be positive")
        if self.picard_iters < 2:
            raise DomainError("picard_iters must be >= 2")
        if self.scheme not in ("time_march_predictor_corrector", "picard_global"):
            raise DomainError(f"unknown scheme {self.scheme!r}")

    def resolve_dt(self, horizon: float) -> float:
        return self.dt if self.dt is not None else min(0.05, horizon / 400.0)

    def resolve_grid(self, horizon: float, sigma: float) -> RadialGrid:
        r_max = self.r_max
        if r_max is None:
            r_max = 6.0 * math.sqrt(horizon + sigma ** 2) + 6.0 * sigma
        return RadialGrid(r_max=r_max, n_r=self.n_r)


DEFAULT_SOLVER = SolverConfig()


@dataclass
class SpaceTimeField:
    """A scalar field of (time, radius), stored row-per-time-step.

    ``values[k, i]`` is the field at time ``times[k]`` and radius
    ``grid.nodes[i]``.  ``meta`` records which equation produced it, the test
    function, the horizon and the norming applied to the initial datum.
    """

    grid: RadialGrid
    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != (len(self.times), len(self.grid.nodes)):
            raise DomainError("values shape does not match times x grid nodes")

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def row(self, k: int) -> np.ndarray:
        return self.values[k]

    def profile_at(self, t: float) -> np.ndarray:
        """Field row at time t, linearly interpolated between stored rows."""
        if t < -1e-12 or t > self.horizon + 1e-9:
            raise DomainError(f"time {t} outside stored range [0, {self.horizon}]")
        t = min(max(t, 0.0), self.horizon)
        k = min(int(t / self.dt), len(self.times) - 1) if self.dt else 0
        if k >= len(self.times) - 1:
            return self.values[-1]
        w = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        return (1.0 - w) * self.values[k] + w * self.values[k + 1]

    def interp(self, t: float, radii: np.ndarray) -> np.ndarray:
        """Bilinear evaluation at (t, radii); zero beyond the grid."""
        row = self.profile_at(t)
        return np.interp(np.asarray(radii, dtype=float), self.grid.nodes, row,
                         right=0.0)

    def lambda_pairing_rows(self, d: int, power: int = 1) -> np.ndarray:
        """<lambda, field^power> per time row (finite-volume radial rule)."""
        w = self.grid.volume_weights(d) * unit_sphere_area(d)
        return (self.values ** power) @ w

    def export_binary(self, path) -> None:
        """Flat binary dump: header (d, n_r, n_t, horizon) then row-major values."""
        d = float(self.meta.get("d", 0))
        header = np.array([d, len(self.grid.nodes), len(self.times),
                           self.horizon], dtype=np.float64)
        with open(path, "wb") as fh:
            header.tofile(fh)
            self.values.astype(np.float64).tofile(fh)

    def export_csv_summary(self, path, d: int) -> None:
        """CSV with one line per time row: time, <lambda, field^2>."""
        pair = self.lambda_pairing_rows(d, power=2)
        with open(path, "w") as fh:
            fh.write("time,lambda_pairing_sq\n")
            for t, v in zip(self.times, pair):
                fh.write(f"{t:.10g},{v:.12g}\n")


class RadialHeatPropagator:
    """One Crank-Nicolson step of dv/dt = (1/2) Laplacian_radial v in R^d.

    Conservative finite-volume form: flux F_{i+1/2} = r_{i+1/2}^(d-1)
    (v_{i+1} - v_i)/h with zero flux at both ends, divided by the cell
    volume integral of r^(d-1).  The implicit half-step is a banded solve.
    """

    def __init__(self, grid: RadialGrid, d: int, dt: float):
        from scipy.linalg import solve_banded

        self._solve_banded = solve_banded
        self.grid = grid
        self.d = d
        self.dt = dt
        r = grid.nodes
        h = grid.spacing
        n = len(r)
        half = np.empty(n + 1)
        half[0], half[-1] = 0.0, r[-1]
        half[1:-1] = 0.5 * (r[1:] + r[:-1])
        vol = (half[1:] ** d - half[:-1] ** d) / d
        area = half ** (d - 1)
        area[0] = 0.0
        area[-1] = 0.0  # zero flux at the outer wall
        # L v|_i = 0.5 * (area[i+1] (v_{i+1}-v_i) - area[i] (v_i - v_{i-1})) / (h * vol_i)
        self.lower = 0.5 * area[:-1] / (h * vol)       # coefficient of v_{i-1}
        self.upper = 0.5 * area[1:] / (h * vol)        # coefficient of v_{i+1}
        self.diag = -(self.lower + self.upper)
        c = 0.5 * dt
        ab = np.zeros((3, n))
        ab[0, 1:] = -c * self.upper[:-1]
        ab[1, :] = 1.0 - c * self.diag
        ab[2, :-1] = -c * self.lower[1:]
        self._ab = ab

    def _apply_L(self, v: np.ndarray) -> np.ndarray:
        out = self.diag * v
        out[:-1] += self.upper[:-1] * v[1:]
        out[1:] += self.lower[1:] * v[:-1]
        return out

    def step(self, v: np.ndarray) -> np.ndarray:
        """(I - dt/2 L)^-1 (I + dt/2 L) v."""
        rhs = v + 0.5 * self.dt * self._apply_L(v)
        return self.solve_implicit(rhs)

    def solve_implicit(self, rhs: np.ndarray) -> np.ndarray:
        """(I - dt/2 L)^-1 rhs."""
        return self._solve_banded((1, 1), self._ab, rhs,
                                  overwrite_ab=False, check_finite=False)


def _sigma_of(f: RadialTestFunction) -> float:
    if f.kind == "gaussian":
        return f.sigma
    return max(1.0, float(f.knots_r[-1]) / 3.0)


def _initial_profile(f: RadialTestFunction, nodes: np.ndarray,
                     scale: float) -> np.ndarray:
    return np.asarray(f(nodes), dtype=float) / scale


def solve_v(f: RadialTestFunction, t_horizon: float, d: int,
            scaled: bool = True,
            cfg: SolverConfig = DEFAULT_SOLVER) -> SpaceTimeField:
    """Mild solution of dv/dt = (1/2) Lap v - v^2 on [0, t_horizon].

    ``scaled`` divides the initial datum by the CLT norming a_d(t_horizon);
    that is the field entering every centered-functional computation.
    The returned field carries clip statistics and the initial profile in
    ``meta``.
    """
    if t_horizon <= 0:
        raise DomainError("t_horizon must be positive")
    dt = cfg.resolve_dt(t_horizon)
    grid = cfg.resolve_grid(t_horizon, _sigma_of(f))
    n_steps = max(1, int(round(t_horizon / dt)))
    dt = t_horizon / n_steps
    scale = scaling_norm(t_horizon, d) if scaled else 1.0
    v0 = _initial_profile(f, grid.nodes, scale)
    if dt * np.max(v0) > 0.5:
        raise SolverError(
            f"dt*||v0|| = {dt * np.max(v0):.3f} > 0.5; reduce dt or the amplitude")
    prop = RadialHeatPropagator(grid, d, dt)
    values = np.empty((n_steps + 1, len(grid.nodes)))
    values[0] = v0
    v = v0.copy()
    clipped = 0
    for k in range(n_steps):
        sv = prop.step(v)
        sv2 = prop.step(v * v)
        pred = sv - dt * sv2
        np.maximum(pred, 0.0, out=pred)
        vn = sv - 0.5 * dt * (sv2 + pred * pred)
        for _ in range(cfg.picard_iters - 2):
            prev = vn
            vn = sv - 0.5 * dt * (sv2 + np.maximum(prev, 0.0) ** 2)
            if np.max(np.abs(vn - prev)) <= 1e-14 + 1e-10 * np.max(np.abs(vn)):
                break
        neg = vn < 0
        clipped += int(np.count_nonzero(neg))
        vn[neg] = 0.0
        values[k + 1] = vn
        v = vn
    frac = clipped / float(values.size)
    if frac > cfg.clip_fail_fraction:
        raise SolverError(
            f"clipped {frac:.2%} of nodes (> {cfg.clip_fail_fraction:.2%}); dt too coarse",
            residual=frac)
    times = np.linspace(0.0, t_horizon, n_steps + 1)
    return SpaceTimeField(
        grid=grid, times=times, values=values,
        meta={
            "equation": "quadratic_mild",
            "f": f, "d": d, "horizon": t_horizon,
            "scaling": scale, "scaled": scaled, "dt": dt,
            "clip_fraction": frac,
        })


def mild_residual(field: SpaceTimeField, n_checks: int = 5, seed: int = 0,
                  quadrature: SemigroupQuadrature = DEFAULT_QUADRATURE,
                  n_quad: int = 64) -> float:
    """Residual of the global mild equation by direct substitution.

    At ``n_checks`` random stored times r the field is compared against
    S_r f_t - int_0^r S_{r-h} v(h)^2 dh, with the time integral on a graded
    trapezoid grid and every semigroup action evaluated through the
    independent kernel-quadrature route.  Returns the sup-norm residual
    relative to ||f_t||.
    """
    f: RadialTestFunction = field.meta["f"]
    d: int = field.meta["d"]
    scale: float = field.meta["scaling"]
    rng = np.random.default_rng(seed)
    nodes = field.grid.nodes
    f_t_sup = f.amplitude / scale
    worst = 0.0
    ks = rng.integers(max(1, len(field.times) // 10), len(field.times), n_checks)
    for k in ks:
        r = float(field.times[k])
        sfr = np.asarray(apply_semigroup(f, r, d, quadrature)(nodes)) / scale
        # graded time grid: dense near both endpoints where v^2 varies fastest
        base = np.linspace(0.0, 1.0, n_quad)
        hgrid = r * (3 * base ** 2 - 2 * base ** 3)  # smoothstep clustering
        integ = np.zeros_like(nodes)
        prev_h = None
        prev_val = None
        for h in hgrid:
            v2 = field.interp(h, nodes) ** 2
            gap = r - h
            if gap <= 1e-12:
                val = v2
            else:
                val = semigroup_values(GridProfile(nodes, v2), gap, d, nodes,
                                       quadrature)
            if prev_h is not None:
                integ += 0.5 * (val + prev_val) * (h - prev_h)
            prev_h, prev_val = h, val
        resid = np.max(np.abs(field.row(k) - (sfr - integ)))
        worst = max(worst, resid / f_t_sup)
    return worst


def verify_solution(field: SpaceTimeField, cfg: SolverConfig = DEFAULT_SOLVER,
                    n_checks: int = 5, seed: int = 0) -> float:
    """Residual check of a solved field against cfg.tolerance.

    Raises SolverError (with the residual attached) when substitution into
    the global mild equation misses by more than the configured tolerance.
    """
    resid = mild_residual(field, n_checks=n_checks, seed=seed)
    if resid > cfg.tolerance:
        raise SolverError(
            f"mild-equation residual {resid:.3e} exceeds tolerance {cfg.tolerance:.1e}",
            residual=resid)
    return resid


def check_bracketing(field: SpaceTimeField, n_checks: int = 5, seed: int = 1,
                     slack: float = 5e-3) -> None:
    """Picard bracket: S_r f_t - int S(S f_t)^2 <= v(r) <= S_r f_t pointwise.

    ``slack`` is relative to the local upper envelope, absorbing the grid
    discretization error.  Raises SolverError on violation.
    """
    f: RadialTestFunction = field.meta["f"]
    d: int = field.meta["d"]
    scale: float = field.meta["scaling"]
    nodes = field.grid.nodes
    rng = np.random.default_rng(seed)
    dt = field.dt
    prop = RadialHeatPropagator(field.grid, d, dt)
    # march the second Picard iterate's correction: dy/dt = 1/2 Lap y + (S_h f_t)^2
    n_steps = len(field.times) - 1
    y = np.zeros_like(nodes)
    corrections = np.empty_like(field.values)
    corrections[0] = 0.0
    upper = np.empty_like(field.values)
    upper[0] = _initial_profile(f, nodes, scale)
    amp, s2 = f.amplitude / scale, _sigma_of(f) ** 2
    for k in range(n_steps):
        h0, h1 = field.times[k], field.times[k + 1]
        if f.kind == "gaussian":
            u0 = amp * (s2 / (s2 + h0)) ** (d / 2.0) * np.exp(-nodes ** 2 / (2 * (s2 + h0)))
            u1 = amp * (s2 / (s2 + h1)) ** (d / 2.0) * np.exp(-nodes ** 2 / (2 * (s2 + h1)))
        else:
            u0 = np.asarray(apply_semigroup(f, h0, d)(nodes)) / scale
            u1 = np.asarray(apply_semigroup(f, h1, d)(nodes)) / scale
        y = prop.step(y + 0.5 * dt * u0 * u0) + 0.5 * dt * u1 * u1
        corrections[k + 1] = y
        upper[k + 1] = u1
    ks = rng.integers(1, len(field.times), n_checks)
    for k in ks:
        tol = slack * np.max(upper[k]) + 1e-12
        if np.any(field.row(k) > upper[k] + tol):
            raise SolverError(f"v exceeds S_r f_t at t={field.times[k]:.3f}")
        lower = upper[k] - corrections[k]
        if np.any(field.row(k) < lower - tol):
            raise SolverError(f"v below Picard lower bound at t={field.times[k]:.3f}")


def solve_u(F, t_horizon: float, theta: float, d: int,
            cfg: SolverConfig = DEFAULT_SOLVER,
            sigma_hint: float = 1.0) -> SpaceTimeField:
    """Mild solution of the sourced equation

        u(s) = theta * int_0^s S_{s-r} F(r) dr - int_0^s S_{s-r} u(r)^2 dr.

    ``F`` maps a time to a radial profile (callable or array on the solver
    grid).  Blow-up (sup norm doubling within one step) raises BlowupError:
    theta is outside the validity region of the exponential formula.
    """
    if abs(theta) > cfg.theta_cap:
        raise DomainError(f"|theta|={abs(theta)} exceeds cap {cfg.theta_cap}")
    if t_horizon <= 0:
        raise DomainError("t_horizon must be positive")
    dt = cfg.resolve_dt(t_horizon)
    grid = cfg.resolve_grid(t_horizon, sigma_hint)
    n_steps = max(1, int(round(t_horizon / dt)))
    dt = t_horizon / n_steps
    nodes = grid.nodes

    def source(s: float) -> np.ndarray:
        val = F(s)
        if callable(val):
            val = val(nodes)
        return np.asarray(val, dtype=float)

    prop = RadialHeatPropagator(grid, d, dt)
    values = np.empty((n_steps + 1, len(nodes)))
    values[0] = 0.0
    u = values[0].copy()
    src_prev = source(0.0)
    for k in range(n_steps):
        src_next = source((k + 1) * dt)
        su = prop.step(u + 0.5 * dt * theta * src_prev) + 0.5 * dt * theta * src_next
        su2 = prop.step(u * u)
        pred = su - dt * su2
        un = su - 0.5 * dt * (su2 + pred * pred)
        for _ in range(cfg.picard_iters - 2):
            un = su - 0.5 * dt * (su2 + un * un)
        # allow the linear source growth; doubling beyond it means blow-up
        allowed = 2.0 * np.max(np.abs(u)) + 2.0 * dt * abs(theta) * np.max(np.abs(src_next))
        if k >= 2 and np.max(np.abs(un)) > allowed:
            raise BlowupError(
                f"sup norm doubled within one step at s={k * dt:.3f}; "
                f"theta={theta} outside validity region",
                residual=float(np.max(np.abs(un))))
        values[k + 1] = un
        u = un
        src_prev = src_next
    times = np.linspace(0.0, t_horizon, n_steps + 1)
    return SpaceTimeField(
        grid=grid, times=times, values=values,
        meta={"equation": "sourced_mild", "theta": theta, "d": d,
              "horizon": t_horizon, "scaling": 1.0, "dt": dt})


# -- occupation potential and exponents --------------------------------------

def occupation_potential_field(v_field: SpaceTimeField) -> SpaceTimeField:
    """g(u, x) = int_0^u S_{u-r} v(r)^2 dr for all stored u at once.

    Marched as dg/du = (1/2) Lap g + v(u)^2 with the same propagator as the
    v equation; g(u) also equals S_u f_t - v(u), which the test suite uses
    as an independent identity check.
    """
    d = v_field.meta["d"]
    dt = v_field.dt
    prop = RadialHeatPropagator(v_field.grid, d, dt)
    n = len(v_field.times)
    out = np.empty_like(v_field.values)
    out[0] = 0.0
    g = out[0].copy()
    for k in range(n - 1):
        v2_0 = v_field.values[k] ** 2
        v2_1 = v_field.values[k + 1] ** 2
        g = prop.step(g + 0.5 * dt * v2_0) + 0.5 * dt * v2_1
        out[k + 1] = g
    return SpaceTimeField(
        grid=v_field.grid, times=v_field.times, values=out,
        meta=dict(v_field.meta, equation="occupation_potential"))


def occupation_potential(v_field: SpaceTimeField, u: float) -> GridProfile:
    """The occupation kernel g(u, .) as a radial profile, for a single u."""
    if u < 0 or u > v_field.horizon + 1e-9:
        raise DomainError(f"u={u} beyond stored horizon {v_field.horizon}")
    gf = occupation_potential_field(v_field)
    return GridProfile(nodes=v_field.grid.nodes, values=gf.profile_at(u))


def lambda_exponent_term(f: RadialTestFunction, t: float, d: int,
                         cfg: SolverConfig = DEFAULT_SOLVER,
                         v_field: SpaceTimeField | None = None) -> float:
    """The environment-free part of the centered exponent,
    <lambda, int_0^t S_s v^2(t-s) ds> = int_0^t <lambda, v(r)^2> dr.

    Decays like O(1/t); this is the deterministic decay experiment's value.
    """
    if v_field is None:
        v_field = solve_v(f, t, d, scaled=True, cfg=cfg)
    pair = v_field.lambda_pairing_rows(d, power=2)
    return float(np.trapezoid(pair, v_field.times))


def _check_env_gaps(times: np.ndarray) -> None:
    if len(times) < 2:
        raise EnvironmentGapError("need at least two environment snapshots")
    gaps = np.diff(times)
    if np.max(gaps) > 2.0 * np.median(gaps) + 1e-12:
        raise EnvironmentGapError(
            f"snapshot gap {np.max(gaps):.4g} exceeds twice the typical spacing")


def quenched_laplace_exponent(env, f: RadialTestFunction, t: float,
                              cfg: SolverConfig = DEFAULT_SOLVER) -> float:
    """Exponent of the conditional Laplace functional at horizon t:

        <lambda_box, v(t,.)> + int_0^t <rho_s, v(t-s,.)> ds

    with v the mild solution for the unscaled datum f and rho_s the stored
    environment snapshots (trapezoid in s over snapshot times).
    """
    from sbmlab.particles import EnvironmentTrajectory  # cycle guard

    if not isinstance(env, EnvironmentTrajectory):
        raise DomainError("env must be an EnvironmentTrajectory")
    if env.horizon < t - 1e-9:
        raise DomainError(f"environment covers [0, {env.horizon}], need {t}")
    times = env.snapshot_times()
    _check_env_gaps(times)
    v_field = solve_v(f, t, d=env.config.d, scaled=False, cfg=cfg)
    lam_term = box_pairing_profile(v_field.profile_at(t), v_field.grid,
                                   env.config.d, env.config.L)
    keep = times <= t + 1e-9
    ts = times[keep]
    vals = np.empty(ts.size)
    for i, s in enumerate(ts):
        cloud = env.snapshots[i]
        radii = cloud.radii()
        vals[i] = cloud.mass_per_particle * float(
            np.sum(v_field.interp(t - s, radii)))
    rho_term = float(np.trapezoid(vals, ts))
    return lam_term + rho_term


def centered_exponent(env, f: RadialTestFunction, t: float,
                      cfg: SolverConfig = DEFAULT_SOLVER) -> float:
    """log E^env exp(-Z_t(f)): the lambda term plus the environment pairing
    of the occupation kernel, with v solved for the scaled datum."""
    from sbmlab.particles import EnvironmentTrajectory, gamma_functional

    if not isinstance(env, EnvironmentTrajectory):
        raise DomainError("env must be an EnvironmentTrajectory")
    v_field = solve_v(f, t, d=env.config.d, scaled=True, cfg=cfg)
    lam = lambda_exponent_term(f, t, env.config.d, cfg=cfg, v_field=v_field)
    gam = gamma_functional(env, f, t, cfg=cfg, v_field=v_field)
    return lam + gam


def box_pairing_profile(values: np.ndarray, grid: RadialGrid, d: int,
                        L: float) -> float:
    """<lambda restricted to the box, profile>: radial rule with a product-form
    correction for the mass of each radial shell outside [-L/2, L/2]^d.

    Exact for shells entirely inside the box; shells beyond the inscribed
    radius are weighted by the sphere-box intersection fraction estimated by
    a fixed angular sample (cached per (d, grid, L)).
    """
    frac = _shell_fractions(grid, d, L)
    w = grid.volume_weights(d) * unit_sphere_area(d)
    return float(np.dot(w * frac, values))


_shell_cache: dict = {}


def _shell_fractions(grid: RadialGrid, d: int, L: float) -> np.ndarray:
    key = (id(grid.nodes) if False else (grid.r_max, grid.n_r), d, L)
    got = _shell_cache.get(key)
    if got is not None:
        return got
    r = grid.nodes
    half = L / 2.0
    frac = np.ones_like(r)
    outside = r > half * math.sqrt(d)  # circumscribed radius: fully outside
    boundary = (r > half) & ~outside
    if np.any(boundary):
        rng = np.random.default_rng(123456)
        n_dirs = 4096
        dirs = rng.standard_normal((n_dirs, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        max_c = np.max(np.abs(dirs), axis=1)  # shell point inside iff r*max|u_i| <= L/2
        rb = r[boundary][:, None]
        frac[boundary] = np.mean(rb * max_c[None, :] <= half, axis=1)
    frac[outside] = 0.0
    _shell_cache[key] = frac
    return frac
