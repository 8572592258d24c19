"""Explicit leapfrog time stepping for the exterior wave problem.

The continuum problem is u_tt - Lap(u) + V(x) u = 0 outside the obstacle
with homogeneous Dirichlet data on the obstacle boundary, truncated at
|x| = L far enough out that reflections stay causally irrelevant.

* radial3d: the substitution w = r*u turns the radially symmetric 3-D
  operator into w_tt = w_rr - V(r) w on [rho0, L] with w = 0 at both
  ends.  The update is the standard three-level central-difference
  scheme, second order in space and time.
* cartesian2d: five-point Laplacian on the masked lattice; obstacle and
  truncation nodes are pinned to zero and boundary-adjacent stencils
  read those zeros.

Stability requires dt <= 0.9 h (radial3d) and dt <= 0.6 h (cartesian2d).

The state carries three path integrals advanced with midpoint quadrature
in time, synchronized with the steps:

* flux_accum  = (1/2) int_0^t int_{dOmega} (du/dnu)^2 (sigma . nu) dS ds
  (radial mode only; on the sphere r = rho0 this is
  -(rho0/2) * 4 pi rho0^2 * (du/dr)^2 integrated in time, hence <= 0
  whenever the obstacle is star-shaped),
* vterm_accum = int_0^t int ((1/2) x . grad V + V) u^2 dx ds
  (<= 0 whenever the potential is admissible),
* v           = int_0^t u ds per node (drives the Hardy-quotient and
  time-integrated identity diagnostics).

A d'Alembert oracle for the free radial problem (odd extension about
r = rho0) provides an independent reference solution for validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .geometry import Grid
from .potential import PotentialSpec, admissibility_residual, value_radial

CFL_LIMIT = {"radial3d": 0.9, "cartesian2d": 0.6}

_FINITE_CHECK_EVERY = 25  # cartesian mode checks fields every this many steps


class CFLError(ValueError):
    """Time step violates the explicit-scheme stability bound."""


class InstabilityError(RuntimeError):
    """Non-finite field values: the integration has blown up."""


class DataSupportError(ValueError):
    """Initial data support violates the near-boundary margin or r_supp."""


@dataclass(frozen=True)
class BumpProfile:
    """Compactly supported radial bump a*(1 - s^2)^p, s = (r - center)/width.

    The profile is C^(p-1) with polynomial closed forms for the
    derivative and for the antiderivatives needed by the d'Alembert
    oracle, so no numerical quadrature enters the reference solution.
    """

    center: float
    width: float
    amplitude: float
    power: int = 8

    def __post_init__(self):
        if self.width <= 0.0:
            raise DataSupportError("bump width must be positive")
        if self.power < 2:
            raise DataSupportError("bump power must be >= 2 for a C^1 profile")

    @property
    def support(self) -> tuple[float, float]:
        return (self.center - self.width, self.center + self.width)

    def value(self, r):
        s = (np.asarray(r, dtype=float) - self.center) / self.width
        base = np.where(np.abs(s) < 1.0, 1.0 - s**2, 0.0)
        out = self.amplitude * base**self.power
        return out if out.ndim else float(out)

    def derivative(self, r):
        s = (np.asarray(r, dtype=float) - self.center) / self.width
        inside = np.abs(s) < 1.0
        base = np.where(inside, 1.0 - s**2, 1.0)
        out = np.where(
            inside,
            self.amplitude * self.power * base ** (self.power - 1) * (-2.0 * s) / self.width,
            0.0,
        )
        return out if out.ndim else float(out)

    def _poly_antiderivative(self, s):
        """P(s) = int_0^s (1 - q^2)^p dq, clamped to the support in s."""
        s = np.clip(np.asarray(s, dtype=float), -1.0, 1.0)
        out = np.zeros_like(s)
        for k in range(self.power + 1):
            out += math.comb(self.power, k) * (-1.0) ** k * s ** (2 * k + 1) / (2 * k + 1)
        return out

    def antiderivative(self, r):
        """int_{-inf}^r value(q) dq in closed form."""
        s = (np.asarray(r, dtype=float) - self.center) / self.width
        p1 = self._poly_antiderivative(1.0)
        out = self.amplitude * self.width * (self._poly_antiderivative(s) + p1)
        return out if out.ndim else float(out)

    def r_weighted_antiderivative(self, r):
        """int_{-inf}^r q * value(q) dq in closed form (oracle ingredient)."""
        s = np.clip((np.asarray(r, dtype=float) - self.center) / self.width, -1.0, 1.0)
        p1 = self._poly_antiderivative(1.0)
        term_c = self.center * (self._poly_antiderivative(s) + p1)
        # int s (1-s^2)^p ds = -(1-s^2)^(p+1) / (2(p+1)), zero at s = +-1
        q = -((1.0 - s**2) ** (self.power + 1)) / (2.0 * (self.power + 1))
        term_s = self.width * q
        out = self.amplitude * self.width * (term_c + term_s)
        return out if out.ndim else float(out)

    def scaled(self, factor: float) -> "BumpProfile":
        return replace(self, amplitude=self.amplitude * factor)


@dataclass(frozen=True)
class InitialData:
    """Initial displacement/velocity bumps supported in an annulus.

    Both profiles must vanish within distance 2h of the obstacle and
    outside r_supp; ``init_state`` enforces the margin against the grid
    it is given.
    """

    u0: Optional[BumpProfile]
    u1: Optional[BumpProfile]
    r_supp: float

    def scaled(self, factor: float) -> "InitialData":
        return InitialData(
            u0=self.u0.scaled(factor) if self.u0 else None,
            u1=self.u1.scaled(factor) if self.u1 else None,
            r_supp=self.r_supp,
        )

    def profiles(self):
        return [p for p in (self.u0, self.u1) if p is not None]


@dataclass
class WaveState:
    """Fields at one time level plus the accumulated path integrals."""

    step_index: int
    t: float
    u: np.ndarray
    u_prev: np.ndarray
    flux_accum: float
    vterm_accum: float
    v: np.ndarray


@dataclass(frozen=True)
class Snapshot:
    """Completed diagnostic view of a state: displacement, centered velocity,
    and the accumulators, handed off to the functionals layer."""

    t: float
    u: np.ndarray
    u_t: np.ndarray
    v: np.ndarray
    flux_accum: float
    vterm_accum: float


class Stepper:
    """Leapfrog integrator bound to one (grid, potential, dt) triple.

    Samples the potential once and owns the CFL check; states it produces
    are plain data and are never shared between concurrent simulations.
    """

    def __init__(self, grid: Grid, potential: PotentialSpec, dt: float):
        limit = CFL_LIMIT.get(grid.mode)
        if limit is None:
            raise ValueError(f"unsupported grid mode {grid.mode!r}")
        if not 0.0 < dt <= limit * grid.h + 1e-15 * grid.h:
            raise CFLError(
                f"dt={dt} violates the stability bound dt <= {limit}*h = {limit * grid.h} "
                f"for mode {grid.mode}"
            )
        self.grid = grid
        self.potential = potential
        self.dt = float(dt)
        fluid = grid.fluid_mask
        V = np.zeros_like(grid.radii)
        V[fluid] = value_radial(potential, grid.radii[fluid])
        if np.any(V < 0.0):
            raise ValueError("potential must be nonnegative on the domain")
        self.V = V
        a2 = np.zeros_like(grid.radii)
        a2[fluid] = admissibility_residual(potential, grid.radii[fluid])
        self._a2_weighted = grid.weights * a2
        self._forced = grid.forced_mask
        if grid.mode == "radial3d":
            self._r = grid.r
            self._wV = self.V  # potential in the w = r*u evolution variable
        self._step_count = 0

    # -- field updates -------------------------------------------------

    def _next_radial(self, u: np.ndarray, u_prev: np.ndarray) -> np.ndarray:
        r = self._r
        h, dt = self.grid.h, self.dt
        w = r * u
        w_prev = r * u_prev
        w_next = np.zeros_like(w)
        lap = (w[2:] - 2.0 * w[1:-1] + w[:-2]) / (h * h)
        w_next[1:-1] = 2.0 * w[1:-1] - w_prev[1:-1] + dt * dt * (lap - self._wV[1:-1] * w[1:-1])
        return w_next / r

    def _next_cartesian(self, u: np.ndarray, u_prev: np.ndarray) -> np.ndarray:
        dt = self.dt
        lam = (dt / self.grid.h) ** 2
        u_next = (2.0 - dt * dt * self.V) * u
        u_next -= u_prev
        u_next[1:-1, 1:-1] += lam * (
            u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2] - 4.0 * u[1:-1, 1:-1]
        )
        u_next[self._forced] = 0.0
        return u_next

    def peek(self, state: WaveState) -> np.ndarray:
        """Displacement one step ahead, without committing the step."""
        if self.grid.mode == "radial3d":
            return self._next_radial(state.u, state.u_prev)
        return self._next_cartesian(state.u, state.u_prev)

    def _boundary_flux_rate(self, u_mid: np.ndarray) -> float:
        # one-sided second-order du/dr at r = rho0; du/dnu = -du/dr there
        h = self.grid.h
        du_dr = float(-3.0 * u_mid[0] + 4.0 * u_mid[1] - u_mid[2]) / (2.0 * h)
        rho0 = self.grid.rho0
        area = 4.0 * math.pi * rho0 * rho0
        return 0.5 * du_dr * du_dr * (-rho0) * area

    def advance(self, state: WaveState, u_next: np.ndarray | None = None) -> WaveState:
        """One leapfrog step; accumulators advance by the time-midpoint rule."""
        if u_next is None:
            u_next = self.peek(state)
        self._step_count += 1
        if self.grid.mode == "radial3d" or self._step_count % _FINITE_CHECK_EVERY == 0:
            if not np.isfinite(u_next).all():
                raise InstabilityError(
                    f"non-finite field values after step {state.step_index + 1}; "
                    "integration aborted"
                )
        dt = self.dt
        u_mid = 0.5 * (state.u + u_next)
        vterm = state.vterm_accum + dt * float(
            np.dot(self._a2_weighted.ravel(), (u_mid * u_mid).ravel())
        )
        if self.grid.mode == "radial3d":
            flux = state.flux_accum + dt * self._boundary_flux_rate(u_mid)
        else:
            flux = state.flux_accum
        k = state.step_index + 1
        return WaveState(
            step_index=k,
            t=k * dt,
            u=u_next,
            u_prev=state.u,
            flux_accum=flux,
            vterm_accum=vterm,
            v=state.v + dt * u_mid,
        )

    # -- initialization and sampling ------------------------------------

    def initial_state(self, data: InitialData) -> WaveState:
        grid = self.grid
        margin = grid.rho0 + 2.0 * grid.h
        for prof in data.profiles():
            lo, hi = prof.support
            if lo < margin - 1e-12:
                raise DataSupportError(
                    f"profile support starts at {lo} but must stay outside "
                    f"rho0 + 2h = {margin}"
                )
            if hi > data.r_supp + 1e-12:
                raise DataSupportError(
                    f"profile support ends at {hi} beyond r_supp = {data.r_supp}"
                )
        if data.r_supp >= grid.L:
            raise DataSupportError("r_supp must lie inside the truncated domain")
        u0 = data.u0.value(grid.radii) if data.u0 else np.zeros_like(grid.radii)
        u1 = data.u1.value(grid.radii) if data.u1 else np.zeros_like(grid.radii)
        u0 = np.asarray(u0, dtype=float)
        u1 = np.asarray(u1, dtype=float)
        u0[self._forced] = 0.0
        u1[self._forced] = 0.0
        dt = self.dt
        if grid.mode == "radial3d":
            r = self._r
            h = grid.h
            w0, w1 = r * u0, r * u1
            gw = np.zeros_like(w0)
            gw[1:-1] = (w0[2:] - 2.0 * w0[1:-1] + w0[:-2]) / (h * h) - self._wV[1:-1] * w0[1:-1]
            w_prev = w0 - dt * w1 + 0.5 * dt * dt * gw
            w_prev[0] = 0.0
            w_prev[-1] = 0.0
            u_prev = w_prev / r
            flux0 = 0.0
        else:
            lam = 1.0 / grid.h**2
            g = -self.V * u0
            g[1:-1, 1:-1] += lam * (
                u0[2:, 1:-1] + u0[:-2, 1:-1] + u0[1:-1, 2:] + u0[1:-1, :-2] - 4.0 * u0[1:-1, 1:-1]
            )
            u_prev = u0 - dt * u1 + 0.5 * dt * dt * g
            u_prev[self._forced] = 0.0
            flux0 = math.nan
        return WaveState(
            step_index=0,
            t=0.0,
            u=u0,
            u_prev=u_prev,
            flux_accum=flux0,
            vterm_accum=0.0,
            v=np.zeros_like(u0),
        )

    def snapshot(self, state: WaveState, u_next: np.ndarray | None = None) -> Snapshot:
        """Diagnostic view at the state's time; the centered velocity uses
        the field one step ahead (peeked, not committed)."""
        if u_next is None:
            u_next = self.peek(state)
        u_t = (u_next - state.u_prev) / (2.0 * self.dt)
        return Snapshot(
            t=state.t,
            u=state.u,
            u_t=u_t,
            v=state.v,
            flux_accum=state.flux_accum,
            vterm_accum=state.vterm_accum,
        )


def init_state(grid: Grid, data: InitialData, dt: float, potential: PotentialSpec) -> WaveState:
    """Initialize a wave state with the second-order accurate Taylor start
    u_prev = u0 - dt*u1 + (dt^2/2)(Lap_h(u0) - V u0)."""
    return Stepper(grid, potential, dt).initial_state(data)


def step(state: WaveState, grid: Grid, potential: PotentialSpec, dt: float) -> WaveState:
    """One leapfrog step (convenience wrapper; loops should use a Stepper)."""
    return Stepper(grid, potential, dt).advance(state)


def oracle_free_radial(
    data: InitialData,
    t: float,
    r,
    rho0: float,
    potential: PotentialSpec | None = None,
):
    """Reference solution of the free (V = 0) radial problem.

    Solves w_tt = w_rr on [rho0, inf) with w(t, rho0) = 0 by d'Alembert's
    formula applied to the odd extension of the initial data about
    r = rho0, and returns u = w/r.  All ingredients are closed-form
    polynomials, so the oracle is independent of the finite-difference
    path it validates.
    """
    if potential is not None and not potential.is_zero:
        raise ValueError("the d'Alembert oracle applies to the free problem only")
    r = np.asarray(r, dtype=float)
    lo = r - t
    hi = r + t

    def f_tilde(xi):
        xi = np.asarray(xi, dtype=float)
        if data.u0 is None:
            return np.zeros_like(xi)
        mirrored = 2.0 * rho0 - xi
        direct = xi * data.u0.value(xi)
        image = mirrored * data.u0.value(mirrored)
        return np.where(xi >= rho0, direct, -image)

    def g_primitive(xi):
        # int_{rho0}^{xi} q*u1(q) dq, extended evenly about rho0 (the odd
        # extension of the integrand makes its primitive even)
        xi = np.asarray(xi, dtype=float)
        if data.u1 is None:
            return np.zeros_like(xi)
        folded = np.where(xi >= rho0, xi, 2.0 * rho0 - xi)
        base = data.u1.r_weighted_antiderivative(rho0)
        return data.u1.r_weighted_antiderivative(folded) - base

    w = 0.5 * (f_tilde(lo) + f_tilde(hi)) + 0.5 * (g_primitive(hi) - g_primitive(lo))
    u = w / r
    return u if u.ndim else float(u)
