"""Potential families, the short-range admissibility audit, and decay weights.

All supported potentials are radial and nonnegative:

* ``power``        V(x) = V0 |x|^(-alpha)
* ``exponential``  V(x) = V0 exp(-|x|)
* ``constant``     V(x) = m^2   (the massive, Klein-Gordon-type control case)
* ``zero``         V(x) = 0

Admissibility means (1/2) x . grad V + V <= 0 on the closed exterior
domain; for radial potentials this is the one-variable criterion
r V'(r) + 2 V(r) <= 0.  The audit evaluates the residual both on the
grid nodes and in closed form over the continuous radius range, because
grid sampling alone could miss a thin violation.

The decay weights are d_n (|x| in 3-D, log(B|x|) in 2-D with
B * inf|x| >= 2) and the light-cone weight psi, which is C^1, positive,
strictly decreasing in time for t > 0, and solves the eikonal equation
psi_t^2 = |grad psi|^2 exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geometry import Grid

ADMISSIBILITY_TOL = 1e-12

KINDS = ("power", "exponential", "constant", "zero")


class PotentialError(ValueError):
    """Invalid potential specification or evaluation request."""


@dataclass(frozen=True)
class PotentialSpec:
    """Parametric radial potential, evaluated on the obstacle exterior only."""

    kind: str
    amplitude: float = 0.0  # V0 for power/exponential, m^2 for constant
    exponent: float = 0.0   # alpha, power kind only

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PotentialError(f"unknown potential kind {self.kind!r}")
        if self.amplitude < 0.0:
            raise PotentialError("potential amplitude must be >= 0")

    @staticmethod
    def power(V0: float, alpha: float) -> "PotentialSpec":
        return PotentialSpec("power", amplitude=float(V0), exponent=float(alpha))

    @staticmethod
    def exponential(V0: float) -> "PotentialSpec":
        return PotentialSpec("exponential", amplitude=float(V0))

    @staticmethod
    def constant(m_squared: float) -> "PotentialSpec":
        return PotentialSpec("constant", amplitude=float(m_squared))

    @staticmethod
    def zero() -> "PotentialSpec":
        return PotentialSpec("zero")

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or self.amplitude == 0.0

    def label(self) -> str:
        if self.kind == "power":
            return f"power(V0={self.amplitude:g}, alpha={self.exponent:g})"
        if self.kind == "exponential":
            return f"exponential(V0={self.amplitude:g})"
        if self.kind == "constant":
            return f"constant(m^2={self.amplitude:g})"
        return "zero"


def value_radial(spec: PotentialSpec, r, min_radius: float | None = None):
    """V(r) for scalar or array radius; power kind is guarded away from r=0."""
    r = np.asarray(r, dtype=float)
    if spec.kind == "power":
        guard = min_radius if min_radius is not None else 0.0
        if np.any(r < guard) or np.any(r <= 0.0):
            raise PotentialError(
                "power potential evaluated inside the excluded ball around the origin"
            )
        out = spec.amplitude * r ** (-spec.exponent)
    elif spec.kind == "exponential":
        out = spec.amplitude * np.exp(-r)
    elif spec.kind == "constant":
        out = np.full_like(r, spec.amplitude)
    else:
        out = np.zeros_like(r)
    return out if out.ndim else float(out)


def radial_derivative(spec: PotentialSpec, r, min_radius: float | None = None):
    """V'(r), closed form per kind (no numeric differentiation in the solver path)."""
    r = np.asarray(r, dtype=float)
    if spec.kind == "power":
        guard = min_radius if min_radius is not None else 0.0
        if np.any(r < guard) or np.any(r <= 0.0):
            raise PotentialError(
                "power potential evaluated inside the excluded ball around the origin"
            )
        out = -spec.exponent * spec.amplitude * r ** (-spec.exponent - 1.0)
    elif spec.kind == "exponential":
        out = -spec.amplitude * np.exp(-r)
    else:
        out = np.zeros_like(r)
    return out if out.ndim else float(out)


def eval_V(spec: PotentialSpec, x, min_radius: float | None = None):
    """Value and analytic gradient of V at a point (any dimension).

    Returns (V, grad) with grad = V'(|x|) * x / |x|.
    """
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(x))
    v = value_radial(spec, r, min_radius=min_radius)
    if r == 0.0:
        if spec.kind in ("power",):
            raise PotentialError("power potential is singular at the origin")
        return float(v), np.zeros_like(x)
    dv = radial_derivative(spec, r, min_radius=min_radius)
    return float(v), dv * x / r


def admissibility_residual(spec: PotentialSpec, r, min_radius: float | None = None):
    """The short-range residual (1/2) r V'(r) + V(r); <= 0 means admissible."""
    return 0.5 * np.asarray(r, dtype=float) * radial_derivative(spec, r, min_radius) + value_radial(
        spec, r, min_radius
    )


def _closed_form_worst(spec: PotentialSpec, r_lo: float, r_hi: float) -> tuple[float, float]:
    """Maximum of the admissibility residual over the continuous range [r_lo, r_hi].

    Returns (worst, radius at which it is attained).  Each supported kind
    has a residual whose extrema over an interval sit at the endpoints:
    power gives V0 (1 - alpha/2) r^(-alpha) (single-signed, monotone in
    r); exponential gives V0 e^(-r) (1 - r/2), decreasing up to r=3 and
    increasing after, so its interval maximum is at an endpoint; constant
    and zero are flat.
    """
    if spec.kind == "zero" or spec.amplitude == 0.0:
        return 0.0, r_lo
    if spec.kind == "constant":
        return spec.amplitude, r_lo
    if spec.kind == "power":
        f_lo = float(admissibility_residual(spec, r_lo))
        f_hi = float(admissibility_residual(spec, r_hi))
        return (f_lo, r_lo) if f_lo >= f_hi else (f_hi, r_hi)
    # exponential: interior critical point at r=3 is a minimum
    f_lo = float(admissibility_residual(spec, r_lo))
    f_hi = float(admissibility_residual(spec, r_hi))
    return (f_lo, r_lo) if f_lo >= f_hi else (f_hi, r_hi)


@dataclass(frozen=True)
class AdmissibilityReport:
    """Grid and closed-form verdicts for the short-range condition."""

    passed: bool
    worst: float
    worst_radius: float
    closed_form_worst: float
    closed_form_radius: float
    closed_form_passed: bool
    consistent: bool
    kind: str
    params: dict

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": self.params,
            "pass": self.passed,
            "worst": self.worst,
            "location": {"radius": self.worst_radius},
            "closed_form": {
                "worst": self.closed_form_worst,
                "radius": self.closed_form_radius,
                "pass": self.closed_form_passed,
            },
            "consistent": self.consistent,
        }


def check_A2(spec: PotentialSpec, grid: Grid) -> AdmissibilityReport:
    """Audit the short-range condition (1/2) x . grad V + V <= 0 on a grid.

    The grid verdict maximizes the residual over the domain nodes; the
    closed-form verdict maximizes the same one-variable residual over the
    continuous radius range covered by the domain.  The two verdicts must
    agree (on radial grids they agree exactly because the extrema sit at
    endpoint nodes).
    """
    fluid = grid.fluid_mask
    radii = grid.radii[fluid] if grid.mode == "cartesian2d" else grid.radii
    res = admissibility_residual(spec, radii)
    res = np.asarray(res, dtype=float)
    i = int(np.argmax(res))
    grid_worst = float(res[i])
    grid_radius = float(radii[i])
    r_hi = float(np.max(grid.radii))
    worst_cf, r_cf = _closed_form_worst(spec, grid.rho_min, r_hi)
    grid_pass = grid_worst <= ADMISSIBILITY_TOL
    cf_pass = worst_cf <= ADMISSIBILITY_TOL
    params = {"amplitude": spec.amplitude}
    if spec.kind == "power":
        params["exponent"] = spec.exponent
    return AdmissibilityReport(
        passed=grid_pass,
        worst=grid_worst,
        worst_radius=grid_radius,
        closed_form_worst=worst_cf,
        closed_form_radius=r_cf,
        closed_form_passed=cf_pass,
        consistent=grid_pass == cf_pass,
        kind=spec.kind,
        params=params,
    )


@dataclass(frozen=True)
class WeightParams:
    """Dimension and scale of the d_n weight: |x| (n=3) or log(B|x|) (n=2)."""

    n: int
    B: float = 1.0

    def __post_init__(self):
        if self.n not in (2, 3):
            raise PotentialError("weight dimension n must be 2 or 3")
        if self.n == 2 and not self.B > 0.0:
            raise PotentialError("n=2 weight needs a positive scale B")

    @staticmethod
    def for_grid(grid: Grid, B: float | None = None) -> "WeightParams":
        """Default weights for a grid: n from the mode, minimal admissible B.

        B = 2 / inf|x| is the smallest scale with B*inf|x| >= 2, giving
        the weakest (most honest) 2-D weight.
        """
        n = 3 if grid.mode == "radial3d" else 2
        if n == 3:
            return WeightParams(n=3)
        if B is None:
            B = 2.0 / grid.rho_min
        if B * grid.rho_min < 2.0 * (1.0 - 1e-12):
            raise PotentialError(
                f"B={B} violates B*inf|x| >= 2 (inf|x| = {grid.rho_min})"
            )
        return WeightParams(n=2, B=B)


def weight_dn(params: WeightParams, x):
    """The d_n weight at a point or at an array of radii.

    For n=2 the argument must satisfy B*|x| >= 2, which the scale
    condition guarantees on the domain; smaller radii are rejected.
    """
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x) if x.ndim == 1 and x.shape[0] in (2, 3) else x
    r = np.asarray(r, dtype=float)
    if params.n == 3:
        return float(r) if r.ndim == 0 else r
    if np.any(params.B * r < 2.0 * (1.0 - 1e-12)):
        raise PotentialError(
            "d_2 weight evaluated where B*|x| < 2; such points lie outside any "
            "admissible domain for this scale"
        )
    out = np.log(params.B * r)
    return float(out) if out.ndim == 0 else out


class PsiValues(NamedTuple):
    psi: float
    psi_t: float
    grad: np.ndarray


def weight_psi(t: float, x) -> PsiValues:
    """Light-cone weight at a point: value, time derivative, and gradient.

    psi = 1 + |x| - t outside the cone (|x| >= t) and (1 + t - |x|)^(-1)
    inside; the two branches match with matching first derivatives on
    |x| = t.  The gradient direction is undefined at x = 0.
    """
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(x))
    if r == 0.0:
        raise PotentialError("psi gradient requested at x = 0 (direction undefined)")
    unit = x / r
    if r >= t:
        return PsiValues(psi=1.0 + r - t, psi_t=-1.0, grad=unit.copy())
    a = 1.0 + t - r
    return PsiValues(psi=1.0 / a, psi_t=-1.0 / a**2, grad=unit / a**2)


def psi_values_radial(t: float, r: np.ndarray) -> np.ndarray:
    """Vectorized psi(t, |x|) over an array of radii (weights for energy integrals)."""
    r = np.asarray(r, dtype=float)
    outside = r >= t
    denom = np.where(outside, 1.0, 1.0 + t - r)
    return np.where(outside, 1.0 + r - t, 1.0 / denom)


def check_eikonal(t: float, x) -> tuple[float, float]:
    """Residual psi_t^2 - |grad psi|^2 and the sign witness psi_t at one point."""
    vals = weight_psi(t, x)
    grad_sq = float(np.dot(vals.grad, vals.grad))
    return vals.psi_t**2 - grad_sq, vals.psi_t


def eikonal_residuals(t: np.ndarray, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized eikonal check over (t_i, x_i) samples.

    Returns (residuals, psi_t).  The gradient norm is computed from the
    actual gradient vector, not algebraically cancelled, so the residual
    honestly witnesses the identity to rounding.
    """
    t = np.asarray(t, dtype=float)
    points = np.asarray(points, dtype=float)
    r = np.linalg.norm(points, axis=1)
    if np.any(r == 0.0):
        raise PotentialError("psi gradient requested at x = 0 (direction undefined)")
    unit = points / r[:, None]
    inside = r < t
    a = np.where(inside, 1.0 + t - r, 1.0)
    factor = np.where(inside, 1.0 / a**2, 1.0)
    grad = unit * factor[:, None]
    grad_sq = np.einsum("ij,ij->i", grad, grad)
    psi_t = np.where(inside, -1.0 / a**2, -1.0)
    return psi_t**2 - grad_sq, psi_t
