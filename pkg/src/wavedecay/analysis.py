"""Turns diagnostic time series into verdicts.

The decay bound has an unquantified constant, so certification is
property-based: the scaled local energy (t - R) E_R(t) / decay_scale
must stay bounded with no upward trend over the tail of the window, the
fitted constant must be stable across observation radii (the bound is
R-free) and across grid refinement, and the pointwise inequality chains
must hold sample by sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .functionals import Constants, TimeSeries

WINDOW_FACTOR = 2.0          # certification window is [2R, T]
TREND_SLOPE_MAX = 0.05       # log-log slope ceiling on the last third
R_RATIO_MAX = 3.0            # max/min fitted constant across an R sweep
RESOLUTION_DRIFT_MAX = 0.10  # fitted-constant drift under h -> h/2
DEGENERATE_TAIL = 1e-9       # below this, the scaled tail counts as zero


class AnalysisError(ValueError):
    """Certification request that cannot be evaluated."""


@dataclass
class DecayCertificate:
    """Fitted constants and verdicts for the 1/(t - R) local-energy bound.

    c_hat is the maximum of (t - R) E_R(t) / decay_scale over the window;
    rate_slope is the least-squares slope of log E_R against log(t - R)
    over the last half of the window (an upper-bound theorem does not
    force slope <= -1, only boundedness); trend_slope is the slope of
    log((t - R) E_R) on the last third, whose positivity would signal the
    bound degrading.
    """

    R: float
    decay_scale: float
    c_hat: float
    window: tuple[float, float]
    rate_slope: float
    trend_slope: float
    bound_holds: bool
    R_stable: bool | None = None
    resolution_stable: bool | None = None
    config_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "R": self.R,
            "decay_scale": self.decay_scale,
            "c_hat": self.c_hat,
            "window": list(self.window),
            "rate_slope": self.rate_slope,
            "trend_slope": self.trend_slope,
            "verdicts": {
                "bound_holds": self.bound_holds,
                "R_stable": self.R_stable,
                "resolution_stable": self.resolution_stable,
            },
            "config_hash": self.config_hash,
        }


def _loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    good = (x > 0.0) & (y > 0.0)
    if np.count_nonzero(good) < 3:
        return math.nan
    return float(np.polyfit(np.log(x[good]), np.log(np.clip(y[good], 1e-300, None)), 1)[0])


def certify_decay(series: TimeSeries, constants: Constants, R: float) -> DecayCertificate:
    """Certificate for one observation radius over the window [2R, T]."""
    if constants.decay_scale <= 0.0:
        raise AnalysisError(
            "decay_scale <= 0: the decay bound is vacuous for this data (zero data?)"
        )
    if R not in series.R_list:
        raise AnalysisError(f"series does not carry diagnostics for R={R}")
    T = series.records[-1].t
    if T < WINDOW_FACTOR * 2.0 * R:
        raise AnalysisError(f"window too short: need T >= 4R = {4 * R}, got T = {T}")
    t = series.times()
    er = series.keyed_column("E_R", R)
    in_window = t >= WINDOW_FACTOR * R
    tw = t[in_window]
    ew = er[in_window]
    if tw.size < 6:
        raise AnalysisError("window too short: fewer than 6 samples in [2R, T]")
    scaled = (tw - R) * ew / constants.decay_scale
    c_hat = float(np.max(scaled))
    t0, t1 = float(tw[0]), float(tw[-1])
    if c_hat <= DEGENERATE_TAIL:
        # tail energy at numerical zero: the bound holds trivially
        return DecayCertificate(
            R=R, decay_scale=constants.decay_scale, c_hat=c_hat, window=(t0, t1),
            rate_slope=math.nan, trend_slope=math.nan, bound_holds=True,
            config_hash=series.config_hash,
        )
    last_third = tw >= t1 - (t1 - t0) / 3.0
    if float(np.max(scaled[last_third])) <= 1e-9 * c_hat:
        # the tail has collapsed to numerical zero relative to the
        # certified maximum; no trend to fit, the bound holds outright
        trend = math.nan
    else:
        trend = _loglog_slope(tw[last_third] - R, scaled[last_third])
    last_half = tw >= t1 - (t1 - t0) / 2.0
    rate = _loglog_slope(tw[last_half] - R, ew[last_half])
    bound_holds = math.isfinite(c_hat) and (math.isnan(trend) or trend <= TREND_SLOPE_MAX)
    return DecayCertificate(
        R=R, decay_scale=constants.decay_scale, c_hat=c_hat, window=(t0, t1),
        rate_slope=rate, trend_slope=trend, bound_holds=bound_holds,
        config_hash=series.config_hash,
    )


@dataclass(frozen=True)
class SweepVerdict:
    passed: bool
    ratio: float
    c_hats: dict[float, float]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "ratio": self.ratio,
            "c_hats": {f"{R:g}": c for R, c in self.c_hats.items()},
        }


def check_R_independence(certs: list[DecayCertificate]) -> SweepVerdict:
    """The decay constant must not drift with the observation radius.

    Degenerate (numerically zero) tails are excluded from the ratio; if
    every certificate is degenerate the sweep passes trivially.
    """
    if len(certs) < 3:
        raise AnalysisError("R-independence needs at least 3 radii")
    hashes = {c.config_hash for c in certs}
    scales = {c.decay_scale for c in certs}
    if len(hashes) > 1 or len(scales) > 1:
        raise AnalysisError("R-independence requires certificates from the same run")
    c_hats = {c.R: c.c_hat for c in certs}
    live = [c.c_hat for c in certs if c.c_hat > DEGENERATE_TAIL]
    if not live:
        verdict = SweepVerdict(passed=True, ratio=1.0, c_hats=c_hats)
    else:
        ratio = max(live) / min(live)
        verdict = SweepVerdict(passed=ratio <= R_RATIO_MAX, ratio=float(ratio), c_hats=c_hats)
    for c in certs:
        c.R_stable = verdict.passed
    return verdict


def check_resolution_stability(
    cert: DecayCertificate, cert_refined: DecayCertificate
) -> bool:
    """c_hat must move by at most 10% when the grid is refined h -> h/2."""
    if cert.R != cert_refined.R:
        raise AnalysisError("resolution comparison needs matching radii")
    base = max(abs(cert.c_hat), DEGENERATE_TAIL)
    drift = abs(cert_refined.c_hat - cert.c_hat) / base
    ok = drift <= RESOLUTION_DRIFT_MAX
    cert.resolution_stable = ok
    return ok


@dataclass(frozen=True)
class L2Certificate:
    """Local L2 decay for power potentials: the certified constant of
    int_{B_R} u^2 <= (2 R^alpha / V0) * c * decay_scale / (t - R)."""

    R: float
    constant: float
    chain_holds: bool
    trend_slope: float
    bound_holds: bool

    def to_dict(self) -> dict:
        return {
            "R": self.R,
            "constant": self.constant,
            "chain_holds": self.chain_holds,
            "trend_slope": self.trend_slope,
            "bound_holds": self.bound_holds,
        }


def certify_local_l2(
    series: TimeSeries, constants: Constants, R: float, V0: float, alpha: float
) -> L2Certificate:
    """Certify the local L2 bound implied by the decay bound for
    V = V0 |x|^(-alpha) with alpha >= 2.

    The chain is pointwise algebra: V >= V0 R^(-alpha) on the ball, so
    (V0 / 2R^alpha) L2_R <= (1/2) int_{B_R} V u^2 <= E_R at every sample.
    """
    if alpha < 2.0 or V0 <= 0.0:
        raise AnalysisError("local L2 certification needs a power potential with alpha >= 2, V0 > 0")
    if R not in series.R_list:
        raise AnalysisError(f"series does not carry diagnostics for R={R}")
    t = series.times()
    l2 = series.keyed_column("L2_R", R)
    er = series.keyed_column("E_R", R)
    factor = 2.0 * R**alpha / V0
    chain = bool(np.all(l2 <= factor * er * (1.0 + 1e-12) + 1e-300))
    in_window = t >= WINDOW_FACTOR * R
    tw, lw = t[in_window], l2[in_window]
    scaled = (tw - R) * lw / (factor * constants.decay_scale)
    constant = float(np.max(scaled)) if scaled.size else math.nan
    if scaled.size and constant > DEGENERATE_TAIL:
        t0, t1 = float(tw[0]), float(tw[-1])
        last_third = tw >= t1 - (t1 - t0) / 3.0
        trend = _loglog_slope(tw[last_third] - R, scaled[last_third])
    else:
        trend = math.nan
    bound = math.isfinite(constant) and (math.isnan(trend) or trend <= TREND_SLOPE_MAX)
    return L2Certificate(
        R=R, constant=constant, chain_holds=chain, trend_slope=trend,
        bound_holds=bound and chain,
    )


@dataclass(frozen=True)
class ConcentrationReport:
    """Per-sample decomposition of the total energy into ball / shell /
    far-exterior pieces, with the certified far-field bound."""

    R: float
    epsilon: float
    partition_max_gap: float
    partition_holds: bool
    far_bound_holds: bool
    far_bound_margin: float
    shell_bound_holds: bool
    rows: list[dict] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "R": self.R,
            "epsilon": self.epsilon,
            "partition_max_gap": self.partition_max_gap,
            "partition_holds": self.partition_holds,
            "far_bound_holds": self.far_bound_holds,
            "far_bound_margin": self.far_bound_margin,
            "shell_bound_holds": self.shell_bound_holds,
        }


def concentration_report(
    series: TimeSeries,
    constants: Constants,
    R: float,
    epsilon: float,
    certificate: DecayCertificate | None = None,
) -> ConcentrationReport:
    """Check the energy-concentration picture.

    * partition: E = E_R + A + far_ext exactly (1e-12 relative),
    * far field: far_ext(t) <= weighted_energy / (1 + eps t) at every
      sample,
    * shell: |E(0) - A(t)| <= c_hat*decay_scale/(t-R) + weighted_energy/(1+eps t)
      on the certification window (the shell carries all the energy up to
      the two certified remainders).
    """
    if R != series.R_list[0]:
        raise AnalysisError(
            f"concentration diagnostics were recorded for the primary radius "
            f"R={series.R_list[0]}, not R={R}"
        )
    if epsilon != series.epsilon:
        raise AnalysisError(f"series was recorded with epsilon={series.epsilon}")
    t = series.times()
    E = series.column("E")
    er = series.keyed_column("E_R", R)
    A = series.column("A")
    far = series.column("far_ext")
    gap = np.abs(E - er - A - far)
    scale = np.maximum(E, 1e-300)
    partition_max = float(np.max(gap / np.maximum(scale, 1.0)))
    partition_ok = partition_max <= 1e-12
    I_w = constants.weighted_energy
    far_margin = float(np.min(I_w / (1.0 + epsilon * t) - far))
    far_ok = bool(np.all(far <= I_w / (1.0 + epsilon * t) + 1e-12 * max(I_w, 1.0)))
    rows = []
    shell_ok = True
    E0 = constants.energy
    if certificate is None:
        c_hat = None
    else:
        c_hat = certificate.c_hat
    for i in range(t.size):
        row = {
            "t": float(t[i]),
            "E_R": float(er[i]),
            "A": float(A[i]),
            "far_ext": float(far[i]),
            "gap": float(gap[i]),
        }
        if c_hat is not None and t[i] >= WINDOW_FACTOR * R:
            allowance = c_hat * constants.decay_scale / (t[i] - R) + I_w / (1.0 + epsilon * t[i])
            row["shell_allowance"] = float(allowance)
            if abs(E0 - A[i]) > allowance * (1.0 + 1e-9):
                shell_ok = False
        rows.append(row)
    return ConcentrationReport(
        R=R,
        epsilon=epsilon,
        partition_max_gap=partition_max,
        partition_holds=partition_ok,
        far_bound_holds=far_ok,
        far_bound_margin=far_margin,
        shell_bound_holds=shell_ok,
        rows=rows,
    )


@dataclass(frozen=True)
class ConvergenceStudy:
    """Observed orders under grid refinement {h, h/2, h/4}."""

    quantity: str
    spacings: tuple[float, ...]
    errors: tuple[float, ...]
    order: float

    def to_dict(self) -> dict:
        return {
            "quantity": self.quantity,
            "spacings": list(self.spacings),
            "errors": list(self.errors),
            "order": self.order,
        }


def observed_order(spacings, errors, quantity: str = "") -> ConvergenceStudy:
    """Least-squares slope of log(error) against log(h); errors must shrink
    monotonically under refinement, anything else flags a bug."""
    spacings = tuple(float(h) for h in spacings)
    errors = tuple(float(e) for e in errors)
    if len(spacings) < 2 or len(spacings) != len(errors):
        raise AnalysisError("need matched spacing/error lists with >= 2 levels")
    if any(e2 >= e1 for e1, e2 in zip(errors, errors[1:])):
        raise AnalysisError(
            f"non-monotone refinement errors for {quantity or 'quantity'}: {errors}"
        )
    slope = float(np.polyfit(np.log(spacings), np.log(errors), 1)[0])
    return ConvergenceStudy(quantity=quantity, spacings=spacings, errors=errors, order=slope)


def convergence_study(config, levels=(1, 2, 4)) -> dict[str, ConvergenceStudy]:
    """Refinement study over {h, h/2, h/4} (radial mode).

    Measures, at fixed Courant number, the observed order of

    * the sup-norm solution error against the d'Alembert oracle (only
      when the potential is zero),
    * the relative energy drift,
    * the multiplier-identity residual.

    The scheme is second order, so all observed orders should reach 1.8.
    """
    from .functionals import DiagnosticsEngine, compute_constants
    from .geometry import build_grid
    from .potential import WeightParams
    from .solver import Stepper, oracle_free_radial

    if config.mode != "radial3d":
        raise AnalysisError("the refinement study runs in radial mode")
    free = config.potential.is_zero
    spacings = []
    sol_err, drift_err, resid_err = [], [], []
    for factor in levels:
        h = config.h / factor
        dt = config.dt / factor
        grid = build_grid(config.obstacle, config.L, h, config.mode)
        params = WeightParams.for_grid(grid)
        constants = compute_constants(config.data, grid, config.potential, params)
        stepper = Stepper(grid, config.potential, dt)
        state = stepper.initial_state(config.data)
        engine = DiagnosticsEngine(
            grid, config.potential, params, list(config.R_list), config.epsilon, config.data
        )
        n_steps = int(math.ceil(config.T / dt - 1e-12))
        cadence = max(1, config.sample_every * factor)
        drift = 0.0
        resid = 0.0
        k = 0
        while True:
            if k % cadence == 0 or k == n_steps:
                u_next = stepper.peek(state)
                rec = engine.record(stepper.snapshot(state, u_next))
                drift = max(drift, abs(rec.E - constants.energy) / constants.energy)
                resid = max(resid, abs(rec.M_lhs - constants.multiplier - rec.flux_accum))
            else:
                u_next = None
            if k == n_steps:
                break
            state = stepper.advance(state, u_next=u_next)
            k += 1
        spacings.append(h)
        drift_err.append(drift)
        resid_err.append(resid)
        if free:
            u_ref = oracle_free_radial(config.data, state.t, grid.r, grid.rho0)
            sol_err.append(float(np.max(np.abs(state.u - u_ref))))
    out = {
        "energy_drift": observed_order(spacings, drift_err, "energy_drift"),
        "multiplier_residual": observed_order(spacings, resid_err, "multiplier_residual"),
    }
    if free:
        out["solution_error"] = observed_order(spacings, sol_err, "solution_error")
    return out
