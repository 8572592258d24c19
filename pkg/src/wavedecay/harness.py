"""Configuration, experiment driver, output schemas, and the CLI.

Config files are line-based ``key = value`` text with INI sections and a
schema version (see ``configs/`` for the shipped experiment suite).  A
run resolves every derived quantity up front:

* dt = cfl_fraction * (mode stability cap) * h,
* the truncation radius L, chosen so that no outer-boundary reflection
  can reach ANY certified diagnostic within the horizon.  Reflections
  that merely stay outside B_R would still corrupt the global multiplier
  and weighted-energy integrals, so L is pushed to full causality
  L >= T + r_supp + margin (which implies the weaker B_R-only bound
  (T + r_supp + max R)/2 + margin), and also past the concentration cone
  (1 + eps) T.
* the 2-D weight scale B = 2 / inf|x|.

Outputs: a flat CSV series (one row per sample time; the header carries
the config hash and units) and a constants JSON; ``certify`` turns the
pair into per-inequality verdicts with exit status 0 (all hold) or 1
(first violated inequality named).
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import analysis, functionals, geometry, potential as potential_mod, solver
from .analysis import (
    DecayCertificate,
    certify_decay,
    certify_local_l2,
    check_R_independence,
    concentration_report,
)
from .functionals import (
    Constants,
    DiagnosticsEngine,
    DiagnosticsRecord,
    TimeSeries,
    compute_constants,
    multiplier_tolerance,
    validate_record,
    WEIGHTED_BOUND_SLACK,
)
from .geometry import ObstacleSpec, build_grid, check_star_shaped, grid_summary
from .potential import PotentialSpec, WeightParams, check_A2, _closed_form_worst, ADMISSIBILITY_TOL
from .solver import CFL_LIMIT, BumpProfile, InitialData, Stepper

SCHEMA_VERSION = 1
SERIES_SCHEMA = "wavedecay-series v1"
CONSTANTS_SCHEMA = "wavedecay-constants v1"
CERTIFICATE_SCHEMA = "wavedecay-certificate v1"
OUTPUT_ENV_VAR = "WAVEDECAY_OUT"

# Energy-drift ceilings used by certify.  The radial scheme holds the
# Dirichlet boundary exactly on a node and tracks the conserved discrete
# energy to O(h^2).  The masked 2-D boundary is first-order by design:
# while the wave grazes the obstacle the sampled energy wobbles by O(h)
# (it returns to O(h^2) afterwards), so its ceiling scales with h.
def energy_drift_tolerance(mode: str, h: float) -> float:
    return 1e-3 if mode == "radial3d" else 1.0 * h

BUILTIN_CONFIGS = {
    "a": "a_radial_inverse_square.cfg",
    "b": "b_radial_inverse_cube.cfg",
    "c": "c_radial_exponential.cfg",
    "d": "d_cartesian_square.cfg",
    "e": "e_radial_free.cfg",
    "f": "f_klein_gordon_control.cfg",
}


class ConfigError(ValueError):
    """Config file rejected; the message names the offending field."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment description (all derived values echoed)."""

    name: str
    mode: str
    obstacle: ObstacleSpec
    potential: PotentialSpec
    data: InitialData
    h: float
    dt: float
    T: float
    sample_every: int
    R_list: tuple[float, ...]
    epsilon: float
    L: float
    n: int
    B: float | None
    seed: int
    out_dir: str
    override_admissibility: bool
    memory_budget_mb: float

    @property
    def config_hash(self) -> str:
        return _hash_config(self)

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **kwargs)


def _hash_config(cfg: ExperimentConfig) -> str:
    parts = [
        f"mode={cfg.mode}",
        f"obstacle={cfg.obstacle.kind}:{cfg.obstacle.radius!r}:{cfg.obstacle.vertices!r}",
        f"potential={cfg.potential.kind}:{cfg.potential.amplitude!r}:{cfg.potential.exponent!r}",
        f"u0={_profile_key(cfg.data.u0)}",
        f"u1={_profile_key(cfg.data.u1)}",
        f"r_supp={cfg.data.r_supp!r}",
        f"h={cfg.h!r}",
        f"dt={cfg.dt!r}",
        f"T={cfg.T!r}",
        f"sample_every={cfg.sample_every}",
        f"R={','.join(repr(r) for r in cfg.R_list)}",
        f"epsilon={cfg.epsilon!r}",
        f"L={cfg.L!r}",
        f"seed={cfg.seed}",
    ]
    return hashlib.sha256("\n".join(parts).encode()).hexdigest()[:12]


def _profile_key(p: BumpProfile | None) -> str:
    if p is None:
        return "none"
    return f"{p.center!r},{p.width!r},{p.amplitude!r},{p.power}"


def derive_truncation_radius(T: float, r_supp: float, R_max: float, epsilon: float) -> float:
    """Smallest admissible L: full causality for all global diagnostics,
    the B_R reflection bound, and the concentration cone."""
    return max(
        (T + r_supp + R_max) / 2.0 + 2.0,
        T + r_supp + 2.0,
        (1.0 + epsilon) * T + 1.0,
    )


def _estimate_memory_mb(mode: str, L: float, h: float) -> float:
    if mode == "radial3d":
        nodes = (L / h) + 1
    else:
        nodes = (2.0 * L / h + 1) ** 2
    return 20.0 * 8.0 * nodes / 1e6


def make_experiment_config(
    *,
    name: str,
    mode: str,
    obstacle: ObstacleSpec,
    potential: PotentialSpec,
    data: InitialData,
    h: float,
    T: float,
    R_list,
    epsilon: float = 0.1,
    cfl_fraction: float = 1.0,
    sample_every: int = 10,
    seed: int = 0,
    out_dir: str | None = None,
    override_admissibility: bool = False,
    memory_budget_mb: float = 4096.0,
    enforce_admissibility: bool = True,
) -> ExperimentConfig:
    """Validate and resolve an experiment description (shared by the file
    parser and programmatic callers)."""
    if mode not in CFL_LIMIT:
        raise ConfigError(f"[domain] mode: unknown mode {mode!r}")
    if h <= 0:
        raise ConfigError("[numerics] h: must be positive")
    if not 0.0 < cfl_fraction <= 1.0:
        raise ConfigError("[numerics] cfl_fraction: must lie in (0, 1]")
    if T < 0:
        raise ConfigError("[numerics] T: must be nonnegative")
    if sample_every < 1:
        raise ConfigError("[numerics] sample_every: must be >= 1")
    R_list = tuple(float(R) for R in R_list)
    if not R_list:
        raise ConfigError("[diagnostics] R: need at least one radius")
    if epsilon <= 0:
        raise ConfigError("[diagnostics] epsilon: must be positive")
    rho0 = obstacle.circumradius
    for R in R_list:
        if R <= rho0:
            raise ConfigError(
                f"[diagnostics] R: radius {R} must exceed the obstacle circumradius {rho0}"
            )
    dt = cfl_fraction * CFL_LIMIT[mode] * h
    L = derive_truncation_radius(T, data.r_supp, max(R_list), epsilon)
    L = max(L, 2.0 * rho0 + max(1.0, 200.0 * h))
    est = _estimate_memory_mb(mode, L, h)
    if est > memory_budget_mb:
        raise ConfigError(
            f"[safety] memory_budget_mb: the causality-safe truncation radius L={L:.1f} "
            f"needs about {est:.0f} MB at h={h}, over the budget {memory_budget_mb:.0f} MB; "
            "the truncation guarantee is unsatisfiable (raise the budget, coarsen h, or shorten T)"
        )
    n = 3 if mode == "radial3d" else 2
    B = None if n == 3 else 2.0 / obstacle.inradius
    cfg = ExperimentConfig(
        name=name, mode=mode, obstacle=obstacle, potential=potential, data=data,
        h=h, dt=dt, T=T, sample_every=sample_every, R_list=R_list, epsilon=epsilon,
        L=L, n=n, B=B, seed=seed, out_dir=out_dir or f"runs/{name}",
        override_admissibility=override_admissibility, memory_budget_mb=memory_budget_mb,
    )
    if enforce_admissibility and not override_admissibility:
        worst, at_r = _closed_form_worst(potential, obstacle.inradius, L * math.sqrt(2.0))
        if worst > ADMISSIBILITY_TOL:
            raise ConfigError(
                f"[potential] {potential.label()} violates the short-range condition "
                f"(1/2) x.grad(V) + V <= 0: worst residual {worst:.3e} at |x|={at_r:g}; "
                "set [safety] override_admissibility = true to run it as a control"
            )
        star = check_star_shaped(obstacle)
        if not star.passed:
            raise ConfigError(
                f"[domain] obstacle is not star-shaped relative to the origin "
                f"(worst x.nu = {star.worst:.3e} at {star.worst_point})"
            )
    return cfg


# -- config file parsing ------------------------------------------------


def _get(cp: configparser.ConfigParser, section: str, key: str, cast, default=None):
    if not cp.has_option(section, key):
        if default is not None:
            return default
        raise ConfigError(f"[{section}] {key}: required field missing")
    raw = cp.get(section, key)
    try:
        if cast is bool:
            val = raw.strip().lower()
            if val in ("true", "yes", "1", "on"):
                return True
            if val in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        return cast(raw)
    except ValueError as err:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {cast.__name__}") from err


def _parse_floats(raw: str) -> list[float]:
    return [float(tok) for tok in raw.replace(";", ",").split(",") if tok.strip()]


def _parse_profile(raw: str) -> BumpProfile | None:
    raw = raw.strip().lower()
    if raw in ("none", "zero", ""):
        return None
    vals = _parse_floats(raw)
    if len(vals) not in (3, 4):
        raise ValueError(raw)
    power = int(vals[3]) if len(vals) == 4 else 8
    return BumpProfile(center=vals[0], width=vals[1], amplitude=vals[2], power=power)


def _parse_vertices(raw: str) -> list[tuple[float, float]]:
    pts = []
    for chunk in raw.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        x, y = (float(tok) for tok in chunk.split(","))
        pts.append((x, y))
    return pts


def config_path(name_or_path: str) -> Path:
    """Resolve 'builtin:<letter>' names to the shipped suite configs."""
    if name_or_path.startswith("builtin:"):
        key = name_or_path.split(":", 1)[1]
        if key not in BUILTIN_CONFIGS:
            raise ConfigError(f"unknown builtin config {key!r}; have {sorted(BUILTIN_CONFIGS)}")
        return Path(str(resources.files("wavedecay") / "configs" / BUILTIN_CONFIGS[key]))
    return Path(name_or_path)


def parse_config(path: str | Path, enforce_admissibility: bool = True) -> ExperimentConfig:
    """Load, validate, and resolve a config file.

    Rejects schema mismatches and admissibility failures (unless the
    config itself sets override_admissibility) with field-level messages.
    """
    path = config_path(str(path))
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.read(path)
    version = _get(cp, "experiment", "schema_version", int)
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"[experiment] schema_version: expected {SCHEMA_VERSION}, got {version}"
        )
    name = _get(cp, "experiment", "name", str, default=path.stem)

    mode = _get(cp, "domain", "mode", str)
    if mode not in CFL_LIMIT:
        raise ConfigError(f"[domain] mode: unknown mode {mode!r}")
    obstacle_kind = _get(cp, "domain", "obstacle", str)
    try:
        if obstacle_kind == "ball":
            obstacle = ObstacleSpec.ball(_get(cp, "domain", "rho0", float))
        elif obstacle_kind == "polygon":
            obstacle = ObstacleSpec.polygon(_parse_vertices(_get(cp, "domain", "vertices", str)))
        else:
            raise ConfigError(f"[domain] obstacle: unknown kind {obstacle_kind!r}")
    except geometry.DomainError as err:
        raise ConfigError(f"[domain] {err}") from err

    kind = _get(cp, "potential", "kind", str)
    try:
        if kind == "power":
            pot = PotentialSpec.power(
                _get(cp, "potential", "V0", float), _get(cp, "potential", "alpha", float)
            )
        elif kind == "exponential":
            pot = PotentialSpec.exponential(_get(cp, "potential", "V0", float))
        elif kind == "constant":
            pot = PotentialSpec.constant(_get(cp, "potential", "m2", float))
        elif kind == "zero":
            pot = PotentialSpec.zero()
        else:
            raise ConfigError(f"[potential] kind: unknown kind {kind!r}")
    except potential_mod.PotentialError as err:
        raise ConfigError(f"[potential] {err}") from err

    try:
        u0 = _parse_profile(_get(cp, "data", "u0", str, default="none"))
        u1 = _parse_profile(_get(cp, "data", "u1", str, default="none"))
    except ValueError as err:
        raise ConfigError(f"[data] u0/u1: expected 'center, width, amplitude[, power]' ({err})") from err
    r_supp = _get(cp, "data", "r_supp", float)
    seed = _get(cp, "data", "seed", int, default=0)
    randomize = _get(cp, "data", "randomize", bool, default=False)

    h = _get(cp, "numerics", "h", float)
    if h <= 0:
        raise ConfigError("[numerics] h: must be positive")
    cfl_fraction = _get(cp, "numerics", "cfl_fraction", float, default=1.0)
    if not 0.0 < cfl_fraction <= 1.0:
        raise ConfigError("[numerics] cfl_fraction: must lie in (0, 1]")
    T = _get(cp, "numerics", "T", float)
    if T < 0:
        raise ConfigError("[numerics] T: must be nonnegative")
    sample_every = _get(cp, "numerics", "sample_every", int, default=10)
    if sample_every < 1:
        raise ConfigError("[numerics] sample_every: must be >= 1")

    R_list = tuple(_parse_floats(_get(cp, "diagnostics", "R", str)))
    if not R_list:
        raise ConfigError("[diagnostics] R: need at least one radius")
    epsilon = _get(cp, "diagnostics", "epsilon", float, default=0.1)
    if epsilon <= 0:
        raise ConfigError("[diagnostics] epsilon: must be positive")

    out_dir = _get(cp, "output", "dir", str, default=f"runs/{name}")
    override = _get(cp, "safety", "override_admissibility", bool, default=False)
    budget = _get(cp, "safety", "memory_budget_mb", float, default=4096.0)

    data = InitialData(u0=u0, u1=u1, r_supp=r_supp)
    if randomize:
        data = _randomized_data(data, obstacle, h, seed)

    return make_experiment_config(
        name=name, mode=mode, obstacle=obstacle, potential=pot, data=data,
        h=h, T=T, R_list=R_list, epsilon=epsilon, cfl_fraction=cfl_fraction,
        sample_every=sample_every, seed=seed, out_dir=out_dir,
        override_admissibility=override, memory_budget_mb=budget,
        enforce_admissibility=enforce_admissibility,
    )


def _randomized_data(data: InitialData, obstacle: ObstacleSpec, h: float, seed: int) -> InitialData:
    """Jitter the bump parameters by up to 5%, staying inside the margins."""
    rng = np.random.default_rng(seed)
    lo = obstacle.circumradius + 2.0 * h

    def jitter(p: BumpProfile | None) -> BumpProfile | None:
        if p is None:
            return None
        center = p.center * (1.0 + 0.05 * rng.uniform(-1, 1))
        width = p.width * (1.0 + 0.05 * rng.uniform(-1, 1))
        amplitude = p.amplitude * (1.0 + 0.05 * rng.uniform(-1, 1))
        width = min(width, (data.r_supp - lo) / 2.0 * 0.98)
        center = min(max(center, lo + width * 1.01), data.r_supp - width * 1.01)
        return BumpProfile(center=center, width=width, amplitude=amplitude, power=p.power)

    return InitialData(u0=jitter(data.u0), u1=jitter(data.u1), r_supp=data.r_supp)


# -- running ------------------------------------------------------------


@dataclass
class RunResult:
    config: ExperimentConfig
    grid: geometry.Grid
    params: WeightParams
    constants: Constants
    series: TimeSeries
    admissibility: "potential_mod.AdmissibilityReport"
    star_shape: "geometry.StarShapeReport"


def run_experiment(cfg: ExperimentConfig, csv_path: str | Path | None = None) -> RunResult:
    """Simulate the configured experiment, sampling diagnostics on the way.

    Streams records to the CSV sink when a path is given and returns the
    in-memory series; every record is validated against the invariants
    before it is written.
    """
    grid = build_grid(cfg.obstacle, cfg.L, cfg.h, cfg.mode)
    star = check_star_shaped(cfg.obstacle)
    adm = check_A2(cfg.potential, grid)
    if not cfg.override_admissibility:
        if not adm.passed or not adm.consistent:
            raise ConfigError(f"potential {cfg.potential.label()} failed the admissibility audit")
        if not star.passed:
            raise ConfigError("obstacle failed the star-shape audit")
    params = WeightParams.for_grid(grid, B=cfg.B)
    constants = compute_constants(cfg.data, grid, cfg.potential, params)
    stepper = Stepper(grid, cfg.potential, cfg.dt)
    state = stepper.initial_state(cfg.data)
    engine = DiagnosticsEngine(grid, cfg.potential, params, list(cfg.R_list), cfg.epsilon, cfg.data)
    n_steps = max(1, int(math.ceil(cfg.T / cfg.dt - 1e-12))) if cfg.T > 0 else 0
    records: list[DiagnosticsRecord] = []
    sink = _CsvSink(csv_path, cfg, grid) if csv_path is not None else None
    try:
        k = 0
        while True:
            if k % cfg.sample_every == 0 or k == n_steps:
                u_next = stepper.peek(state)
                rec = engine.record(stepper.snapshot(state, u_next))
                validate_record(rec)
                records.append(rec)
                if sink is not None:
                    sink.write(rec)
            else:
                u_next = None
            if k == n_steps:
                break
            state = stepper.advance(state, u_next=u_next)
            k += 1
    finally:
        if sink is not None:
            sink.close()
    series = TimeSeries(
        records=records, R_list=list(cfg.R_list), epsilon=cfg.epsilon, mode=cfg.mode,
        n=cfg.n, h=cfg.h, dt=cfg.dt, T=n_steps * cfg.dt, config_hash=cfg.config_hash,
    )
    return RunResult(
        config=cfg, grid=grid, params=params, constants=constants, series=series,
        admissibility=adm, star_shape=star,
    )


# -- CSV series schema --------------------------------------------------


def _fmt_R(R: float) -> str:
    return f"{R:g}"


def series_columns(R_list) -> list[str]:
    cols = ["t", "E"]
    cols += [f"E_R{_fmt_R(R)}" for R in R_list]
    cols += [f"L2_R{_fmt_R(R)}" for R in R_list]
    cols += ["L2_total", "W", "M_lhs", "flux_accum", "Vterm_accum"]
    cols += [f"X{_fmt_R(R)}" for R in R_list]
    cols += ["A", "far_ext"]
    return cols


class _CsvSink:
    def __init__(self, path: str | Path, cfg: ExperimentConfig, grid: geometry.Grid):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self._fh = open(self.path, "w", encoding="utf-8", newline="\n")
        R_csv = ",".join(_fmt_R(R) for R in cfg.R_list)
        self._fh.write(
            f"# {SERIES_SCHEMA} config={cfg.config_hash} mode={cfg.mode} n={cfg.n} "
            f"h={cfg.h!r} dt={cfg.dt!r} T={cfg.T!r} epsilon={cfg.epsilon!r} R={R_csv} "
            "units=c=1-nondimensional(lengths,times:domain-units;energies:field-units)\n"
        )
        self._fh.write(",".join(series_columns(cfg.R_list)) + "\n")

    def write(self, rec: DiagnosticsRecord) -> None:
        vals = [rec.t, rec.E]
        vals += [rec.E_R[R] for R in self.cfg.R_list]
        vals += [rec.L2_R[R] for R in self.cfg.R_list]
        vals += [rec.L2_total, rec.W, rec.M_lhs, rec.flux_accum, rec.vterm_accum]
        vals += [rec.X[R] for R in self.cfg.R_list]
        vals += [rec.A, rec.far_ext]
        # repr of a Python float is shortest-round-trip, so values survive exactly
        self._fh.write(",".join(repr(float(v)) for v in vals) + "\n")

    def close(self) -> None:
        self._fh.close()


def read_series_csv(path: str | Path) -> TimeSeries:
    """Round-trip reader for the series schema (floats are written with
    repr, so values survive exactly)."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith(f"# {SERIES_SCHEMA}"):
            raise ConfigError(f"{path}: not a {SERIES_SCHEMA} file")
        meta = {}
        for tok in header[2 + len(SERIES_SCHEMA):].split():
            if "=" in tok:
                key, val = tok.split("=", 1)
                meta[key] = val
        columns = fh.readline().strip().split(",")
        R_list = [float(tok) for tok in meta["R"].split(",")]
        records = []
        for line in fh:
            if not line.strip():
                continue
            vals = dict(zip(columns, (float(tok) for tok in line.split(","))))
            records.append(
                DiagnosticsRecord(
                    t=vals["t"],
                    E=vals["E"],
                    E_R={R: vals[f"E_R{_fmt_R(R)}"] for R in R_list},
                    L2_R={R: vals[f"L2_R{_fmt_R(R)}"] for R in R_list},
                    L2_total=vals["L2_total"],
                    W=vals["W"],
                    M_lhs=vals["M_lhs"],
                    flux_accum=vals["flux_accum"],
                    vterm_accum=vals["Vterm_accum"],
                    X={R: vals[f"X{_fmt_R(R)}"] for R in R_list},
                    A=vals["A"],
                    far_ext=vals["far_ext"],
                )
            )
    return TimeSeries(
        records=records, R_list=R_list, epsilon=float(meta["epsilon"]), mode=meta["mode"],
        n=int(meta["n"]), h=float(meta["h"]), dt=float(meta["dt"]), T=float(meta["T"]),
        config_hash=meta["config"],
    )


# -- constants JSON schema ----------------------------------------------


def constants_payload(result: RunResult) -> dict:
    cfg = result.config
    return {
        "schema": CONSTANTS_SCHEMA,
        "config_hash": cfg.config_hash,
        "name": cfg.name,
        "mode": cfg.mode,
        "n": cfg.n,
        "h": cfg.h,
        "dt": cfg.dt,
        "T": result.series.T,
        "epsilon": cfg.epsilon,
        "R_list": list(cfg.R_list),
        "rho0": result.grid.rho0,
        "rho_min": result.grid.rho_min,
        "B": cfg.B,
        "L": result.grid.L,
        "potential": {
            "kind": cfg.potential.kind,
            "amplitude": cfg.potential.amplitude,
            "exponent": cfg.potential.exponent,
        },
        "override_admissibility": cfg.override_admissibility,
        "admissibility": result.admissibility.to_dict(),
        "star_shape": result.star_shape.to_dict(),
        "constants": result.constants.to_dict(),
    }


def write_constants_json(result: RunResult, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(constants_payload(result), indent=2) + "\n", encoding="utf-8")


def read_constants_json(path: str | Path) -> dict:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("schema") != CONSTANTS_SCHEMA:
        raise ConfigError(f"{path}: not a {CONSTANTS_SCHEMA} file")
    return payload


# -- certification ------------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    details: dict

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        brief = ", ".join(f"{k}={v}" for k, v in self.details.items())
        return f"[{status}] {self.name}" + (f"  ({brief})" if brief else "")


@dataclass(frozen=True)
class CertificationReport:
    checks: list[CheckResult]
    passed: bool
    first_violation: str | None

    def to_dict(self) -> dict:
        return {
            "schema": CERTIFICATE_SCHEMA,
            "passed": bool(self.passed),
            "first_violation": self.first_violation,
            "checks": [
                {"name": c.name, "passed": bool(c.passed), "details": _jsonable(c.details)}
                for c in self.checks
            ],
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def certify_run(series: TimeSeries, meta: dict) -> CertificationReport:
    """Run the full inequality suite on a recorded series.

    Checks, in order: energy conservation, the multiplier inequality, the
    light-cone weighted bound, the solution-norm bound, per-radius decay
    certificates, R-independence, local L2 decay (power potentials with
    alpha >= 2), and the concentration decomposition.  The first failed
    check is named in the report.
    """
    constants = Constants.from_dict(meta["constants"])
    t = series.times()
    checks: list[CheckResult] = []

    E = series.column("E")
    E0 = constants.energy
    drift = float(np.max(np.abs(E - E0)) / E0) if E0 > 0 else 0.0
    tol_drift = energy_drift_tolerance(series.mode, series.h)
    checks.append(
        CheckResult(
            "energy-conservation",
            drift <= tol_drift,
            {"max_rel_drift": f"{drift:.3e}", "tol": f"{tol_drift:.0e}"},
        )
    )

    m_noV = series.column("M_lhs") + series.column("vterm_accum")
    tol = np.array([multiplier_tolerance(ti, series.h, constants) for ti in t])
    slack = constants.multiplier + tol - m_noV
    worst_i = int(np.argmin(slack))
    checks.append(
        CheckResult(
            "multiplier-inequality",
            bool(np.all(slack >= 0.0)),
            {"worst_slack": f"{slack[worst_i]:.3e}", "at_t": f"{t[worst_i]:g}"},
        )
    )

    W = series.column("W")
    I_w = constants.weighted_energy
    w0_gap = abs(W[0] - I_w) / max(I_w, 1e-300)
    w_ok = bool(np.all(W <= I_w * (1.0 + WEIGHTED_BOUND_SLACK))) and w0_gap <= 1e-12
    w_margin = float(np.min(I_w * (1.0 + WEIGHTED_BOUND_SLACK) - W))
    checks.append(
        CheckResult(
            "weighted-energy-bound",
            w_ok,
            {"start_gap": f"{w0_gap:.2e}", "min_margin": f"{w_margin:.3e}"},
        )
    )

    denom = constants.norm_u0 + constants.norm_weighted_u1
    if denom > 0.0:
        c2 = float(np.max(np.sqrt(series.column("L2_total"))) / denom)
        checks.append(
            CheckResult(
                "solution-norm-bound",
                math.isfinite(c2),
                {"max_quotient": f"{c2:.4f}"},
            )
        )

    certs: list[DecayCertificate] = []
    decay_ok = True
    decay_details = {}
    for R in series.R_list:
        try:
            cert = certify_decay(series, constants, R)
        except analysis.AnalysisError as err:
            decay_ok = False
            decay_details[f"R={R:g}"] = f"error: {err}"
            continue
        certs.append(cert)
        decay_ok = decay_ok and cert.bound_holds
        decay_details[f"R={R:g}"] = (
            f"c_hat={cert.c_hat:.4g}, trend={cert.trend_slope:.3f}"
            if math.isfinite(cert.trend_slope)
            else f"c_hat={cert.c_hat:.4g}"
        )
    checks.append(CheckResult("local-energy-decay", decay_ok, decay_details))

    if len(certs) >= 3:
        sweep = check_R_independence(certs)
        checks.append(
            CheckResult(
                "R-independence",
                sweep.passed,
                {"ratio": f"{sweep.ratio:.3f}", "max": f"{R_RATIO_MAX_STR}"},
            )
        )

    pot = meta.get("potential", {})
    if pot.get("kind") == "power" and pot.get("exponent", 0.0) >= 2.0:
        l2cert = certify_local_l2(
            series, constants, series.R_list[0], pot["amplitude"], pot["exponent"]
        )
        checks.append(
            CheckResult(
                "local-l2-decay",
                l2cert.bound_holds,
                {"constant": f"{l2cert.constant:.4g}", "chain": l2cert.chain_holds},
            )
        )

    conc = concentration_report(
        series, constants, series.R_list[0], series.epsilon,
        certificate=certs[0] if certs else None,
    )
    checks.append(
        CheckResult(
            "energy-concentration",
            conc.partition_holds and conc.far_bound_holds and conc.shell_bound_holds,
            {
                "partition_gap": f"{conc.partition_max_gap:.2e}",
                "far_margin": f"{conc.far_bound_margin:.3e}",
            },
        )
    )

    first = next((c.name for c in checks if not c.passed), None)
    return CertificationReport(checks=checks, passed=first is None, first_violation=first)


R_RATIO_MAX_STR = f"{analysis.R_RATIO_MAX:g}"


# -- selftest -----------------------------------------------------------


def selftest(verbose: bool = True) -> bool:
    """Exact-identity suites: eikonal weight, star-shape verdicts,
    admissibility examples, the free-wave oracle, and the t = 0 constants
    identities.  Everything here has a closed-form expected value."""
    from .potential import eikonal_residuals, weight_dn

    ok = True

    def report(name: str, passed: bool, detail: str = ""):
        nonlocal ok
        ok = ok and passed
        if verbose:
            print(f"[{'PASS' if passed else 'FAIL'}] selftest: {name}" + (f"  ({detail})" if detail else ""))

    rng = np.random.default_rng(20240811)
    n_pts = 1_000_000
    t_s = rng.uniform(0.0, 50.0, n_pts)
    pts = rng.uniform(-40.0, 40.0, (n_pts, 3))
    pts[np.linalg.norm(pts, axis=1) < 1e-6] += 1.0
    res, psi_t = eikonal_residuals(t_s, pts)
    report(
        "eikonal residual == 0 at 1e6 random points",
        bool(np.max(np.abs(res)) <= 1e-14),
        f"max |residual| = {np.max(np.abs(res)):.2e}",
    )
    report("psi_t < 0 for t > 0", bool(np.all(psi_t[t_s > 0] < 0.0)))

    ball = ObstacleSpec.ball(1.0)
    square = ObstacleSpec.polygon([(1, -1), (1, 1), (-1, 1), (-1, -1)])
    notched = ObstacleSpec.polygon(
        [(2, -2), (2, -0.25), (0.5, -0.25), (0.5, 0.25), (2, 0.25), (2, 2), (-2, 2), (-2, -2)]
    )
    rb = check_star_shaped(ball)
    report("ball is star-shaped with x.nu = -rho0", rb.passed and abs(rb.worst + 1.0) <= 1e-12)
    report("square is star-shaped", check_star_shaped(square).passed)
    rn = check_star_shaped(notched)
    report("notched polygon fails star-shape", (not rn.passed) and rn.worst > 0.0)

    grid = build_grid(ball, L=12.0, h=0.02, mode="radial3d")
    report("inverse-square potential is admissible", check_A2(PotentialSpec.power(1.0, 2.0), grid).passed)
    report("massive constant potential fails", not check_A2(PotentialSpec.constant(1.0), grid).passed)
    report("alpha=1.5 power fails", not check_A2(PotentialSpec.power(1.0, 1.5), grid).passed)
    grid2 = build_grid(ObstacleSpec.ball(2.0), L=12.0, h=0.02, mode="radial3d")
    report("exponential outside ball(2) is admissible", check_A2(PotentialSpec.exponential(1.0), grid2).passed)

    params = WeightParams(n=2, B=2.0)
    report("d_2 weight at B|x|=2 equals log 2", abs(weight_dn(params, 1.0) - math.log(2.0)) <= 1e-15)

    data = InitialData(
        u0=BumpProfile(center=2.2, width=0.6, amplitude=1.0),
        u1=BumpProfile(center=2.0, width=0.5, amplitude=0.8),
        r_supp=3.0,
    )
    free = PotentialSpec.zero()
    g = build_grid(ball, L=8.0, h=0.02, mode="radial3d")
    stepper = Stepper(g, free, 0.9 * 0.02)
    state = stepper.initial_state(data)
    t_cmp = 0.0
    u_ref = solver.oracle_free_radial(data, t_cmp, g.r, g.rho0)
    report(
        "oracle reproduces the initial data at t=0",
        bool(np.max(np.abs(u_ref - state.u)) <= 1e-14),
    )
    steps = int(round(2.0 / stepper.dt))
    for _ in range(steps):
        state = stepper.advance(state)
    u_ref = solver.oracle_free_radial(data, state.t, g.r, g.rho0)
    err = float(np.max(np.abs(state.u - u_ref)))
    report("solver tracks the free-wave oracle at t=2", err <= 5e-3, f"sup error {err:.2e}")

    wp = WeightParams.for_grid(g)
    consts = compute_constants(data, g, free, wp)
    engine = DiagnosticsEngine(g, free, wp, [2.0], 0.1, data)
    state0 = stepper.initial_state(data)
    rec0 = engine.record(stepper.snapshot(state0))
    report(
        "t=0 weighted energy equals the weighted initial constant",
        abs(rec0.W - consts.weighted_energy) <= 1e-12 * max(consts.weighted_energy, 1.0),
        f"gap {abs(rec0.W - consts.weighted_energy):.2e}",
    )
    report(
        "t=0 multiplier functional equals its initial constant",
        abs(rec0.M_lhs - consts.multiplier) <= 1e-12 * max(abs(consts.multiplier), 1.0),
        f"gap {abs(rec0.M_lhs - consts.multiplier):.2e}",
    )
    return ok


# -- CLI ----------------------------------------------------------------


def _resolve_out_dir(cfg: ExperimentConfig, cli_out: str | None) -> Path:
    if cli_out:
        return Path(cli_out)
    env = os.environ.get(OUTPUT_ENV_VAR)
    if env:
        return Path(env) / cfg.name
    return Path(cfg.out_dir)


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    out = _resolve_out_dir(cfg, args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_experiment(cfg, csv_path=out / "series.csv")
    write_constants_json(result, out / "constants.json")
    (out / "grid.json").write_text(
        json.dumps(_jsonable(grid_summary(result.grid, result.star_shape)), indent=2) + "\n",
        encoding="utf-8",
    )
    print(f"wrote {out / 'series.csv'}")
    print(f"wrote {out / 'constants.json'}")
    print(f"wrote {out / 'grid.json'}")
    return 0


def _cmd_check_potential(args) -> int:
    cfg = parse_config(args.config, enforce_admissibility=False)
    grid = build_grid(cfg.obstacle, cfg.L, cfg.h, cfg.mode)
    report = check_A2(cfg.potential, grid)
    print(json.dumps(_jsonable(report.to_dict()), indent=2))
    return 0 if report.passed else 1


def _cmd_check_domain(args) -> int:
    cfg = parse_config(args.config, enforce_admissibility=False)
    grid = build_grid(cfg.obstacle, cfg.L, cfg.h, cfg.mode)
    star = check_star_shaped(cfg.obstacle)
    print(json.dumps(_jsonable(grid_summary(grid, star)), indent=2))
    return 0 if star.passed else 1


def _cmd_sweep(args) -> int:
    cfg = parse_config(args.config)
    radii = tuple(float(R) for R in args.R)
    cfg = cfg.with_overrides(R_list=radii, L=derive_truncation_radius(
        cfg.T, cfg.data.r_supp, max(radii), cfg.epsilon))
    out = _resolve_out_dir(cfg, args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_experiment(cfg, csv_path=out / "series.csv")
    write_constants_json(result, out / "constants.json")
    certs = [certify_decay(result.series, result.constants, R) for R in radii]
    sweep = check_R_independence(certs)
    payload = {
        "schema": CERTIFICATE_SCHEMA,
        "config_hash": cfg.config_hash,
        "R_sweep": sweep.to_dict(),
        "certificates": [c.to_dict() for c in certs],
    }
    (out / "sweep.json").write_text(json.dumps(_jsonable(payload), indent=2) + "\n", encoding="utf-8")
    for cert in certs:
        print(
            f"R={cert.R:g}: c_hat={cert.c_hat:.4g} trend={cert.trend_slope:+.3f} "
            f"bound_holds={cert.bound_holds}"
        )
    print(f"R-independence ratio {sweep.ratio:.3f} -> {'PASS' if sweep.passed else 'FAIL'}")
    print(f"wrote {out / 'sweep.json'}")
    return 0 if sweep.passed and all(c.bound_holds for c in certs) else 1


def _cmd_fit(args) -> int:
    series = read_series_csv(args.series)
    t = series.times()
    out = {"schema": "wavedecay-fit v1", "config_hash": series.config_hash, "fits": {}}
    for R in series.R_list:
        er = series.keyed_column("E_R", R)
        window = t >= 2.0 * R
        tw, ew = t[window], er[window]
        if tw.size < 6:
            out["fits"][_fmt_R(R)] = {"error": "window too short"}
            continue
        t1, t0 = tw[-1], tw[0]
        half = tw >= t1 - (t1 - t0) / 2.0
        slope = analysis._loglog_slope(tw[half] - R, ew[half])
        out["fits"][_fmt_R(R)] = {
            "rate_slope": slope,
            "max_scaled_tail": float(np.max((tw - R) * ew)),
        }
    print(json.dumps(_jsonable(out), indent=2))
    return 0


def _cmd_certify(args) -> int:
    series = read_series_csv(args.series)
    meta = read_constants_json(args.constants)
    if meta["config_hash"] != series.config_hash:
        print(
            f"error: series config hash {series.config_hash} does not match "
            f"constants {meta['config_hash']}",
            file=sys.stderr,
        )
        return 2
    report = certify_run(series, meta)
    for check in report.checks:
        print(check.line())
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
        print(f"wrote {out}")
    if report.passed:
        print("certification: all inequalities hold")
        return 0
    print(f"certification: FAILED, first violated inequality: {report.first_violation}")
    return 1


def _cmd_selftest(args) -> int:
    return 0 if selftest(verbose=True) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wavedecay",
        description="Exterior-domain wave simulation and decay-estimate certification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a config and emit series.csv + constants.json")
    p.add_argument("config", help="config file path or builtin:<a..f>")
    p.add_argument("--out", help="output directory (default: config [output] dir)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("check-potential", help="print the admissibility report as JSON")
    p.add_argument("config")
    p.set_defaults(func=_cmd_check_potential)

    p = sub.add_parser("check-domain", help="print the grid summary and star-shape report")
    p.add_argument("config")
    p.set_defaults(func=_cmd_check_domain)

    p = sub.add_parser("sweep", help="run once and certify decay across observation radii")
    p.add_argument("config")
    p.add_argument("--R", nargs="+", required=True, help="observation radii, e.g. --R 2 3 4")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("fit", help="fit tail decay slopes from a recorded series")
    p.add_argument("series")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("certify", help="run the inequality suite on a recorded series")
    p.add_argument("series")
    p.add_argument("constants")
    p.add_argument("--out", help="write the certificate JSON here")
    p.set_defaults(func=_cmd_certify)

    p = sub.add_parser("selftest", help="exact-identity suites (closed-form expectations)")
    p.set_defaults(func=_cmd_selftest)
    return parser


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return 2 if err.code not in (0,) else 0
    try:
        return args.func(args)
    except (ConfigError, geometry.DomainError, potential_mod.PotentialError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (solver.CFLError, solver.DataSupportError, analysis.AnalysisError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except functionals.FunctionalError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())
