"""Numerical laboratory for waves outside a star-shaped obstacle with a
nonnegative short-range potential.

The package simulates u_tt - Lap(u) + V(x) u = 0 with homogeneous
Dirichlet data on the obstacle and empirically certifies the estimates
that hold under the star-shape and short-range assumptions: energy
conservation, the multiplier (Morawetz-type) inequality, a light-cone
weighted energy bound, and O(1/(t - R)) local energy decay with a
constant independent of the observation radius R.
"""

from .analysis import (
    ConcentrationReport,
    ConvergenceStudy,
    DecayCertificate,
    L2Certificate,
    SweepVerdict,
    certify_decay,
    certify_local_l2,
    check_R_independence,
    check_resolution_stability,
    concentration_report,
    observed_order,
)
from .functionals import (
    Constants,
    DiagnosticsEngine,
    DiagnosticsRecord,
    TimeSeries,
    compute_constants,
    local_energy,
    morawetz_lhs,
    morawetz_residual,
    pointwise_energy,
    total_energy,
    weighted_energy,
)
from .geometry import (
    Grid,
    ObstacleSpec,
    Region,
    StarShapeReport,
    build_grid,
    check_star_shaped,
    grid_summary,
    integrate,
)
from .harness import (
    CertificationReport,
    ExperimentConfig,
    RunResult,
    certify_run,
    cli,
    parse_config,
    read_series_csv,
    run_experiment,
    selftest,
)
from .potential import (
    AdmissibilityReport,
    PotentialSpec,
    WeightParams,
    check_A2,
    check_eikonal,
    eval_V,
    weight_dn,
    weight_psi,
)
from .solver import (
    BumpProfile,
    InitialData,
    Snapshot,
    Stepper,
    WaveState,
    init_state,
    oracle_free_radial,
    step,
)

__version__ = "0.1.0"
