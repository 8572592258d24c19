import numpy as np
import pytest

from wavedecay.geometry import ObstacleSpec, build_grid
from wavedecay.harness import make_experiment_config, run_experiment
from wavedecay.potential import PotentialSpec
from wavedecay.solver import BumpProfile, InitialData


def quick_config(
    *,
    name="test",
    mode="radial3d",
    rho0=1.0,
    potential=None,
    u0=(2.2, 0.6, 1.0),
    u1=(2.0, 0.5, 0.8),
    r_supp=3.0,
    h=0.02,
    T=10.0,
    R=(2.0,),
    epsilon=0.1,
    sample_every=10,
    vertices=None,
    override=False,
):
    """Small experiment description for unit tests (same derivation path as
    the config-file parser)."""
    obstacle = ObstacleSpec.polygon(vertices) if vertices else ObstacleSpec.ball(rho0)
    data = InitialData(
        u0=BumpProfile(*u0) if u0 else None,
        u1=BumpProfile(*u1) if u1 else None,
        r_supp=r_supp,
    )
    return make_experiment_config(
        name=name,
        mode=mode,
        obstacle=obstacle,
        potential=potential or PotentialSpec.zero(),
        data=data,
        h=h,
        T=T,
        R_list=R,
        epsilon=epsilon,
        sample_every=sample_every,
        override_admissibility=override,
    )


@pytest.fixture(scope="session")
def ball_grid():
    return build_grid(ObstacleSpec.ball(1.0), L=10.0, h=0.01, mode="radial3d")


@pytest.fixture(scope="session")
def small_free_result():
    """Compact potential-free radial run whose pulse fully exits B_2."""
    cfg = quick_config(T=12.0, R=(2.0, 3.0, 4.0))
    return run_experiment(cfg)


@pytest.fixture(scope="session")
def small_inverse_square_result():
    """Compact admissible inverse-square run for inequality checks."""
    cfg = quick_config(potential=PotentialSpec.power(1.0, 2.0), T=12.0, R=(2.0, 3.0, 4.0))
    return run_experiment(cfg)


def assert_close(a, b, rel=1e-12, abs_tol=0.0, msg=""):
    gap = abs(a - b)
    tol = rel * max(abs(a), abs(b)) + abs_tol
    assert gap <= tol, f"{msg} |{a} - {b}| = {gap} > {tol}"
