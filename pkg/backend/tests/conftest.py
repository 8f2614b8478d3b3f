import numpy as np
import pytest
import structlog

from app.models.fields import uniform_measure
from app.models.graphon import build_gaussian, build_identity
from app.models.grid import make_grid
from app.models.scenario import (
    FisheryParams,
    FisheryUtility,
    GeneralUtility,
    Scenario,
    constant_rates,
)
from app.schemas.run_config import (
    GridSection,
    OutputsSection,
    RunConfig,
    SolverConfig,
    SolverMode,
    expand_preset,
    make_preset,
)


@pytest.fixture(autouse=True)
def _restore_structlog_config():
    # setup_logging() binds structlog to the current sys.stderr, which under
    # capsys is a per-test stream closed at teardown; restore the global config.
    saved = structlog.get_config()
    yield
    structlog.configure(**saved)


# Stable step sizes per case: pseudo_time dt and damped_picard omega.
# Small-delta, large-eta cases need small steps for the oscillating modes.
PSEUDO_DT = {"A": 0.2, "B": 0.01, "C": 0.5, "D": 0.25, "R": 0.1, "M": 0.1}
PICARD_OMEGA = {"A": 0.1, "B": 0.004, "C": 0.004, "D": 0.002}


def fishery_scenario(grid, delta, eta, theta=None, params=None):
    kernel = build_identity(grid) if theta is None else build_gaussian(theta, grid)
    return Scenario(
        rates=constant_rates(grid, delta, eta),
        mu0=uniform_measure(grid),
        utility=FisheryUtility(params=params or FisheryParams()),
        kernel=kernel,
    )


def frozen_scenario(grid, u, delta=1.0, eta=1.0, **bounds):
    """General utility that ignores the measure: U~ = u under the identity kernel"""
    u = np.asarray(u, dtype=float)
    utility = GeneralUtility(g=lambda x, y, v: u + 0.0 * v, h=lambda x: x, **bounds)
    return Scenario(
        rates=constant_rates(grid, delta, eta),
        mu0=uniform_measure(grid),
        utility=utility,
        kernel=build_identity(grid),
    )


def case_config(name, n, graphon=True, mode=SolverMode.PSEUDO_TIME, eps=1e-12, out_dir="results"):
    solver = SolverConfig(
        dt=PSEUDO_DT[name],
        omega=PICARD_OMEGA.get(name, 0.5),
        eps=eps,
        max_iter=2_000_000,
        mode=mode,
    )
    config = expand_preset(make_preset(name, graphon=graphon))
    return config.updated(grid=GridSection(nx=n, ny=n), solver=solver, outputs=OutputsSection(dir=str(out_dir)))


@pytest.fixture
def grid4():
    return make_grid(4, 4)


@pytest.fixture
def grid2x1():
    return make_grid(2, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


@pytest.fixture
def small_config(tmp_path):
    """Case A, no graphon, 8 x 8: converges in well under a second"""
    return case_config("A", 8, graphon=False, eps=1e-11, out_dir=tmp_path)


@pytest.fixture
def base_config():
    return RunConfig()
