from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from app.core.config import settings
from app.core.exceptions import InvalidMeasureError
from app.models.grid import Grid, quad_columns


class MeasureRole(str, Enum):
    """What a density field represents"""
    MU0 = "mu0"        # initial measure
    M = "m"            # discounted occupation measure
    PSTAR = "pstar"    # optimal jump kernel (logit density of phi)
    MU_T = "mu_t"      # time-dependent law


@dataclass(frozen=True)
class MeasureField:
    """Per-type probability densities p[i, j] on the action grid"""

    p: np.ndarray = field(repr=False)
    role: MeasureRole
    grid: Grid

    def __post_init__(self):
        p = np.array(self.grid.check_field(self.p, f"{self.role.value} density"), dtype=float)
        if not np.all(np.isfinite(p)):
            raise InvalidMeasureError(f"{self.role.value} density has non-finite entries")
        if np.any(p < 0.0):
            raise InvalidMeasureError(f"{self.role.value} density has negative entries (min {p.min():.3e})")
        deviation = float(np.max(np.abs(quad_columns(p, self.grid) - 1.0)))
        if deviation > settings.MASS_TOLERANCE:
            raise InvalidMeasureError(
                f"{self.role.value} column mass deviates from 1 by {deviation:.3e}"
            )
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    def column_mass(self) -> np.ndarray:
        return quad_columns(self.p, self.grid)

    def with_role(self, role: MeasureRole) -> "MeasureField":
        return MeasureField(p=self.p, role=role, grid=self.grid)


@dataclass(frozen=True)
class ValueField:
    """HJB unknown phi[i, j] in utility units"""

    phi: np.ndarray = field(repr=False)

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)


def normalize_columns(p: np.ndarray, grid: Grid) -> np.ndarray:
    """Rescale each column of a nonnegative array to unit midpoint mass"""
    p = grid.check_field(p)
    mass = quad_columns(p, grid)
    if np.any(mass <= 0.0):
        raise InvalidMeasureError("cannot normalize a column with zero mass")
    return p / mass


def uniform_measure(grid: Grid, role: MeasureRole = MeasureRole.MU0) -> MeasureField:
    """Density identically one (the most random initial condition)"""
    return MeasureField(p=np.ones(grid.shape), role=role, grid=grid)
