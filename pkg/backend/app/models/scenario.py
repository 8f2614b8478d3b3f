"""Utility model, heterogeneous rates and initial measure.

Two local-utility forms are supported: the fishery instance (gain minus
harvesting cost, both linear in the action) and a general ``g``/``h`` form.
Both are driven by one per-type aggregate computed from the current measure,
so the solvers never branch on the utility kind.
"""
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Tuple, Union

import numpy as np
import pandas as pd
import structlog

from app.core.exceptions import (
    DimensionMismatchError,
    InvalidMeasureError,
    InvalidParameterError,
    MissingBoundsError,
    OutputError,
)
from app.models.fields import MeasureField, MeasureRole, normalize_columns
from app.models.graphon import GraphonKernel, convolve
from app.models.grid import Grid, quad_columns

logger = structlog.get_logger()


class ProfileKind(str, Enum):
    """Per-type rate profile shapes"""
    CONSTANT = "constant"
    LINEAR_R = "linear_R"   # 0.005 + 0.095 (1 - y): longer perspective upstream
    LINEAR_M = "linear_M"   # 0.005 + 0.095 y: longer perspective downstream


@dataclass(frozen=True)
class RateProfiles:
    """Discount rates delta_j and regularization parameters eta_j per type cell"""

    delta: np.ndarray = field(repr=False)
    eta: np.ndarray = field(repr=False)

    def __post_init__(self):
        delta = np.array(self.delta, dtype=float).reshape(-1)
        eta = np.array(self.eta, dtype=float).reshape(-1)
        if delta.shape != eta.shape:
            raise DimensionMismatchError(f"delta has {delta.size} entries, eta has {eta.size}")
        for name, arr in (("delta", delta), ("eta", eta)):
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
                raise InvalidParameterError(f"{name} must be positive and finite everywhere")
        delta.setflags(write=False)
        eta.setflags(write=False)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "eta", eta)

    @property
    def delta_bounds(self) -> Tuple[float, float]:
        return float(self.delta.min()), float(self.delta.max())

    @property
    def eta_bounds(self) -> Tuple[float, float]:
        return float(self.eta.min()), float(self.eta.max())

    @property
    def mu0_weight(self) -> np.ndarray:
        """delta_j / (delta_j + 1), the initial-condition share of the occupation measure"""
        return self.delta / (self.delta + 1.0)

    @property
    def logit_weight(self) -> np.ndarray:
        """1 / (delta_j + 1), the logit share of the occupation measure"""
        return 1.0 / (self.delta + 1.0)


def constant_rates(grid: Grid, delta: float, eta: float) -> RateProfiles:
    return RateProfiles(delta=np.full(grid.n_y, float(delta)), eta=np.full(grid.n_y, float(eta)))


def delta_profile(kind: Union[ProfileKind, str], grid: Grid, value: Optional[float] = None) -> np.ndarray:
    """Evaluate a rate profile at the type cell centres"""
    kind = ProfileKind(kind)
    y = grid.y_centers
    if kind is ProfileKind.CONSTANT:
        if value is None or not value > 0:
            raise InvalidParameterError(f"constant profile needs a positive value, got {value}")
        return np.full(grid.n_y, float(value))
    if kind is ProfileKind.LINEAR_R:
        return 0.005 + 0.095 * (1.0 - y)
    return 0.005 + 0.095 * y


@dataclass(frozen=True)
class FisheryParams:
    """Cost curve and gain regularization of the fishery utility"""

    c0: float = float(np.sqrt(2.0))
    c1: float = float(np.sqrt(10.0))
    rho: float = 0.05
    gamma: float = 1e-9

    def __post_init__(self):
        if not (self.c0 >= 0 and self.c1 >= 0):
            raise InvalidParameterError(f"costs must be nonnegative, got c0={self.c0}, c1={self.c1}")
        if not self.rho > 0:
            raise InvalidParameterError(f"rho must be positive, got {self.rho}")
        if not self.gamma >= 0:
            raise InvalidParameterError(f"gamma must be nonnegative, got {self.gamma}")


def cost(y, params: FisheryParams):
    """Harvesting cost c(y) with a tanh transition across y = 1/2"""
    y = np.asarray(y, dtype=float)
    value = params.c0 + 0.5 * (params.c1 - params.c0) * (1.0 + np.tanh(params.rho * (y - 0.5)))
    return float(value) if value.ndim == 0 else value


def gain(alpha, params: FisheryParams):
    """Catch gain A(alpha) = 1 / sqrt(alpha + gamma)"""
    shifted = np.asarray(alpha, dtype=float) + params.gamma
    if np.any(shifted <= 0.0):
        raise InvalidParameterError("gain undefined: alpha + gamma must be positive")
    value = 1.0 / np.sqrt(shifted)
    return float(value) if value.ndim == 0 else value


def gain_lipschitz(alpha_min: float, params: FisheryParams) -> float:
    """Lipschitz constant of the gain on [alpha_min, inf)"""
    shifted = alpha_min + params.gamma
    if shifted <= 0.0:
        raise InvalidParameterError("gain Lipschitz bound needs alpha_min + gamma > 0")
    return 0.5 * shifted ** -1.5


def alpha_from_measure(m: Union[MeasureField, np.ndarray], grid: Grid) -> np.ndarray:
    """Mean action per type: alpha_j = sum_i x_i p[i, j] dx"""
    p = m.p if isinstance(m, MeasureField) else grid.check_field(m)
    return quad_columns(grid.x_centers[:, None] * p, grid)


@dataclass(frozen=True)
class FisheryUtility:
    """u(x, y, m) = x (A(alpha_y) - c(y))"""

    params: FisheryParams = field(default_factory=FisheryParams)

    # h(q) = q on [0, 1]
    hbar: float = 1.0


@dataclass(frozen=True)
class GeneralUtility:
    """u_{i,l} = g(x_i, y_l, v_l) with v_l = 1/(delta_l + 1) sum_k h(x_k) p*_{k,l} dx.

    ``g`` and ``h`` must accept numpy arrays and broadcast; the Lipschitz
    constants and bounds are declared by the caller, never inferred.
    """

    g: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray]
    lipschitz_g: Optional[float] = None
    lipschitz_h: Optional[float] = None
    ubar: Optional[float] = None
    hbar: Optional[float] = None


Utility = Union[FisheryUtility, GeneralUtility]


@dataclass(frozen=True)
class Scenario:
    rates: RateProfiles
    mu0: MeasureField
    utility: Utility
    kernel: GraphonKernel

    def __post_init__(self):
        n_y = self.mu0.grid.n_y
        if self.rates.delta.size != n_y or self.kernel.n_y != n_y:
            raise DimensionMismatchError(
                f"rates ({self.rates.delta.size}), kernel ({self.kernel.n_y}) and mu0 ({n_y}) disagree on n_y"
            )

    @property
    def is_fishery(self) -> bool:
        return isinstance(self.utility, FisheryUtility)

    def mu0_aggregate(self, grid: Grid) -> np.ndarray:
        """Integral of the aggregate integrand (x or h) against mu0"""
        return quad_columns(self._integrand(grid)[:, None] * self.mu0.p, grid)

    def _integrand(self, grid: Grid) -> np.ndarray:
        if self.is_fishery:
            return grid.x_centers
        return np.broadcast_to(np.asarray(self.utility.h(grid.x_centers), dtype=float), (grid.n_x,))

    def aggregate(self, p: np.ndarray, grid: Grid, occupation: bool = False) -> np.ndarray:
        """Per-type argument of the local utility for a measure with density p.

        Fishery: alpha_j = sum_i x_i p[i, j] dx. General: the logit share
        sum_i h(x_i) p[i, j] dx - delta_j/(delta_j + 1) sum_i h(x_i) mu0[i, j] dx,
        which equals v_j whenever p is the occupation measure built from p*.
        With ``occupation=True`` the fishery mean action is asserted to stay
        above its initial-measure floor delta_j/(delta_j + 1) * mean(mu0_j).
        """
        if self.is_fishery:
            alpha = alpha_from_measure(p, grid)
            if occupation:
                floor = self.rates.mu0_weight * self.mu0_aggregate(grid)
                if np.any(alpha < floor * (1.0 - 1e-9)):
                    raise InvalidMeasureError("mean action fell below the initial-measure floor")
            return alpha
        total = quad_columns(self._integrand(grid)[:, None] * grid.check_field(p), grid)
        return total - self.rates.mu0_weight * self.mu0_aggregate(grid)

    def declared_bounds(self, grid: Grid) -> Tuple[float, float]:
        """(h_bar, L_g) used by the scheme monotonicity checker"""
        if self.is_fishery:
            floor = float(np.min(self.rates.mu0_weight * self.mu0_aggregate(grid)))
            return self.utility.hbar, gain_lipschitz(floor, self.utility.params)
        if self.utility.hbar is None or self.utility.lipschitz_g is None:
            raise MissingBoundsError("general utility must declare hbar and lipschitz_g")
        return float(self.utility.hbar), float(self.utility.lipschitz_g)


def local_utility(scenario: Scenario, alpha: np.ndarray, grid: Grid) -> np.ndarray:
    """Local utility u[i, j] for per-type aggregate alpha (v for the general form)"""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (grid.n_y,):
        raise DimensionMismatchError(f"aggregate has shape {alpha.shape}, grid has {grid.n_y} types")
    x = grid.x_centers[:, None]
    if scenario.is_fishery:
        params = scenario.utility.params
        margin = gain(alpha, params) - cost(grid.y_centers, params)
        return x * np.asarray(margin)[None, :]
    u = scenario.utility.g(x, grid.y_centers[None, :], alpha[None, :])
    return np.array(np.broadcast_to(np.asarray(u, dtype=float), grid.shape))


def coupled_utility(scenario: Scenario, p: np.ndarray, grid: Grid, occupation: bool = False) -> np.ndarray:
    """Graphon utility U~ = convolve(local utility at the aggregate of p)"""
    alpha = scenario.aggregate(p, grid, occupation=occupation)
    return convolve(local_utility(scenario, alpha, grid), scenario.kernel, grid)


def load_measure_csv(path: Union[str, Path], grid: Grid, role: MeasureRole = MeasureRole.MU0) -> MeasureField:
    """Load densities from ``x,y,p`` rows (j outer, i inner) and renormalize per column"""
    path = Path(path)
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as e:
        raise OutputError(f"Cannot read measure CSV ({e})", str(path)) from e

    if list(frame.columns) != ["x", "y", "p"]:
        raise InvalidParameterError(f"measure CSV header must be x,y,p, got {list(frame.columns)}")
    if len(frame) != grid.n_x * grid.n_y:
        raise DimensionMismatchError(f"measure CSV has {len(frame)} rows, grid needs {grid.n_x * grid.n_y}")
    grid.check_coordinates(frame["x"].to_numpy(), frame["y"].to_numpy(), f"measure CSV {path}")

    p = frame["p"].to_numpy(dtype=float).reshape(grid.n_y, grid.n_x).T
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise InvalidMeasureError("measure CSV densities must be finite and nonnegative")

    logger.info(f"Loaded measure from {path}", rows=len(frame))
    return MeasureField(p=normalize_columns(p, grid), role=role, grid=grid)
