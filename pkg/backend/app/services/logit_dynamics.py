"""Companion dynamics: classical logit flow, discounted logit fixed point, Nash reference."""
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
import structlog
from scipy.special import softmax

from app.core.exceptions import ConvergenceError, InvalidParameterError
from app.models.fields import MeasureField, MeasureRole
from app.models.grid import Grid
from app.models.scenario import FisheryParams, Scenario, cost, coupled_utility

logger = structlog.get_logger()


@dataclass
class FlowState:
    p: MeasureField
    t: float = 0.0


@dataclass
class EquilibriumResult:
    p: MeasureField
    residual: float
    steps: int
    alpha: np.ndarray


@dataclass
class DiscountedLogitResult:
    m: MeasureField
    residual: float
    steps: int
    alpha: np.ndarray


@dataclass
class Trajectory:
    state: FlowState
    times: List[float] = field(default_factory=list)
    alphas: List[np.ndarray] = field(default_factory=list)


def _density(m: Union[MeasureField, np.ndarray], grid: Grid) -> np.ndarray:
    return m.p if isinstance(m, MeasureField) else grid.check_field(m)


def logit_columns(u_tilde: np.ndarray, eta: np.ndarray, grid: Grid) -> np.ndarray:
    """Column-wise logit density exp(eta_j U~) / sum_k exp(eta_j U~_k) dx"""
    return softmax(u_tilde * eta[None, :], axis=0) / grid.dx


def logit_map(
    m: Union[MeasureField, np.ndarray],
    scenario: Scenario,
    grid: Grid,
    u_tilde: Optional[np.ndarray] = None,
) -> MeasureField:
    """Logit function of the graphon utility at measure m; ``u_tilde`` freezes the utility"""
    if u_tilde is None:
        u_tilde = coupled_utility(scenario, _density(m, grid), grid)
    else:
        u_tilde = grid.check_field(u_tilde, "frozen utility")
    return MeasureField(p=logit_columns(u_tilde, scenario.rates.eta, grid), role=MeasureRole.MU_T, grid=grid)


def flow_step(
    state: FlowState,
    dtau: float,
    scenario: Scenario,
    grid: Grid,
    u_tilde: Optional[np.ndarray] = None,
) -> FlowState:
    """Explicit Euler step of d mu/dt = L[mu] - mu; a convex combination for dtau <= 1"""
    if not 0.0 < dtau <= 1.0:
        raise InvalidParameterError(f"dtau must lie in (0, 1], got {dtau}")
    target = logit_map(state.p, scenario, grid, u_tilde=u_tilde).p
    p = (1.0 - dtau) * state.p.p + dtau * target
    return FlowState(p=MeasureField(p=p, role=MeasureRole.MU_T, grid=grid), t=state.t + dtau)


def flow(
    state: FlowState,
    dtau: float,
    steps: int,
    scenario: Scenario,
    grid: Grid,
    record_every: int = 1,
) -> Trajectory:
    """Integrate the logit dynamic and record (t, alpha) snapshots"""
    trajectory = Trajectory(state=state)
    trajectory.times.append(state.t)
    trajectory.alphas.append(scenario.aggregate(state.p.p, grid))
    for step in range(1, steps + 1):
        state = flow_step(state, dtau, scenario, grid)
        if step % record_every == 0 or step == steps:
            trajectory.times.append(state.t)
            trajectory.alphas.append(scenario.aggregate(state.p.p, grid))
    trajectory.state = state
    return trajectory


def logit_equilibrium(
    scenario: Scenario,
    grid: Grid,
    tol: float = 1e-10,
    max_steps: int = 100_000,
    dtau: float = 0.5,
    initial: Optional[MeasureField] = None,
    u_tilde: Optional[np.ndarray] = None,
) -> EquilibriumResult:
    """Run the logit flow from mu0 until max |L[p] - p| <= tol"""
    if not tol > 0:
        raise InvalidParameterError(f"tol must be positive, got {tol}")
    state = FlowState(p=(initial or scenario.mu0).with_role(MeasureRole.MU_T))

    residual = float("inf")
    for step in range(max_steps + 1):
        target = logit_map(state.p, scenario, grid, u_tilde=u_tilde)
        residual = float(np.max(np.abs(target.p - state.p.p)))
        if residual <= tol:
            logger.info(f"Logit equilibrium reached after {step} steps", residual=residual)
            return EquilibriumResult(
                p=state.p, residual=residual, steps=step,
                alpha=scenario.aggregate(state.p.p, grid),
            )
        if step == max_steps:
            break
        p = (1.0 - dtau) * state.p.p + dtau * target.p
        state = FlowState(p=MeasureField(p=p, role=MeasureRole.MU_T, grid=grid), t=state.t + dtau)

    logger.warning(f"Logit equilibrium not reached in {max_steps} steps", residual=residual)
    raise ConvergenceError(
        f"logit equilibrium not reached in {max_steps} steps",
        diagnostics={"residual": residual, "steps": max_steps},
    )


def discounted_logit_solve(
    scenario: Scenario,
    grid: Grid,
    tol: float = 1e-10,
    max_steps: int = 100_000,
    omega: float = 0.5,
    u_tilde: Optional[np.ndarray] = None,
) -> DiscountedLogitResult:
    """Damped fixed-point iteration for m = delta/(delta+1) mu0 + 1/(delta+1) L[U~(m)]"""
    if not tol > 0:
        raise InvalidParameterError(f"tol must be positive, got {tol}")
    if not 0.0 < omega <= 1.0:
        raise InvalidParameterError(f"omega must lie in (0, 1], got {omega}")

    rates = scenario.rates
    mu0 = scenario.mu0.p
    m = mu0.copy()
    frozen = None if u_tilde is None else grid.check_field(u_tilde, "frozen utility")

    residual = float("inf")
    for step in range(max_steps + 1):
        utility = frozen if frozen is not None else coupled_utility(scenario, m, grid, occupation=True)
        image = rates.mu0_weight[None, :] * mu0 + rates.logit_weight[None, :] * logit_columns(utility, rates.eta, grid)
        if not np.all(np.isfinite(image)):
            raise ConvergenceError(f"discounted logit iterate {step} is not finite", diagnostics={"steps": step})
        residual = float(np.max(np.abs(image - m)))
        if residual <= tol:
            logger.info(f"Discounted logit fixed point reached after {step} steps", residual=residual)
            field_m = MeasureField(p=m, role=MeasureRole.M, grid=grid)
            return DiscountedLogitResult(m=field_m, residual=residual, steps=step, alpha=scenario.aggregate(m, grid))
        if step == max_steps:
            break
        m = (1.0 - omega) * m + omega * image

    logger.warning(f"Discounted logit not converged in {max_steps} steps", residual=residual)
    raise ConvergenceError(
        f"discounted logit not converged in {max_steps} steps",
        diagnostics={"residual": residual, "steps": max_steps},
    )


def quasi_potential(alpha, c: float):
    """2 sqrt(alpha) - c alpha, maximized by Nash mean actions"""
    alpha = np.asarray(alpha, dtype=float)
    return 2.0 * np.sqrt(alpha) - c * alpha


def nash_alpha(y, params: FisheryParams):
    """Nash mean action min(1/c(y)^2, 1), the maximizer of the quasi-potential on [0, 1]"""
    c = np.asarray(cost(y, params), dtype=float)
    if np.any(c <= 0):
        raise InvalidParameterError("nash_alpha needs a positive cost")
    value = np.minimum(1.0 / c ** 2, 1.0)
    return float(value) if value.ndim == 0 else value


def nash_alpha_for_cost(c: float) -> float:
    if not c > 0:
        raise InvalidParameterError("nash_alpha needs a positive cost")
    return min(1.0 / c ** 2, 1.0)


def l1_distance(p: np.ndarray, q: np.ndarray, grid: Grid) -> np.ndarray:
    """Per-column L1 distance sum_i |p - q| dx"""
    return np.add.reduce(np.abs(np.asarray(p) - np.asarray(q)) * grid.dx, axis=0)


def alpha_table(scenario: Scenario, grid: Grid, alpha: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(y, alpha, alpha_nash) columns for alpha.csv; Nash column is NaN for general utilities"""
    if scenario.is_fishery:
        nash = np.asarray(nash_alpha(grid.y_centers, scenario.utility.params))
    else:
        nash = np.full(grid.n_y, np.nan)
    return grid.y_centers, np.asarray(alpha), nash
