"""Discretized HJB system: residual, fixed-point iteration and condition checkers.

The HJB unknown phi couples to the occupation measure
    m = delta/(delta+1) mu0 + 1/(delta+1) p*,   p* = softmax(eta phi)/dx  (per column)
through the graphon utility U~ = convolve(u(alpha(m)), W). All exponentials of
eta * phi go through column log-sum-exp with max shift.
"""
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import structlog
from scipy.special import logsumexp, softmax, xlogy

from app.core.config import settings
from app.core.exceptions import DimensionMismatchError, DivergenceError, InvalidParameterError
from app.models.fields import MeasureField, MeasureRole, ValueField
from app.models.graphon import GraphonKernel, KernelKind
from app.models.grid import Grid, quad_x
from app.models.scenario import RateProfiles, Scenario, coupled_utility
from app.schemas.reports import (
    BoundReport,
    ContractionReport,
    MonotonicityReport,
    MonotonicityRow,
)
from app.schemas.run_config import SolverConfig, SolverMode

logger = structlog.get_logger()


def logit_density(phi_col: np.ndarray, eta: float, grid: Grid) -> np.ndarray:
    """p*_i = exp(eta phi_i) / sum_k exp(eta phi_k) dx for one type column"""
    if not eta > 0:
        raise InvalidParameterError(f"eta must be positive, got {eta}")
    phi_col = np.asarray(phi_col, dtype=float)
    if phi_col.shape != (grid.n_x,):
        raise DimensionMismatchError(f"column has shape {phi_col.shape}, grid has {grid.n_x} actions")
    return softmax(eta * phi_col) / grid.dx


def column_lse(phi: np.ndarray, eta: np.ndarray, grid: Grid) -> np.ndarray:
    """lse_j = ln(sum_k exp(eta_j phi[k, j]) dx), max-shifted"""
    return logsumexp(phi * eta[None, :], axis=0, b=grid.dx)


def pstar_density(phi: np.ndarray, eta: np.ndarray, grid: Grid, lse: Optional[np.ndarray] = None) -> np.ndarray:
    """Logit density of every column of phi"""
    if lse is None:
        lse = column_lse(phi, eta, grid)
    return np.exp(phi * eta[None, :] - lse[None, :])


def occupation_density(pstar: np.ndarray, scenario: Scenario) -> np.ndarray:
    rates = scenario.rates
    return rates.mu0_weight[None, :] * scenario.mu0.p + rates.logit_weight[None, :] * pstar


def compute_pstar(phi: ValueField, scenario: Scenario, grid: Grid) -> MeasureField:
    phi_arr = grid.check_field(phi.phi, "phi")
    return MeasureField(p=pstar_density(phi_arr, scenario.rates.eta, grid), role=MeasureRole.PSTAR, grid=grid)


def compute_m(phi: ValueField, scenario: Scenario, grid: Grid) -> MeasureField:
    """Occupation measure m as the weighted mean of mu0 and the logit density of phi"""
    phi_arr = grid.check_field(phi.phi, "phi")
    pstar = pstar_density(phi_arr, scenario.rates.eta, grid)
    return MeasureField(p=occupation_density(pstar, scenario), role=MeasureRole.M, grid=grid)


@dataclass
class ResidualParts:
    g: np.ndarray
    u_tilde: np.ndarray
    m: np.ndarray
    pstar: np.ndarray


def _residual_parts(
    phi: np.ndarray,
    scenario: Scenario,
    grid: Grid,
    u_tilde: Optional[np.ndarray] = None,
) -> ResidualParts:
    rates = scenario.rates
    lse = column_lse(phi, rates.eta, grid)
    pstar = np.exp(phi * rates.eta[None, :] - lse[None, :])
    m = occupation_density(pstar, scenario)
    if u_tilde is None:
        u_tilde = coupled_utility(scenario, m, grid, occupation=True)
    # ln(sum_k exp(eta (phi_k - phi_i)) dx) = lse_j - eta_j phi_ij
    log_part = (lse[None, :] - rates.eta[None, :] * phi) / (rates.delta * rates.eta)[None, :]
    return ResidualParts(g=phi - u_tilde - log_part, u_tilde=u_tilde, m=m, pstar=pstar)


def hjb_residual(
    phi: ValueField,
    scenario: Scenario,
    grid: Grid,
    u_tilde: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Discretized HJB residual G[phi]; ``u_tilde`` freezes the coupled utility"""
    phi_arr = grid.check_field(phi.phi, "phi")
    if not np.all(np.isfinite(phi_arr)):
        raise InvalidParameterError("phi has non-finite entries")
    if u_tilde is not None:
        u_tilde = grid.check_field(u_tilde, "frozen utility")
    return _residual_parts(phi_arr, scenario, grid, u_tilde).g


@dataclass
class SolveResult:
    phi: ValueField
    m: MeasureField
    pstar: MeasureField
    alpha: np.ndarray
    u_tilde: np.ndarray
    iters: int
    final_increment: float
    final_residual: float
    converged: bool
    mode: SolverMode
    bound: BoundReport


class HJBSolver:
    """Fixed-point iteration for the discretized HJB system"""

    def __init__(self, scenario: Scenario, grid: Grid, config: Optional[SolverConfig] = None):
        self.scenario = scenario
        self.grid = grid
        self.config = config or SolverConfig()
        delta = scenario.rates.delta
        if self.config.mode is SolverMode.PSEUDO_TIME:
            self.step_weights = (delta * self.config.dt)[None, :]
        else:
            self.step_weights = np.full((1, grid.n_y), self.config.omega)

    def step(self, phi: np.ndarray, g: np.ndarray) -> np.ndarray:
        """One update. pseudo_time: phi - delta_j dt G; damped_picard: (1-w) phi + w (phi - G)"""
        if self.config.mode is SolverMode.PSEUDO_TIME:
            return phi - self.step_weights * g
        omega = self.config.omega
        return (1.0 - omega) * phi + omega * (phi - g)

    def solve(self, initial: Optional[np.ndarray] = None) -> SolveResult:
        grid, config = self.grid, self.config
        phi = np.zeros(grid.shape) if initial is None else np.array(grid.check_field(initial, "initial phi"))
        if not np.all(np.isfinite(phi)):
            raise DivergenceError("initial phi has non-finite entries", iteration=0)

        logger.info(
            "Starting HJB solve",
            mode=config.mode.value, nx=grid.n_x, ny=grid.n_y,
            dt=config.dt, eps=config.eps, max_iter=config.max_iter,
        )

        increment = float("inf")
        converged = False
        iteration = 0
        while iteration < config.max_iter:
            g = _residual_parts(phi, self.scenario, grid).g
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite residual at iterate {iteration}", iteration=iteration)
            phi_next = self.step(phi, g)
            if not np.all(np.isfinite(phi_next)):
                raise DivergenceError(f"non-finite iterate {iteration + 1}", iteration=iteration + 1)

            increment = float(np.max(np.abs(phi_next - phi)))
            phi = phi_next
            iteration += 1

            if increment <= config.eps:
                converged = True
                break
            if iteration % settings.PROGRESS_EVERY == 0:
                logger.debug("HJB progress", iteration=iteration, increment=increment)

        parts = _residual_parts(phi, self.scenario, grid)
        residual = float(np.max(np.abs(parts.g)))
        bound = bound_check(phi, parts.u_tilde, self.scenario.rates)

        if converged:
            logger.info(
                f"HJB solve converged in {iteration} iterations",
                final_increment=increment, final_residual=residual, bound_holds=bound.holds,
            )
        else:
            logger.warning(
                f"HJB solve stopped at max_iter={config.max_iter} without converging",
                final_increment=increment, final_residual=residual,
            )

        m = MeasureField(p=parts.m, role=MeasureRole.M, grid=grid)
        return SolveResult(
            phi=ValueField(phi),
            m=m,
            pstar=MeasureField(p=parts.pstar, role=MeasureRole.PSTAR, grid=grid),
            alpha=self.scenario.aggregate(m.p, grid),
            u_tilde=parts.u_tilde,
            iters=iteration,
            final_increment=increment,
            final_residual=residual,
            converged=converged,
            mode=config.mode,
            bound=bound,
        )


def solve(
    scenario: Scenario,
    grid: Grid,
    config: Optional[SolverConfig] = None,
    initial: Optional[np.ndarray] = None,
) -> SolveResult:
    """Run the HJB iteration from phi = 0 (or a warm start)"""
    return HJBSolver(scenario, grid, config).solve(initial=initial)


def bound_check(
    phi: np.ndarray,
    u_tilde: np.ndarray,
    rates: RateProfiles,
    tol: Optional[float] = None,
) -> BoundReport:
    """Discrete min/max principle min U~ <= phi <= max U~, plus the literal checks when U~ >= 0"""
    tol = settings.BOUND_TOLERANCE if tol is None else tol
    phi = np.asarray(phi, dtype=float)
    min_u, max_u = float(np.min(u_tilde)), float(np.max(u_tilde))
    min_phi, max_phi = float(np.min(phi)), float(np.max(phi))
    violation = max(0.0, max_phi - max_u, min_u - min_phi)

    report = BoundReport(
        tolerance=tol,
        min_u=min_u,
        max_u=max_u,
        min_phi=min_phi,
        max_phi=max_phi,
        violation=violation,
        holds=violation <= tol,
        nonnegative_utility=min_u >= 0.0,
    )
    if report.nonnegative_utility:
        delta_min, delta_max = rates.delta_bounds
        a_priori = delta_max / delta_min * max_u
        report.literal_holds = bool(min_phi >= -tol and max_phi <= max_u + tol)
        report.a_priori_bound = a_priori
        report.a_priori_holds = bool(min_phi >= -tol and max_phi <= a_priori + tol)
    return report


def contraction_check(ubar: float, lipschitz_u: float, rates: RateProfiles) -> ContractionReport:
    """Sufficient contraction condition of the continuous HJB map"""
    if ubar < 0 or lipschitz_u < 0:
        raise InvalidParameterError("ubar and lipschitz_u must be nonnegative")
    delta_min, delta_max = rates.delta_bounds
    eta_max = rates.eta_bounds[1]
    ratio = delta_max / delta_min
    value = (
        2.0 * eta_max * lipschitz_u / (delta_min + 1.0) * np.exp(2.0 * eta_max * ratio * ubar)
        + (1.0 + np.exp(eta_max * ratio * ubar)) / delta_min
    )
    value = float(value)
    return ContractionReport(value=value, holds=0.0 < value < 1.0, ubar=ubar, lipschitz_u=lipschitz_u)


def monotonicity_check(scenario: Scenario, kernel: GraphonKernel, grid: Grid) -> MonotonicityReport:
    """Per-type scheme monotonicity condition (h_bar/(delta_j+1)) L_g eta_j w_jj dy <= 1/delta_j"""
    hbar, lipschitz_g = scenario.declared_bounds(grid)
    rates = scenario.rates
    diagonal = np.diag(kernel.w)
    lhs = hbar / (rates.delta + 1.0) * lipschitz_g * rates.eta * diagonal * grid.dy
    rhs = 1.0 / rates.delta

    rows: List[MonotonicityRow] = [
        MonotonicityRow(j=j + 1, lhs=float(lhs[j]), rhs=float(rhs[j]), holds=bool(lhs[j] <= rhs[j]))
        for j in range(grid.n_y)
    ]
    off_diagonal = kernel.w - np.diag(diagonal)
    cross = kernel.kind is not KernelKind.IDENTITY and bool(np.any(off_diagonal != 0.0))
    note = None
    if cross:
        note = ("kernel couples distinct types: the operator need not be "
                "non-increasing in unknowns of other types even where a row holds")
    return MonotonicityReport(
        hbar=hbar,
        lipschitz_g=lipschitz_g,
        rows=rows,
        all_hold=all(row.holds for row in rows),
        cross_type_coupling=cross,
        note=note,
    )


def regularized_objective(q: np.ndarray, phi_col: np.ndarray, i: int, eta: float, grid: Grid) -> float:
    """Entropy-regularized objective quad(q (phi - phi_i)) - (1/eta) quad(q ln q)"""
    q = np.asarray(q, dtype=float)
    phi_col = np.asarray(phi_col, dtype=float)
    gain_part = quad_x(q * (phi_col - phi_col[i]), grid)
    entropy = quad_x(xlogy(q, q), grid)
    return gain_part - entropy / eta


def log_term(phi_col: np.ndarray, i: int, eta: float, grid: Grid) -> float:
    """(1/eta) ln(sum_k exp(eta (phi_k - phi_i)) dx), the maximum of the regularized objective"""
    phi_col = np.asarray(phi_col, dtype=float)
    return float(logsumexp(eta * (phi_col - phi_col[i]), b=grid.dx)) / eta


def oscillation(phi: np.ndarray) -> float:
    phi = np.asarray(phi, dtype=float)
    return float(phi.max() - phi.min())


def large_delta_gap(phi: np.ndarray, u0: np.ndarray) -> float:
    """sup |phi - U~_0| with U~_0 the coupled utility evaluated at mu0"""
    return float(np.max(np.abs(np.asarray(phi) - np.asarray(u0))))
