"""Operational drivers: single runs, condition checks, grid studies, theta sweeps and golden diffs."""
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from joblib import Parallel, delayed
from scipy.interpolate import RegularGridInterpolator

from app.core.config import settings
from app.core.exceptions import (
    BoundViolationError,
    ConvergenceError,
    GMFLDError,
    InvalidParameterError,
    OutputError,
)
from app.models.fields import MeasureRole, uniform_measure
from app.models.graphon import (
    GraphonKernel,
    KernelKind,
    build_gaussian,
    build_identity,
    build_uniform,
    export_kernel,
    kernel_properties,
    load_custom,
)
from app.models.grid import Grid, make_grid
from app.models.scenario import (
    FisheryParams,
    FisheryUtility,
    RateProfiles,
    Scenario,
    coupled_utility,
    delta_profile,
    load_measure_csv,
)
from app.schemas.reports import (
    CheckReport,
    ConvergenceRow,
    ConvergenceTable,
    KernelReport,
    RegressReport,
    RegressRow,
    SolveReport,
    SweepPoint,
)
from app.schemas.run_config import CaseName, CasePreset, RunConfig, SolverConfig, expand_preset, make_preset
from app.services import io
from app.services.hjb_solver import contraction_check, monotonicity_check, solve
from app.services.logit_dynamics import (
    FlowState,
    alpha_table,
    discounted_logit_solve,
    flow,
    logit_equilibrium,
)
from app.services.mc_agents import McConfig, expected_discounted, simulate_columns

logger = structlog.get_logger()


class Dynamic(str, Enum):
    HJB = "hjb"
    DISCOUNTED_LOGIT = "discounted_logit"
    LOGIT_EQUILIBRIUM = "logit_equilibrium"


@dataclass
class RunOutcome:
    report: SolveReport
    grid: Grid
    scenario: Scenario
    p: np.ndarray
    alpha: np.ndarray
    phi: Optional[np.ndarray] = None
    pstar: Optional[np.ndarray] = None
    paths: Dict[str, Path] = field(default_factory=dict)


def build_kernel(config: RunConfig, grid: Grid) -> GraphonKernel:
    section = config.graphon
    if section.kind is KernelKind.GAUSSIAN:
        return build_gaussian(section.theta, grid)
    if section.kind is KernelKind.UNIFORM:
        return build_uniform(grid)
    if section.kind is KernelKind.IDENTITY:
        return build_identity(grid)
    return load_custom(section.path, grid, normalize=section.normalize)


def build_scenario(config: RunConfig) -> Tuple[Grid, Scenario]:
    """Materialize grid, kernel, rates, mu0 and utility from a validated config"""
    grid = make_grid(config.grid.nx, config.grid.ny)
    rates = RateProfiles(
        delta=delta_profile(config.rates.delta.kind, grid, config.rates.delta.value),
        eta=delta_profile(config.rates.eta.kind, grid, config.rates.eta.value),
    )
    if config.initial.kind == "file":
        mu0 = load_measure_csv(config.initial.path, grid, role=MeasureRole.MU0)
    else:
        mu0 = uniform_measure(grid)
    params = FisheryParams(
        c0=config.utility.c0,
        c1=config.utility.c1,
        rho=config.utility.rho,
        gamma=config.utility.gamma,
    )
    scenario = Scenario(rates=rates, mu0=mu0, utility=FisheryUtility(params=params), kernel=build_kernel(config, grid))
    return grid, scenario


def _emit(outcome: RunOutcome, config: RunConfig, out_dir: Path, prefix: str = "") -> None:
    grid, emit = outcome.grid, config.outputs.emit
    if "phi" in emit and outcome.phi is not None:
        outcome.paths["phi"] = io.write_phi(outcome.phi, grid, out_dir / f"{prefix}phi.csv")
    if "p" in emit:
        outcome.paths["p"] = io.write_measure(outcome.p, grid, out_dir / f"{prefix}p.csv")
    if "alpha" in emit:
        y, alpha, nash = alpha_table(outcome.scenario, grid, outcome.alpha)
        outcome.paths["alpha"] = io.write_alpha(y, alpha, nash, out_dir / f"{prefix}alpha.csv")
    if "report" in emit:
        outcome.paths["report"] = io.write_json(outcome.report, out_dir / f"{prefix}report.json")


def run_case(
    config: RunConfig,
    dynamic: Union[Dynamic, str] = Dynamic.HJB,
    out_dir: Optional[Union[str, Path]] = None,
    initial: Optional[np.ndarray] = None,
    with_checks: bool = True,
    write: bool = True,
) -> RunOutcome:
    """Solve one configuration and emit phi.csv, p.csv, alpha.csv and report.json.

    Files are written before a non-convergence or bound failure is raised so
    the report carries the diagnostics.
    """
    dynamic = Dynamic(dynamic)
    grid, scenario = build_scenario(config)
    solver = config.solver
    checks = check(config) if with_checks else None
    logger.info(f"Running {dynamic.value}", nx=grid.n_x, ny=grid.n_y, mode=solver.mode.value)

    if dynamic is Dynamic.HJB:
        result = solve(scenario, grid, solver, initial=initial)
        report = SolveReport(
            dynamic=dynamic.value,
            mode=result.mode.value,
            nx=grid.n_x,
            ny=grid.n_y,
            iterations=result.iters,
            final_increment=result.final_increment,
            final_residual=result.final_residual,
            converged=result.converged,
            bound=result.bound,
            checks=checks,
            config=config.model_dump(mode="json"),
        )
        outcome = RunOutcome(
            report=report, grid=grid, scenario=scenario, p=result.m.p, alpha=result.alpha,
            phi=result.phi.phi, pstar=result.pstar.p,
        )
    elif dynamic is Dynamic.DISCOUNTED_LOGIT:
        result = discounted_logit_solve(scenario, grid, tol=solver.eps, max_steps=solver.max_iter, omega=solver.omega)
        report = SolveReport(
            dynamic=dynamic.value, mode="damped_fixed_point", nx=grid.n_x, ny=grid.n_y,
            iterations=result.steps, final_residual=result.residual, converged=True,
            checks=checks, config=config.model_dump(mode="json"),
        )
        outcome = RunOutcome(report=report, grid=grid, scenario=scenario, p=result.m.p, alpha=result.alpha)
    else:
        result = logit_equilibrium(scenario, grid, tol=solver.eps, max_steps=solver.max_iter, dtau=solver.omega)
        report = SolveReport(
            dynamic=dynamic.value, mode="logit_flow", nx=grid.n_x, ny=grid.n_y,
            iterations=result.steps, final_residual=result.residual, converged=True,
            checks=checks, config=config.model_dump(mode="json"),
        )
        outcome = RunOutcome(report=report, grid=grid, scenario=scenario, p=result.p.p, alpha=result.alpha)

    if write:
        _emit(outcome, config, io.ensure_dir(out_dir or config.outputs.dir))

    if dynamic is Dynamic.HJB:
        if not report.converged:
            raise ConvergenceError(
                f"HJB solve did not converge in {report.iterations} iterations",
                diagnostics={
                    "iterations": report.iterations,
                    "final_increment": report.final_increment,
                    "final_residual": report.final_residual,
                },
            )
        if not report.bound.holds:
            raise BoundViolationError(
                f"phi leaves [min U, max U] by {report.bound.violation:.3e} (tol {report.bound.tolerance:g})"
            )
    return outcome


def run_trajectory(
    config: RunConfig,
    steps: int,
    out_dir: Optional[Union[str, Path]] = None,
    dtau: Optional[float] = None,
    record_every: int = 1,
) -> Path:
    """Integrate the classical logit flow from mu0 and write trajectory.csv"""
    grid, scenario = build_scenario(config)
    dtau = config.solver.omega if dtau is None else dtau
    state = FlowState(p=scenario.mu0.with_role(MeasureRole.MU_T))
    trajectory = flow(state, dtau, steps, scenario, grid, record_every=record_every)
    out = io.ensure_dir(out_dir or config.outputs.dir)
    return io.write_trajectory(trajectory.times, trajectory.alphas, grid, out / "trajectory.csv")


def check(
    config: RunConfig,
    ubar: Optional[float] = None,
    lipschitz_u: Optional[float] = None,
) -> CheckReport:
    """Contraction, per-type monotonicity and kernel property report.

    Defaults: U_bar = max |U~| at mu0 and L_U = L_g * h_bar.
    """
    grid, scenario = build_scenario(config)
    if ubar is None:
        ubar = float(np.max(np.abs(coupled_utility(scenario, scenario.mu0.p, grid))))
    if lipschitz_u is None:
        hbar, lipschitz_g = scenario.declared_bounds(grid)
        lipschitz_u = lipschitz_g * hbar

    props = kernel_properties(scenario.kernel, grid)
    report = CheckReport(
        contraction=contraction_check(ubar, lipschitz_u, scenario.rates),
        monotonicity=monotonicity_check(scenario, scenario.kernel, grid),
        kernel=KernelReport(kind=scenario.kernel.kind.value, theta=scenario.kernel.theta, **props),
    )
    logger.info(
        "Condition check",
        contraction=report.contraction.value,
        contraction_holds=report.contraction.holds,
        monotone=report.monotonicity.all_hold,
    )
    return report


def compare_levels(phi_coarse: np.ndarray, coarse: Grid, phi_ref: np.ndarray, ref: Grid) -> float:
    """max over coarse centres of |phi_coarse - linear interpolation of phi_ref|"""
    interpolator = RegularGridInterpolator(
        (ref.x_centers, ref.y_centers), np.asarray(phi_ref), method="linear", bounds_error=False, fill_value=None,
    )
    xx, yy = np.meshgrid(coarse.x_centers, coarse.y_centers, indexing="ij")
    values = interpolator(np.stack([xx.ravel(), yy.ravel()], axis=-1)).reshape(coarse.shape)
    return float(np.max(np.abs(np.asarray(phi_coarse) - values)))


def _solve_level(config: RunConfig, level: int) -> Dict:
    grid, scenario = build_scenario(config)
    try:
        result = solve(scenario, grid, config.solver)
    except GMFLDError as e:
        logger.error(f"Error solving level {level}: {e}")
        return {"level": level, "grid": grid, "phi": None, "iterations": None, "converged": False}
    logger.info(f"Level {level} solved", n=grid.n_x, iterations=result.iters, converged=result.converged)
    return {
        "level": level,
        "grid": grid,
        "phi": result.phi.phi,
        "iterations": result.iters,
        "converged": result.converged,
    }


def convergence_study(
    case: CasePreset,
    levels: Sequence[int],
    ref_level: int,
    base: Optional[RunConfig] = None,
    theta: float = 0.5,
    solver: Optional[SolverConfig] = None,
    allow_long_running: Optional[bool] = None,
    n_jobs: Optional[int] = None,
) -> ConvergenceTable:
    """Grid refinement table: error of each level against a finer reference and log2 rates.

    Without a base config or solver override the levels run pseudo-time at
    CONVERGE_DT, which reaches the same fixed points as the default step.
    """
    levels = sorted(set(int(level) for level in levels))
    if not levels:
        raise InvalidParameterError("convergence study needs at least one level")
    if ref_level < levels[-1]:
        raise InvalidParameterError(f"reference level {ref_level} is below level {levels[-1]}")
    allow = settings.ALLOW_LONG_RUNNING if allow_long_running is None else allow_long_running
    if ref_level >= 9 and not allow:
        raise InvalidParameterError(f"reference level {ref_level} is long-running; enable it explicitly")

    config = expand_preset(case, base=base, theta=theta)
    if solver is not None:
        config = config.updated(solver=solver)
    elif base is None:
        config = config.updated(solver={"dt": settings.CONVERGE_DT})

    wanted = sorted(set(levels) | {ref_level})
    n_jobs = settings.N_JOBS if n_jobs is None else n_jobs
    solved = Parallel(n_jobs=n_jobs)(
        delayed(_solve_level)(config.updated(grid={"nx": 2 ** level, "ny": 2 ** level}), level)
        for level in wanted
    )
    by_level = {item["level"]: item for item in solved}
    ref = by_level[ref_level]
    if ref["phi"] is None or not ref["converged"]:
        raise ConvergenceError(
            f"reference level {ref_level} did not converge",
            diagnostics={"level": ref_level, "iterations": ref["iterations"]},
        )

    rows: List[ConvergenceRow] = []
    for level in levels:
        item = by_level[level]
        ok = item["phi"] is not None and item["converged"]
        error = compare_levels(item["phi"], item["grid"], ref["phi"], ref["grid"]) if ok else None
        rows.append(ConvergenceRow(
            level=level, n=2 ** level, error=error, converged=ok, iterations=item["iterations"],
        ))

    for row, following in zip(rows, rows[1:]):
        if row.converged and following.converged and following.level == row.level + 1 \
                and row.error and following.error:
            row.rate = math.log2(row.error / following.error)

    table = ConvergenceTable(case=case.name.value, ref_level=ref_level, rows=rows)
    for row in rows:
        logger.info(f"Level {row.level}", n=row.n, error=row.error, rate=row.rate, converged=row.converged)
    return table


def _sweep_point(
    config: RunConfig,
    dynamic: Dynamic,
    theta: float,
    out_dir: Path,
    initial: Optional[np.ndarray] = None,
) -> Tuple[SweepPoint, Optional[np.ndarray]]:
    path = out_dir / f"alpha_{dynamic.value}_theta_{theta:g}.csv"
    try:
        outcome = run_case(config, dynamic, initial=initial, with_checks=False, write=False)
        y, alpha, nash = alpha_table(outcome.scenario, outcome.grid, outcome.alpha)
        io.write_alpha(y, alpha, nash, path)
    except GMFLDError as e:
        logger.error(f"Error in sweep point theta={theta} ({dynamic.value}): {e}")
        return SweepPoint(theta=theta, dynamic=dynamic.value, converged=False, error=str(e)), None
    return SweepPoint(theta=theta, dynamic=dynamic.value, converged=True, path=str(path)), outcome.phi


def sweep_theta(
    case: CasePreset,
    thetas: Sequence[float],
    out_dir: Union[str, Path],
    base: Optional[RunConfig] = None,
    warm_start: bool = False,
    n_jobs: Optional[int] = None,
) -> List[SweepPoint]:
    """One HJB and one discounted logit solve per theta; failures are flagged and the sweep continues"""
    if not thetas or any(not theta > 0 for theta in thetas):
        raise InvalidParameterError(f"thetas must be positive, got {list(thetas)}")
    out = io.ensure_dir(out_dir)
    configs = [(theta, expand_preset(case, base=base, theta=theta)) for theta in thetas]

    points: List[SweepPoint] = []
    if warm_start:
        # each HJB solve starts from the previous theta's phi
        phi = None
        for theta, config in configs:
            point, solved = _sweep_point(config, Dynamic.HJB, theta, out, initial=phi)
            phi = solved if solved is not None else phi
            points.append(point)
            points.append(_sweep_point(config, Dynamic.DISCOUNTED_LOGIT, theta, out)[0])
    else:
        n_jobs = settings.N_JOBS if n_jobs is None else n_jobs
        results = Parallel(n_jobs=n_jobs)(
            delayed(_sweep_point)(config, dynamic, theta, out)
            for theta, config in configs
            for dynamic in (Dynamic.HJB, Dynamic.DISCOUNTED_LOGIT)
        )
        points = [point for point, _ in results]

    io.write_table(points, out / "sweep.csv")
    failed = [p for p in points if not p.converged]
    logger.info("Theta sweep finished", points=len(points), failed=len(failed))
    return points


def run_mc(
    config: RunConfig,
    mc: McConfig,
    out_dir: Optional[Union[str, Path]] = None,
) -> Dict[int, float]:
    """Simulate agents against the converged p* and write mc.csv; returns per-column L1 errors"""
    outcome = run_case(config, Dynamic.HJB, with_checks=False, write=False)
    grid, scenario = outcome.grid, outcome.scenario
    histograms = simulate_columns(outcome.pstar, scenario.mu0.p, scenario.rates.delta, mc, grid)
    expected = {
        j: expected_discounted(outcome.pstar[:, j], scenario.mu0.p[:, j], float(scenario.rates.delta[j]))
        for j in histograms
    }
    out = io.ensure_dir(out_dir or config.outputs.dir)
    io.write_mc(histograms, expected, grid, out / "mc.csv")
    return {j: float(np.sum(np.abs(histograms[j] - expected[j])) * grid.dx) for j in histograms}


def export_inputs(config: RunConfig, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write the kernel (graphon.csv) and the cost curve (cost.csv) of a config"""
    grid, scenario = build_scenario(config)
    out = io.ensure_dir(out_dir)
    return {
        "graphon": export_kernel(scenario.kernel, out / "graphon.csv"),
        "cost": io.write_cost(grid, scenario.utility.params, out / "cost.csv"),
    }


def _max_diff(run: np.ndarray, golden: np.ndarray) -> float:
    both_nan = np.isnan(run) & np.isnan(golden)
    diff = np.where(both_nan, 0.0, np.abs(run - golden))
    return float(np.max(diff)) if diff.size else 0.0


def regress(run_dir: Union[str, Path], golden_dir: Union[str, Path], tol: float = 1e-9) -> RegressReport:
    """Diff every golden CSV against the file of the same name in a run directory"""
    run_dir, golden_dir = Path(run_dir), Path(golden_dir)
    goldens = sorted(golden_dir.glob("*.csv"))
    if not goldens:
        raise OutputError("No golden CSV files found", str(golden_dir))

    rows: List[RegressRow] = []
    for golden_path in goldens:
        name = golden_path.name
        run_path = run_dir / name
        if not run_path.exists():
            rows.append(RegressRow(name=name, ok=False, reason="missing from run"))
            continue
        golden = io.read_table(golden_path)
        run = io.read_table(run_path)
        if list(run.columns) != list(golden.columns) or len(run) != len(golden):
            rows.append(RegressRow(name=name, ok=False, reason="header or row count differs"))
            continue
        numeric = golden.select_dtypes(include="number").columns
        diff = _max_diff(run[numeric].to_numpy(dtype=float), golden[numeric].to_numpy(dtype=float))
        rows.append(RegressRow(name=name, max_diff=diff, ok=diff <= tol))

    report = RegressReport(tolerance=tol, rows=rows, ok=all(row.ok for row in rows))
    for row in rows:
        if not row.ok:
            logger.warning(f"Regression mismatch in {row.name}", max_diff=row.max_diff, reason=row.reason)
    return report


# pseudo-time steps that converge at golden sizes; cases B and D oscillate at larger steps
GOLDEN_DT = {CaseName.A: 0.2, CaseName.B: 0.01, CaseName.C: 0.5, CaseName.D: 0.25}


def golden_name(case: Union[CaseName, str], graphon: bool) -> str:
    return f"{CaseName(case).value}_{'graphon' if graphon else 'identity'}"


def golden_config(case: Union[CaseName, str], graphon: bool = True, n: int = 16) -> RunConfig:
    """Case preset at n x n with a tight tolerance, as used for golden result sets"""
    case = CaseName(case)
    if case not in GOLDEN_DT:
        raise InvalidParameterError(f"no golden step for case {case.value}")
    config = expand_preset(make_preset(case, graphon=graphon))
    return config.updated(
        grid={"nx": n, "ny": n},
        solver={"dt": GOLDEN_DT[case], "eps": 1e-12, "max_iter": 2_000_000},
        outputs={"emit": ["phi", "p", "alpha"]},
    )


def write_goldens(
    golden_root: Union[str, Path],
    cases: Sequence[Union[CaseName, str]] = tuple(GOLDEN_DT),
    n: int = 16,
) -> Dict[str, Path]:
    """Solve each case with and without the graphon and keep phi/p/alpha CSVs per case directory"""
    root = io.ensure_dir(golden_root)
    written: Dict[str, Path] = {}
    for case in cases:
        for graphon in (True, False):
            name = golden_name(case, graphon)
            run_case(golden_config(case, graphon, n), out_dir=root / name, with_checks=False)
            written[name] = root / name
            logger.info(f"Golden set {name} written", n=n, path=str(root / name))
    return written
